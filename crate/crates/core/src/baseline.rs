//! Reference runner that refits t-SNE on everything seen so far after the
//! opening slice and then every batch. Cost grows quadratically, so it
//! refuses to go past a point cap.

use std::time::Instant;

use crate::metrics::IterationMetrics;
use crate::pipeline::RunConfig;
use crate::tsne::fit;
use crate::{Error, HighDimPoint, Result};

pub const DEFAULT_CAP: usize = 20_000;

#[derive(Debug, Clone)]
pub struct BaselineRunner {
    config: RunConfig,
    cap: usize,
    seen: Vec<HighDimPoint>,
    since_last: usize,
    t: u64,
}

impl BaselineRunner {
    pub fn new(config: RunConfig, cap: usize) -> Result<Self> {
        config.validate()?;
        if let Some(total) = config.expected_total {
            if total > cap {
                return Err(Error::Config(format!(
                    "full refits of {total} points exceed the cap of {cap}"
                )));
            }
        }
        Ok(Self { config, cap, seen: Vec::new(), since_last: 0, t: 0 })
    }

    pub fn seen(&self) -> usize {
        self.seen.len()
    }

    pub fn ingest(&mut self, point: HighDimPoint) -> Result<Option<IterationMetrics>> {
        if let Some(first) = self.seen.first() {
            if first.dim() != point.dim() {
                return Err(Error::DimensionMismatch { expected: first.dim(), found: point.dim() });
            }
        }
        if self.seen.len() == self.cap {
            return Err(Error::Config(format!("full refits beyond {} points are refused", self.cap)));
        }
        self.seen.push(point);
        self.since_last += 1;
        let trigger = if self.t == 0 { self.config.opening_size() } else { self.config.batch_size };
        if self.since_last >= trigger {
            self.reproject().map(Some)
        } else {
            Ok(None)
        }
    }

    /// Refits once more if points arrived since the last refit.
    pub fn flush(&mut self) -> Result<Option<IterationMetrics>> {
        if self.since_last == 0 || self.seen.len() < 4 {
            return Ok(None);
        }
        self.reproject().map(Some)
    }

    fn reproject(&mut self) -> Result<IterationMetrics> {
        let clock = Instant::now();
        let params = self.config.fit_params(self.seen.len(), self.config.seed.wrapping_add(self.t));
        let out = fit(&self.seen, &params)?;
        let embed_ms = clock.elapsed().as_secs_f64() * 1e3;
        self.t += 1;
        self.since_last = 0;
        Ok(IterationMetrics {
            t: self.t,
            kld: Some(out.final_kl),
            embed_ms,
            pedrul_ms: 0.0,
            hull_ms: 0.0,
            ecs_ms: 0.0,
            anchors: self.seen.len(),
            hull_vertices: 0,
            cuts: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_above_cap() {
        let config = RunConfig { expected_total: Some(30_000), ..RunConfig::default() };
        assert!(matches!(BaselineRunner::new(config, DEFAULT_CAP), Err(Error::Config(_))));
    }

    #[test]
    fn cap_also_applies_to_unannounced_streams() {
        let config = RunConfig { batch_size: 4, fit_early_iters: 5, fit_optimization_iters: 5, ..RunConfig::default() };
        let mut runner = BaselineRunner::new(config, 6).unwrap();
        for i in 0..6 {
            runner.ingest(HighDimPoint::new(i, vec![i as f64, (i * i) as f64])).unwrap();
        }
        assert!(runner.ingest(HighDimPoint::new(6, vec![0.0, 1.0])).is_err());
    }
}
