//! Per-iteration measurements: streaming KL divergence, phase wall times and
//! retained-object counts.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pipeline::{effective_perplexity, EmbeddingState, ProjectionReport};
use crate::tsne::{joint_affinities, kl_divergence, low_dim_affinities};
use crate::{Error, HighDimPoint, LowDimPoint, Result};

pub const CSV_HEADER: &str = "t,kld,embed_ms,pedrul_ms,hull_ms,ecs_ms,anchors,hull_vertices,cuts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub t: u64,
    pub kld: Option<f64>,
    pub embed_ms: f64,
    pub pedrul_ms: f64,
    pub hull_ms: f64,
    pub ecs_ms: f64,
    pub anchors: usize,
    pub hull_vertices: usize,
    pub cuts: usize,
}

impl IterationMetrics {
    /// Anchors plus hull vertices.
    pub fn retained(&self) -> usize {
        self.anchors + self.hull_vertices
    }

    /// Metrics of a projection that has just been applied to `state`.
    pub fn from_projection(state: &EmbeddingState, report: &ProjectionReport) -> Self {
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        Self {
            t: report.t,
            kld: streaming_kld(state, &report.batch, &report.batch_embedding),
            embed_ms: ms(report.times.embed),
            pedrul_ms: ms(report.times.pedrul),
            hull_ms: ms(report.times.hull),
            ecs_ms: ms(report.times.ecs),
            anchors: state.anchors().len(),
            hull_vertices: state.hull_vertex_count(),
            cuts: report.cuts.len(),
        }
    }
}

/// KL divergence between input and output affinities over the anchors and
/// the batch. Absent when fewer than four distinct points are available or
/// the affinities cannot be calibrated.
pub fn streaming_kld(state: &EmbeddingState, batch: &[HighDimPoint], batch_low: &[LowDimPoint]) -> Option<f64> {
    let anchors = state.anchors();
    let mut seen = HashSet::new();
    let mut high = Vec::with_capacity(anchors.len() + batch.len());
    let mut low = Vec::with_capacity(high.capacity());
    let pairs = anchors.high().iter().zip(anchors.low()).chain(batch.iter().zip(batch_low));
    for (h, l) in pairs {
        if seen.insert(h.id) {
            high.push(h.clone());
            low.push(*l);
        }
    }
    kld_of(&high, &low, state.config().perplexity)
}

/// KL divergence of a layout, with the perplexity capped as in a fit.
pub fn kld_of(high: &[HighDimPoint], low: &[LowDimPoint], perplexity: f64) -> Option<f64> {
    if high.len() < 4 || high.len() != low.len() {
        return None;
    }
    let p = joint_affinities(high, effective_perplexity(perplexity, high.len())).ok()?;
    let q = low_dim_affinities(low).ok()?;
    kl_divergence(&p, &q).ok().filter(|k| k.is_finite())
}

/// Append-only metric series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsCollector {
    series: Vec<IterationMetrics>,
}

impl MetricsCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, m: IterationMetrics) -> Result<()> {
        if let Some(last) = self.series.last() {
            if m.t <= last.t {
                return Err(Error::Contract(format!("iteration {} recorded after {}", m.t, last.t)));
            }
        }
        self.series.push(m);
        Ok(())
    }

    pub fn series(&self) -> &[IterationMetrics] {
        &self.series
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// CSV text. With `timing` off the wall-time columns are left empty so
    /// that repeated runs produce identical files.
    pub fn to_csv(&self, timing: bool) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for m in &self.series {
            let kld = m.kld.map(|k| k.to_string()).unwrap_or_default();
            let ms = |v: f64| if timing { format!("{v:.3}") } else { String::new() };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                m.t,
                kld,
                ms(m.embed_ms),
                ms(m.pedrul_ms),
                ms(m.hull_ms),
                ms(m.ecs_ms),
                m.anchors,
                m.hull_vertices,
                m.cuts
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path, timing: bool) -> Result<()> {
        std::fs::write(path, self.to_csv(timing))?;
        Ok(())
    }
}

/// Least-squares slope of `ys` against `xs`. `None` for fewer than two
/// distinct x values.
pub fn linear_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..n {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    (sxx > 0.0).then(|| sxy / sxx)
}
