//! Partial embedding: place a new batch into an existing layout using only
//! the conditional affinities between new points and the fixed anchors.

use serde::{Deserialize, Serialize};

use crate::tsne::{calibrate_row, common_dim, sq_dist, Q_FLOOR};
use crate::{Error, HighDimPoint, LowDimPoint, Result};

/// Retained points with paired high- and low-dimensional coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorSet {
    high: Vec<HighDimPoint>,
    low: Vec<LowDimPoint>,
}

impl AnchorSet {
    pub fn new(high: Vec<HighDimPoint>, low: Vec<LowDimPoint>) -> Result<Self> {
        if high.len() != low.len() {
            return Err(Error::Contract(format!(
                "{} high points but {} low points",
                high.len(),
                low.len()
            )));
        }
        if let Some((h, l)) = high.iter().zip(&low).find(|(h, l)| h.id != l.source_id) {
            return Err(Error::Contract(format!(
                "anchor misaligned: high id {} vs low id {}",
                h.id, l.source_id
            )));
        }
        Ok(Self { high, low })
    }

    pub fn len(&self) -> usize {
        self.high.len()
    }

    pub fn is_empty(&self) -> bool {
        self.high.is_empty()
    }

    pub fn high(&self) -> &[HighDimPoint] {
        &self.high
    }

    pub fn low(&self) -> &[LowDimPoint] {
        &self.low
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.high.iter().map(|p| p.id)
    }

    /// Keeps the anchors for which `keep(index)` is true.
    pub fn retain_indices(&mut self, mut keep: impl FnMut(usize) -> bool) {
        let flags: Vec<bool> = (0..self.len()).map(&mut keep).collect();
        let mut it = flags.iter();
        self.high.retain(|_| *it.next().unwrap());
        let mut it = flags.iter();
        self.low.retain(|_| *it.next().unwrap());
    }
}

/// Row-stochastic affinities from each batch point to every anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAffinities {
    batch_ids: Vec<u64>,
    anchors: usize,
    values: Vec<f64>,
}

impl CrossAffinities {
    pub fn rows(&self) -> usize {
        self.batch_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.anchors
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.anchors..(i + 1) * self.anchors]
    }

    pub fn batch_ids(&self) -> &[u64] {
        &self.batch_ids
    }
}

/// Calibrates one Gaussian row per batch point against all anchors.
///
/// No batch-to-batch affinities are computed. A perplexity above `A - 1` is
/// clamped with a warning.
pub fn cross_affinities(
    batch: &[HighDimPoint],
    anchors: &AnchorSet,
    perplexity: f64,
) -> Result<CrossAffinities> {
    if anchors.is_empty() {
        return Err(Error::State(
            "no anchors to embed against; run a full fit first".into(),
        ));
    }
    let a = anchors.len();
    if a < 2 {
        return Err(Error::State(format!("partial embedding needs >= 2 anchors, have {a}")));
    }
    let dim = common_dim(anchors.high())?;
    if let Some(p) = batch.iter().find(|p| p.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: p.dim() });
    }
    let max_perplexity = (a - 1) as f64;
    let perplexity = if perplexity > max_perplexity {
        log::warn!("perplexity {perplexity} clamped to {max_perplexity} for {a} anchors");
        max_perplexity
    } else {
        perplexity
    };

    let mut values = Vec::with_capacity(batch.len() * a);
    let mut row = vec![0.0; a];
    for p in batch {
        for (d, anchor) in row.iter_mut().zip(anchors.high()) {
            *d = sq_dist(&p.coords, &anchor.coords);
        }
        let cal = match calibrate_row(&row, None, perplexity) {
            // A batch point sitting on every anchor at once: spread evenly.
            Err(Error::DegenerateRow { .. }) => vec![1.0 / a as f64; a],
            other => other?.probs,
        };
        values.extend_from_slice(&cal);
    }
    Ok(CrossAffinities {
        batch_ids: batch.iter().map(|p| p.id).collect(),
        anchors: a,
        values,
    })
}

/// Affinity-weighted mean of the anchor positions, one per batch point.
pub fn init_positions(cross: &CrossAffinities, anchors: &AnchorSet) -> Result<Vec<LowDimPoint>> {
    if cross.cols() != anchors.len() {
        return Err(Error::Config("cross affinities do not match anchor set".into()));
    }
    Ok((0..cross.rows())
        .map(|i| {
            let mut pos = [0.0; 2];
            for (w, a) in cross.row(i).iter().zip(anchors.low()) {
                pos[0] += w * a.coords[0];
                pos[1] += w * a.coords[1];
            }
            LowDimPoint::new(cross.batch_ids[i], pos)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialParams {
    pub iters: usize,
    pub learning_rate: f64,
}

impl Default for PartialParams {
    fn default() -> Self {
        Self { iters: 100, learning_rate: 200.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialOutput {
    pub embedding: Vec<LowDimPoint>,
    pub initial_objective: f64,
    pub final_objective: f64,
}

/// KL between the cross affinities (normalized over all new-anchor pairs)
/// and the Student-t kernel between new positions and anchors.
pub fn partial_objective(
    positions: &[[f64; 2]],
    anchors: &AnchorSet,
    cross: &CrossAffinities,
) -> f64 {
    let b = cross.rows() as f64;
    let mut z = 0.0;
    for y in positions {
        for a in anchors.low() {
            z += kernel(*y, a.coords);
        }
    }
    let mut kl = 0.0;
    for (i, y) in positions.iter().enumerate() {
        for (c, a) in cross.row(i).iter().zip(anchors.low()) {
            let p = c / b;
            if p > 0.0 {
                let q = (kernel(*y, a.coords) / z).max(Q_FLOOR);
                kl += p * (p / q).ln();
            }
        }
    }
    kl.max(0.0)
}

/// Gradient of [`partial_objective`] with respect to the new positions.
pub fn partial_gradient(
    positions: &[[f64; 2]],
    anchors: &AnchorSet,
    cross: &CrossAffinities,
) -> Vec<[f64; 2]> {
    let b = cross.rows() as f64;
    let mut z = 0.0;
    for y in positions {
        for a in anchors.low() {
            z += kernel(*y, a.coords);
        }
    }
    positions
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let mut g = [0.0; 2];
            for (c, a) in cross.row(i).iter().zip(anchors.low()) {
                let w = kernel(*y, a.coords);
                let f = 2.0 * (c / b - w / z) * w;
                g[0] += f * (y[0] - a.coords[0]);
                g[1] += f * (y[1] - a.coords[1]);
            }
            g
        })
        .collect()
}

#[inline]
fn kernel(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    1.0 / (1.0 + dx * dx + dy * dy)
}

/// Gradient descent on the new positions only; anchors are read-only.
///
/// A step that would raise the objective is halved until it does not, so
/// the objective never increases across iterations.
pub fn optimize_partial(
    init: &[LowDimPoint],
    anchors: &AnchorSet,
    cross: &CrossAffinities,
    params: &PartialParams,
) -> Result<PartialOutput> {
    if init.len() != cross.rows() || cross.cols() != anchors.len() {
        return Err(Error::Config("inconsistent sizes for partial optimization".into()));
    }
    if !(params.learning_rate > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let mut y: Vec<[f64; 2]> = init.iter().map(|p| p.coords).collect();
    let mut objective = partial_objective(&y, anchors, cross);
    let initial_objective = objective;
    let mut step = params.learning_rate;
    let mut candidate = y.clone();

    for iteration in 0..params.iters {
        let grad = partial_gradient(&y, anchors, cross);
        if grad.iter().any(|g| !(g[0].is_finite() && g[1].is_finite())) {
            return Err(Error::Divergence { iteration });
        }
        loop {
            for ((c, yi), g) in candidate.iter_mut().zip(&y).zip(&grad) {
                c[0] = yi[0] - step * g[0];
                c[1] = yi[1] - step * g[1];
            }
            let f = partial_objective(&candidate, anchors, cross);
            if !f.is_finite() {
                return Err(Error::Divergence { iteration });
            }
            if f <= objective {
                std::mem::swap(&mut y, &mut candidate);
                objective = f;
                step = (step * 2.0).min(params.learning_rate);
                break;
            }
            step *= 0.5;
            if step < params.learning_rate * 1e-12 {
                break;
            }
        }
    }

    Ok(PartialOutput {
        embedding: init
            .iter()
            .zip(&y)
            .map(|(p, c)| LowDimPoint::new(p.source_id, *c))
            .collect(),
        initial_objective,
        final_objective: objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn anchors_from(high: &[Vec<f64>], low: &[[f64; 2]]) -> AnchorSet {
        AnchorSet::new(
            high.iter().enumerate().map(|(i, c)| HighDimPoint::new(i as u64, c.clone())).collect(),
            low.iter().enumerate().map(|(i, c)| LowDimPoint::new(i as u64, *c)).collect(),
        )
        .unwrap()
    }

    fn random_instance(b: usize, a: usize, seed: u64) -> (Vec<HighDimPoint>, AnchorSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let high: Vec<Vec<f64>> = (0..a).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let low: Vec<[f64; 2]> = (0..a).map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]).collect();
        let batch = (0..b)
            .map(|i| HighDimPoint::new(100 + i as u64, (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        (batch, anchors_from(&high, &low))
    }

    #[test]
    fn anchor_set_checks_alignment() {
        let high = vec![HighDimPoint::new(1, vec![0.0])];
        let low = vec![LowDimPoint::new(2, [0.0, 0.0])];
        assert!(AnchorSet::new(high, low).is_err());
    }

    #[test]
    fn empty_anchor_set_is_a_state_error() {
        let batch = vec![HighDimPoint::new(0, vec![0.0])];
        let err = cross_affinities(&batch, &AnchorSet::default(), 2.0).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn coincident_anchor_dominates_row() {
        let anchors = anchors_from(
            &[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, 3.0]],
            &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [3.0, 3.0]],
        );
        let batch = vec![HighDimPoint::new(9, vec![3.0, 3.0])];
        let cross = cross_affinities(&batch, &anchors, 1.5).unwrap();
        let row = cross.row(0);
        let argmax = (0..4).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(argmax, 3);
    }

    #[test]
    fn equidistant_anchors_split_evenly() {
        let anchors = anchors_from(&[vec![-1.0], vec![1.0]], &[[0.0, 0.0], [1.0, 0.0]]);
        let cross = cross_affinities(&[HighDimPoint::new(5, vec![0.0])], &anchors, 2.0).unwrap();
        assert_eq!(cross.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn perplexity_is_clamped_to_anchor_count() {
        let anchors = anchors_from(&[vec![-1.0], vec![1.0], vec![4.0]], &[[0.0, 0.0]; 3]);
        let cross = cross_affinities(&[HighDimPoint::new(5, vec![0.3])], &anchors, 30.0).unwrap();
        assert!((cross.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rows_match_calibrate_row() {
        let (batch, anchors) = random_instance(5, 8, 1);
        let cross = cross_affinities(&batch, &anchors, 3.0).unwrap();
        for (i, p) in batch.iter().enumerate() {
            let d: Vec<f64> = anchors.high().iter().map(|a| sq_dist(&p.coords, &a.coords)).collect();
            let expected = calibrate_row(&d, None, 3.0).unwrap().probs;
            assert_eq!(cross.row(i), expected.as_slice());
            assert!((cross.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn init_positions_cases() {
        let (batch, anchors) = random_instance(6, 5, 2);
        let cross = cross_affinities(&batch, &anchors, 2.0).unwrap();
        let init = init_positions(&cross, &anchors).unwrap();
        for (i, p) in init.iter().enumerate() {
            let mut x = 0.0;
            let mut y = 0.0;
            for k in 0..5 {
                x += cross.row(i)[k] * anchors.low()[k].coords[0];
                y += cross.row(i)[k] * anchors.low()[k].coords[1];
            }
            assert!((p.coords[0] - x).abs() < 1e-12 && (p.coords[1] - y).abs() < 1e-12);
            assert_eq!(p.source_id, batch[i].id);
        }

        // a uniform row lands on the centroid
        let anchors = anchors_from(&[vec![-1.0], vec![1.0]], &[[0.0, 0.0], [4.0, 2.0]]);
        let cross = cross_affinities(&[HighDimPoint::new(5, vec![0.0])], &anchors, 2.0).unwrap();
        assert_eq!(init_positions(&cross, &anchors).unwrap()[0].coords, [2.0, 1.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (batch, anchors) = random_instance(4, 6, 3);
        let cross = cross_affinities(&batch, &anchors, 2.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<[f64; 2]> = (0..4).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let g = partial_gradient(&y, &anchors, &cross);
        let h = 1e-5;
        for i in 0..4 {
            for d in 0..2 {
                let mut plus = y.clone();
                let mut minus = y.clone();
                plus[i][d] += h;
                minus[i][d] -= h;
                let fd = (partial_objective(&plus, &anchors, &cross)
                    - partial_objective(&minus, &anchors, &cross))
                    / (2.0 * h);
                let rel = (g[i][d] - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-5, "component ({i},{d}): {} vs {fd}", g[i][d]);
            }
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let (batch, anchors) = random_instance(5, 7, 5);
        let cross = cross_affinities(&batch, &anchors, 2.0).unwrap();
        let init = init_positions(&cross, &anchors).unwrap();
        let out = optimize_partial(&init, &anchors, &cross, &PartialParams { iters: 0, learning_rate: 200.0 })
            .unwrap();
        assert_eq!(out.embedding, init);
    }

    #[test]
    fn optimization_is_monotone_deterministic_and_leaves_anchors_alone() {
        let (batch, anchors) = random_instance(10, 12, 6);
        let before = anchors.clone();
        let cross = cross_affinities(&batch, &anchors, 4.0).unwrap();
        let init = init_positions(&cross, &anchors).unwrap();
        let params = PartialParams::default();
        let a = optimize_partial(&init, &anchors, &cross, &params).unwrap();
        let b = optimize_partial(&init, &anchors, &cross, &params).unwrap();
        assert_eq!(a, b);
        assert!(a.final_objective <= a.initial_objective);
        assert_eq!(anchors, before);
    }

    #[test]
    fn copies_of_anchors_land_on_their_anchor() {
        let high = [vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0], vec![5.0, 5.0]];
        let low = [[-10.0, -10.0], [10.0, -10.0], [-10.0, 10.0], [10.0, 10.0]];
        let anchors = anchors_from(&high, &low);
        let batch: Vec<_> = [1usize, 2]
            .iter()
            .map(|&k| HighDimPoint::new(50 + k as u64, high[k].clone()))
            .collect();
        let cross = cross_affinities(&batch, &anchors, 1.0).unwrap();
        let init = init_positions(&cross, &anchors).unwrap();
        let out = optimize_partial(&init, &anchors, &cross, &PartialParams { iters: 50, learning_rate: 200.0 })
            .unwrap();
        for (p, k) in out.embedding.iter().zip([1usize, 2]) {
            let d = ((p.coords[0] - low[k][0]).powi(2) + (p.coords[1] - low[k][1]).powi(2)).sqrt();
            assert!(d < 0.1, "copy of anchor {k} landed {d} away");
        }
    }
}
