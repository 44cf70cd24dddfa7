//! Exact t-SNE: Gaussian input affinities calibrated by perplexity, Student-t
//! output affinities, the KL objective with its analytic gradient, and a
//! gradient-descent fit with early exaggeration, momentum and gains.
//!
//! Everything here is O(n²) in time and memory. Batches in the streaming
//! pipeline are small, so the exact form is affordable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower clamp applied to output affinities before taking logarithms.
pub const Q_FLOOR: f64 = 1e-12;

const MAX_BISECTION_STEPS: usize = 50;
const PERPLEXITY_RTOL: f64 = 1e-5;
const INIT_STD: f64 = 1e-2;
const MIN_GAIN: f64 = 0.01;

/// A point of the input stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighDimPoint {
    /// Stream sequence number, unique and increasing.
    pub id: u64,
    pub coords: Vec<f64>,
}

impl HighDimPoint {
    pub fn new(id: u64, coords: Vec<f64>) -> Self {
        Self { id, coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }
}

/// The 2-D image of a [`HighDimPoint`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowDimPoint {
    pub source_id: u64,
    pub coords: [f64; 2],
}

impl LowDimPoint {
    pub fn new(source_id: u64, coords: [f64; 2]) -> Self {
        Self { source_id, coords }
    }
}

/// Dense n×n joint probability matrix, row-major.
///
/// Constructed values are symmetric, non-negative, have a zero diagonal and
/// sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl AffinityMatrix {
    /// Wraps explicit values, checking the matrix invariants.
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Config(format!(
                "affinity matrix of order {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        let m = Self { n, values };
        m.check()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    fn check(&self) -> Result<()> {
        let n = self.n;
        for i in 0..n {
            if self.get(i, i) != 0.0 {
                return Err(Error::Contract(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = self.get(i, j);
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Contract(format!("invalid entry {v} at ({i},{j})")));
                }
                if (v - self.get(j, i)).abs() > 1e-12 {
                    return Err(Error::Contract(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        let s = self.sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("entries sum to {s}")));
        }
        Ok(())
    }
}

/// Hyperparameters of the exact fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub early_exaggeration_iters: usize,
    pub optimization_iters: usize,
    pub exaggeration_factor: f64,
    pub learning_rate: f64,
    pub momentum_early: f64,
    pub momentum_late: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            early_exaggeration_iters: 250,
            optimization_iters: 500,
            exaggeration_factor: 12.0,
            learning_rate: 200.0,
            momentum_early: 0.5,
            momentum_late: 0.8,
            seed: 0,
        }
    }
}

impl TsneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.perplexity >= 1.0) || !self.perplexity.is_finite() {
            return bad("perplexity must be a finite value >= 1");
        }
        if !(self.exaggeration_factor > 0.0) {
            return bad("exaggeration factor must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        for m in [self.momentum_early, self.momentum_late] {
            if !(0.0..1.0).contains(&m) {
                return bad("momentum must lie in [0, 1)");
            }
        }
        Ok(())
    }
}

/// Result of [`calibrate_row`].
#[derive(Debug, Clone, PartialEq)]
pub struct RowCalibration {
    /// Gaussian precision, 1 / (2σ²).
    pub beta: f64,
    /// Conditional probabilities p(j|i); zero at the excluded index.
    pub probs: Vec<f64>,
    /// Whether the perplexity target was met before the step limit.
    pub converged: bool,
}

/// Checks that all points share one dimension and have finite coordinates.
pub fn common_dim(points: &[HighDimPoint]) -> Result<usize> {
    let dim = points.first().map(|p| p.dim()).unwrap_or(0);
    for p in points {
        if p.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.dim(),
            });
        }
        if !p.is_finite() {
            return Err(Error::Config(format!("point {} has non-finite coordinates", p.id)));
        }
    }
    Ok(dim)
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared Euclidean distances between all pairs, as a row-major n×n matrix.
pub fn pairwise_sq_dists(points: &[HighDimPoint]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::Config("need at least two points".into()));
    }
    common_dim(points)?;
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(&points[i].coords, &points[j].coords);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(d)
}

/// Binary search on the Gaussian precision so that the conditional
/// distribution over `sq_dists` has the requested perplexity.
///
/// `exclude` marks the query's own entry, which gets probability zero.
/// Non-finite distances are ignored. When the target cannot be met within
/// the step budget the closest precision found is returned with
/// `converged == false`.
pub fn calibrate_row(
    sq_dists: &[f64],
    exclude: Option<usize>,
    perplexity: f64,
) -> Result<RowCalibration> {
    if !(perplexity >= 1.0) {
        return Err(Error::Config(format!("perplexity {perplexity} must be >= 1")));
    }
    let row = exclude.unwrap_or(0);
    let candidate = |j: usize| Some(j) != exclude && sq_dists[j].is_finite();
    let d_min = (0..sq_dists.len())
        .filter(|&j| candidate(j))
        .map(|j| sq_dists[j])
        .fold(f64::INFINITY, f64::min);
    if !d_min.is_finite() {
        return Err(Error::Config(format!("row {row} has no finite candidates")));
    }
    let d_max = (0..sq_dists.len())
        .filter(|&j| candidate(j))
        .map(|j| sq_dists[j])
        .fold(f64::NEG_INFINITY, f64::max);
    if d_max == 0.0 {
        return Err(Error::DegenerateRow { row });
    }

    // Shifting by the minimum leaves the normalized distribution unchanged
    // and keeps the largest weight at exactly one.
    let shifted: Vec<f64> = (0..sq_dists.len())
        .map(|j| if candidate(j) { sq_dists[j] - d_min } else { f64::NAN })
        .collect();
    let mut probs = vec![0.0; sq_dists.len()];

    let target = perplexity.ln();
    let spread: Vec<f64> = shifted.iter().copied().filter(|s| *s > 0.0).collect();
    if spread.iter().all(|s| *s <= 1e-12 * d_max) {
        // All candidates equidistant (up to rounding): every precision gives
        // the uniform law.
        let k = (0..sq_dists.len()).filter(|&j| candidate(j)).count() as f64;
        for (j, p) in probs.iter_mut().enumerate() {
            if candidate(j) {
                *p = 1.0 / k;
            }
        }
        let converged = (k - perplexity).abs() <= PERPLEXITY_RTOL * perplexity;
        return Ok(RowCalibration { beta: 0.0, probs, converged });
    }
    let mean_spread = spread.iter().sum::<f64>() / spread.len() as f64;

    let entropy_at = |beta: f64, probs: &mut [f64]| -> f64 {
        let mut z = 0.0;
        let mut weighted = 0.0;
        for (p, &s) in probs.iter_mut().zip(&shifted) {
            if s.is_nan() {
                *p = 0.0;
                continue;
            }
            let w = (-beta * s).exp();
            *p = w;
            z += w;
            weighted += w * s;
        }
        for p in probs.iter_mut() {
            *p /= z;
        }
        z.ln() + beta * weighted / z
    };

    let mut beta = 1.0 / mean_spread;
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut best = (f64::INFINITY, beta);
    let mut converged = false;
    for _ in 0..MAX_BISECTION_STEPS {
        let h = entropy_at(beta, &mut probs);
        let err = (h.exp() - perplexity).abs();
        if err < best.0 {
            best = (err, beta);
        }
        if err <= PERPLEXITY_RTOL * perplexity {
            converged = true;
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    if !converged {
        beta = best.1;
        entropy_at(beta, &mut probs);
    } else {
        beta = best.1;
    }
    Ok(RowCalibration { beta, probs, converged })
}

/// Symmetrized joint affinities p_ij = (p(j|i) + p(i|j)) / 2n.
pub fn joint_affinities(points: &[HighDimPoint], perplexity: f64) -> Result<AffinityMatrix> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Config("joint affinities need at least three points".into()));
    }
    // The distance matrix is overwritten row by row with conditionals.
    let mut m = pairwise_sq_dists(points)?;
    for i in 0..n {
        let cal = calibrate_row(&m[i * n..(i + 1) * n], Some(i), perplexity)?;
        m[i * n..(i + 1) * n].copy_from_slice(&cal.probs);
    }
    let scale = 2.0 * n as f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[i * n + j] + m[j * n + i]) / scale;
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    Ok(AffinityMatrix { n, values: m })
}

#[inline]
fn t_kernel(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    1.0 / (1.0 + dx * dx + dy * dy)
}

/// Student-t output affinities q_ij ∝ (1 + ‖y_i − y_j‖²)⁻¹.
pub fn low_dim_affinities(points: &[LowDimPoint]) -> Result<AffinityMatrix> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Config("need at least two embedded points".into()));
    }
    if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
        return Err(Error::Config("non-finite embedding coordinates".into()));
    }
    let mut q = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = t_kernel(points[i].coords, points[j].coords);
            q[i * n + j] = w;
            q[j * n + i] = w;
            z += 2.0 * w;
        }
    }
    for v in &mut q {
        *v /= z;
    }
    Ok(AffinityMatrix { n, values: q })
}

/// KL(P‖Q) in nats, with Q clamped below at [`Q_FLOOR`].
pub fn kl_divergence(p: &AffinityMatrix, q: &AffinityMatrix) -> Result<f64> {
    if p.n != q.n {
        return Err(Error::Config(format!("size mismatch: {} vs {}", p.n, q.n)));
    }
    let kl = p
        .values
        .iter()
        .zip(&q.values)
        .filter(|(pv, _)| **pv > 0.0)
        .map(|(pv, qv)| pv * (pv / qv.max(Q_FLOOR)).ln())
        .sum::<f64>();
    Ok(kl.max(0.0))
}

/// Gradient of KL(P‖Q(Y)) with respect to each embedded point.
pub fn kl_gradient(
    p: &AffinityMatrix,
    q: &AffinityMatrix,
    y: &[LowDimPoint],
) -> Result<Vec<[f64; 2]>> {
    let n = y.len();
    if p.n != n || q.n != n {
        return Err(Error::Config("inconsistent sizes for gradient".into()));
    }
    let mut grad = vec![[0.0; 2]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let yi = y[i].coords;
            let yj = y[j].coords;
            let w = t_kernel(yi, yj);
            let f = 4.0 * (p.get(i, j) - q.get(i, j)) * w;
            grad[i][0] += f * (yi[0] - yj[0]);
            grad[i][1] += f * (yi[1] - yj[1]);
        }
    }
    Ok(grad)
}

/// KL(P‖Q(Y)) evaluated without materializing Q.
fn kl_of_layout(p: &AffinityMatrix, y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            z += 2.0 * t_kernel(y[i], y[j]);
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let pv = p.values[i * n + j];
            if pv > 0.0 {
                let q = (t_kernel(y[i], y[j]) / z).max(Q_FLOOR);
                kl += 2.0 * pv * (pv / q).ln();
            }
        }
    }
    kl.max(0.0)
}

/// Output of [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOutput {
    pub embedding: Vec<LowDimPoint>,
    /// Unexaggerated KL at the first iteration after exaggeration ends.
    pub kl_at_exaggeration_end: f64,
    /// KL of the returned embedding.
    pub final_kl: f64,
}

/// Full exact t-SNE of `points`.
pub fn fit(points: &[HighDimPoint], params: &TsneParams) -> Result<FitOutput> {
    params.validate()?;
    let n = points.len();
    if n < 4 {
        return Err(Error::Config(format!("fit needs at least 4 points, got {n}")));
    }
    if params.perplexity >= (n - 1) as f64 {
        return Err(Error::Config(format!(
            "perplexity {} must be below n - 1 = {}",
            params.perplexity,
            n - 1
        )));
    }
    let p = joint_affinities(points, params.perplexity)?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();

    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut attr = vec![[0.0; 2]; n];
    let mut rep = vec![[0.0; 2]; n];

    let early = params.early_exaggeration_iters;
    let total = early + params.optimization_iters;
    let mut kl_start = None;

    for iter in 0..total {
        let (exaggeration, momentum) = if iter < early {
            (params.exaggeration_factor, params.momentum_early)
        } else {
            (1.0, params.momentum_late)
        };
        if iter == early {
            kl_start = Some(kl_of_layout(&p, &y));
        }

        attr.iter_mut().for_each(|a| *a = [0.0; 2]);
        rep.iter_mut().for_each(|r| *r = [0.0; 2]);
        let mut z = 0.0;
        for i in 0..n {
            let yi = y[i];
            let prow = &p.values[i * n..(i + 1) * n];
            for j in (i + 1)..n {
                let dx = yi[0] - y[j][0];
                let dy = yi[1] - y[j][1];
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                z += 2.0 * w;
                let pw = prow[j] * w;
                let w2 = w * w;
                attr[i][0] += pw * dx;
                attr[i][1] += pw * dy;
                attr[j][0] -= pw * dx;
                attr[j][1] -= pw * dy;
                rep[i][0] += w2 * dx;
                rep[i][1] += w2 * dy;
                rep[j][0] -= w2 * dx;
                rep[j][1] -= w2 * dy;
            }
        }

        for i in 0..n {
            for d in 0..2 {
                let g = 4.0 * (exaggeration * attr[i][d] - rep[i][d] / z);
                let gain = &mut gains[i][d];
                *gain = if (g > 0.0) != (update[i][d] > 0.0) {
                    *gain + 0.2
                } else {
                    (*gain * 0.8).max(MIN_GAIN)
                };
                update[i][d] = momentum * update[i][d] - params.learning_rate * *gain * g;
                y[i][d] += update[i][d];
            }
        }

        let mut mean = [0.0; 2];
        for yi in &y {
            mean[0] += yi[0];
            mean[1] += yi[1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        if !(mean[0].is_finite() && mean[1].is_finite()) {
            return Err(Error::Divergence { iteration: iter });
        }
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }
    }

    let final_kl = kl_of_layout(&p, &y);
    let embedding = points
        .iter()
        .zip(&y)
        .map(|(pt, c)| LowDimPoint::new(pt.id, *c))
        .collect();
    Ok(FitOutput {
        embedding,
        kl_at_exaggeration_end: kl_start.unwrap_or(final_kl),
        final_kl,
    })
}
