//! The streaming state machine.
//!
//! Points accumulate in a buffer. When the buffer reaches the trigger size
//! (the opening slice for the first projection, the batch size afterwards)
//! one projection runs:
//!
//! 1. embed the batch: a full fit the first time, a partial embedding
//!    against the anchors afterwards;
//! 2. re-select the density representatives over anchors ∪ batch;
//! 3. cluster anchors ∪ batch in 2-D, hull each cluster and carry the
//!    per-section hit history over from the previous hulls;
//! 4. advance the iteration counter, record the batch's hits and slice
//!    starved sections;
//! 5. drop representatives that now fall outside their cluster's hull and,
//!    if any were dropped, top the budget up from the still-valid pool.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clustering::cluster_embedding;
use crate::ecs::{apply_ecs, record_hits, CutRecord, DecayParams, TrackedHull};
use crate::geometry::{convex_hull, Point2};
use crate::partial::{cross_affinities, init_positions, optimize_partial, AnchorSet, PartialParams};
use crate::pedrul::{auto_radius, select_pedrul};
use crate::tsne::{fit, sq_dist, TsneParams};
use crate::{Error, HighDimPoint, LowDimPoint, Result};

/// Search radius for representative selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Radius {
    /// Derived from the opening slice, see [`crate::pedrul::auto_radius`].
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub batch_size: usize,
    pub pedrul_budget: usize,
    pub radius: Radius,
    pub perplexity: f64,
    pub fit_early_iters: usize,
    pub fit_optimization_iters: usize,
    pub partial_iters: usize,
    pub decay: DecayParams,
    pub rings: usize,
    pub cluster_eps: f64,
    pub cluster_min_pts: usize,
    pub slice_fraction: f64,
    /// Expected stream length, when known; sizes the opening slice.
    pub expected_total: Option<usize>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            batch_size: 400,
            pedrul_budget: 400,
            radius: Radius::Auto,
            perplexity: 30.0,
            fit_early_iters: 250,
            fit_optimization_iters: 400,
            partial_iters: 100,
            decay: DecayParams::default(),
            rings: 3,
            cluster_eps: 2.0,
            cluster_min_pts: 8,
            slice_fraction: 0.2,
            expected_total: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 4 {
            return bad(format!("batch size {} must be at least 4", self.batch_size));
        }
        if self.pedrul_budget == 0 {
            return bad("PEDRUL budget must be at least 1".into());
        }
        if let Radius::Fixed(r) = self.radius {
            if !(r > 0.0) || !r.is_finite() {
                return bad(format!("radius {r} must be positive"));
            }
        }
        if !(self.perplexity >= 1.0) {
            return bad(format!("perplexity {} must be >= 1", self.perplexity));
        }
        if self.rings == 0 {
            return bad("ring count must be at least 1".into());
        }
        if !(self.cluster_eps > 0.0) || self.cluster_min_pts == 0 {
            return bad("cluster eps must be positive and min_pts at least 1".into());
        }
        if !(self.slice_fraction > 0.0 && self.slice_fraction <= 1.0) {
            return bad(format!("slice fraction {} must lie in (0, 1]", self.slice_fraction));
        }
        let d = &self.decay;
        if !(d.alpha > 0.0) || !(d.eta >= 0.0) || !d.beta.is_finite() {
            return bad("decay needs alpha > 0, eta >= 0 and finite beta".into());
        }
        if let Some(total) = self.expected_total {
            let opening = self.opening_size();
            if opening < self.batch_size {
                return bad(format!(
                    "opening slice {} of {total} points is smaller than the batch size {}",
                    opening, self.batch_size
                ));
            }
        }
        Ok(())
    }

    /// Number of points consumed by the first projection.
    pub fn opening_size(&self) -> usize {
        match self.expected_total {
            Some(total) => (self.slice_fraction * total as f64 - 1e-9).ceil().max(1.0) as usize,
            None => self.batch_size,
        }
    }

    /// Fit hyperparameters for `n` points. The perplexity is capped at
    /// (n − 1)/3 so small batches stay well-posed.
    pub fn fit_params(&self, n: usize, seed: u64) -> TsneParams {
        let perplexity = effective_perplexity(self.perplexity, n);
        if perplexity < self.perplexity {
            log::warn!("perplexity {} clamped to {perplexity} for a fit of {n} points", self.perplexity);
        }
        TsneParams {
            perplexity,
            early_exaggeration_iters: self.fit_early_iters,
            optimization_iters: self.fit_optimization_iters,
            seed,
            ..TsneParams::default()
        }
    }

    pub fn partial_params(&self) -> PartialParams {
        PartialParams {
            iters: self.partial_iters,
            learning_rate: TsneParams::default().learning_rate,
        }
    }
}

/// Perplexity usable for `n` points.
pub fn effective_perplexity(perplexity: f64, n: usize) -> f64 {
    let cap = (n.saturating_sub(1)) as f64 / 3.0;
    perplexity.min(cap).max(1.0)
}

/// Which cluster summary an anchor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    Noise,
    /// Clustered, but the cluster has no area and therefore no hull.
    Degenerate,
    Hull(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    Opening,
    Partial,
    /// Full fit after every anchor was pruned.
    Refit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub embed: Duration,
    pub pedrul: Duration,
    pub hull: Duration,
    pub ecs: Duration,
}

/// What happened during one projection.
#[derive(Debug, Clone)]
pub struct ProjectionReport {
    pub t: u64,
    pub kind: ProjectionKind,
    pub batch: Vec<HighDimPoint>,
    pub batch_embedding: Vec<LowDimPoint>,
    /// Optimizer iterations spent on the embedding step.
    pub optimizer_iters: usize,
    /// Final KL of the full fit, for opening and refit projections.
    pub fit_kl: Option<f64>,
    /// Representatives chosen before pruning.
    pub selected: usize,
    pub pruned: usize,
    /// Valid pool points taken in place of pruned representatives.
    pub refilled: usize,
    pub cuts: Vec<CutRecord>,
    pub removed_hulls: Vec<u64>,
    pub times: PhaseTimes,
}

/// Immutable between-batch view of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSnapshot {
    pub t: u64,
    pub anchors: Vec<LowDimPoint>,
    pub hulls: Vec<HullSnapshot>,
    pub cuts: Vec<CutRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullSnapshot {
    pub id: u64,
    pub vertices: Vec<Point2>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingState {
    config: RunConfig,
    anchors: AnchorSet,
    membership: Vec<Membership>,
    hulls: Vec<TrackedHull>,
    t: u64,
    storage: Vec<HighDimPoint>,
    dim: Option<usize>,
    radius: Option<f64>,
    next_hull_id: u64,
    last_cuts: Vec<CutRecord>,
}

impl EmbeddingState {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let radius = match config.radius {
            Radius::Fixed(r) => Some(r),
            Radius::Auto => None,
        };
        Ok(Self {
            config,
            anchors: AnchorSet::default(),
            membership: Vec::new(),
            hulls: Vec::new(),
            t: 0,
            storage: Vec::new(),
            dim: None,
            radius,
            next_hull_id: 0,
            last_cuts: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn membership(&self) -> &[Membership] {
        &self.membership
    }

    pub fn hulls(&self) -> &[TrackedHull] {
        &self.hulls
    }

    /// Completed projections.
    pub fn iterations(&self) -> u64 {
        self.t
    }

    pub fn pending(&self) -> usize {
        self.storage.len()
    }

    /// Resolved search radius, once known.
    pub fn radius(&self) -> Option<f64> {
        self.radius
    }

    pub fn hull_vertex_count(&self) -> usize {
        self.hulls.iter().map(|h| h.polygon.len()).sum()
    }

    fn trigger_size(&self) -> usize {
        if self.t == 0 {
            self.config.opening_size()
        } else {
            self.config.batch_size
        }
    }

    /// Buffers a point, projecting when the buffer reaches the trigger size.
    /// A point of the wrong dimension is rejected and the state is untouched.
    pub fn ingest(&mut self, point: HighDimPoint) -> Result<Option<ProjectionReport>> {
        let dim = *self.dim.get_or_insert(point.dim());
        if point.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: point.dim() });
        }
        if !point.is_finite() {
            return Err(Error::Config(format!("point {} has non-finite coordinates", point.id)));
        }
        self.storage.push(point);
        if self.storage.len() >= self.trigger_size() {
            self.project_batch().map(Some)
        } else {
            Ok(None)
        }
    }

    /// Projects whatever is buffered at the end of a finite stream. Does
    /// nothing when the buffer is empty, or too small for a first fit.
    pub fn flush(&mut self) -> Result<Option<ProjectionReport>> {
        if self.storage.is_empty() || (self.anchors.len() < 2 && self.storage.len() < 4) {
            return Ok(None);
        }
        self.project_batch().map(Some)
    }

    /// Runs one projection over the buffered points and empties the buffer.
    pub fn project_batch(&mut self) -> Result<ProjectionReport> {
        if self.storage.is_empty() {
            return Err(Error::State("no buffered points to project".into()));
        }
        let batch = std::mem::take(&mut self.storage);
        let t_next = self.t + 1;
        let mut times = PhaseTimes::default();

        let clock = Instant::now();
        let (kind, batch_low, optimizer_iters, fit_kl) = if self.anchors.len() < 2 {
            let kind = if self.t == 0 { ProjectionKind::Opening } else { ProjectionKind::Refit };
            if kind == ProjectionKind::Refit {
                // the old frame is meaningless to a fresh fit
                self.anchors = AnchorSet::default();
                self.membership.clear();
                self.hulls.clear();
            }
            let params = self.config.fit_params(batch.len(), self.config.seed.wrapping_add(self.t));
            let out = fit(&batch, &params)?;
            let iters = params.early_exaggeration_iters + params.optimization_iters;
            (kind, out.embedding, iters, Some(out.final_kl))
        } else {
            let cross = cross_affinities(&batch, &self.anchors, self.config.perplexity)?;
            let init = init_positions(&cross, &self.anchors)?;
            let out = optimize_partial(&init, &self.anchors, &cross, &self.config.partial_params())?;
            (ProjectionKind::Partial, out.embedding, self.config.partial_iters, None)
        };
        times.embed = clock.elapsed();

        let clock = Instant::now();
        let radius = match self.radius {
            Some(r) => r,
            None => {
                let r = auto_radius(&batch)?;
                self.radius = Some(r);
                r
            }
        };
        let old_count = self.anchors.len();
        let mut pool_high: Vec<HighDimPoint> = self.anchors.high().to_vec();
        pool_high.extend(batch.iter().cloned());
        let mut pool_low: Vec<LowDimPoint> = self.anchors.low().to_vec();
        pool_low.extend(batch_low.iter().copied());
        let selection = select_pedrul(&pool_high, radius, self.config.pedrul_budget)?;
        let index: HashMap<u64, usize> = pool_high.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
        let chosen: Vec<usize> = selection.chosen.iter().map(|id| index[id]).collect();
        times.pedrul = clock.elapsed();

        let clock = Instant::now();
        let (pool_membership, hulls) = self.summarize(&pool_low, old_count, t_next)?;
        times.hull = clock.elapsed();

        let clock = Instant::now();
        self.t = t_next;
        let mut hulls = hulls;
        record_hits(&mut hulls, &batch_low, self.t);
        let outcome = apply_ecs(hulls, self.t, &self.config.decay);
        self.hulls = outcome.survivors;

        // a pool point is still valid if its hull survived and holds it
        let surviving: HashMap<u64, &TrackedHull> = self.hulls.iter().map(|h| (h.id, h)).collect();
        let valid: Vec<bool> = pool_low
            .iter()
            .zip(&pool_membership)
            .map(|(p, m)| match m {
                Membership::Hull(id) => surviving.get(id).is_some_and(|h| h.polygon.contains(p.coords)),
                Membership::Noise | Membership::Degenerate => true,
            })
            .collect();
        let selected = chosen.len();
        let mut kept: Vec<usize> = chosen.iter().copied().filter(|&i| valid[i]).collect();
        let pruned = selected - kept.len();
        let refilled = if pruned > 0 {
            let before = kept.len();
            refill(&mut kept, &pool_high, &valid, &selection.neighbor_counts, radius, self.config.pedrul_budget);
            kept.len() - before
        } else {
            0
        };
        self.anchors = AnchorSet::new(
            kept.iter().map(|&i| pool_high[i].clone()).collect(),
            kept.iter().map(|&i| pool_low[i]).collect(),
        )?;
        self.membership = kept.iter().map(|&i| pool_membership[i]).collect();
        self.last_cuts = outcome.cuts.clone();
        times.ecs = clock.elapsed();

        Ok(ProjectionReport {
            t: self.t,
            kind,
            batch,
            batch_embedding: batch_low,
            optimizer_iters,
            fit_kl,
            selected,
            pruned,
            refilled,
            cuts: outcome.cuts,
            removed_hulls: outcome.removed,
            times,
        })
    }

    /// Clusters the pool in 2-D, hulls each cluster, matches hulls to the
    /// previous ones by shared former anchors and carries hit history over.
    /// A previous hull that no cluster matches is kept as it is, and left to
    /// starve, while its former anchors are all outside every cluster;
    /// otherwise it is dropped. Returns the membership of every pool point.
    ///
    /// The first `old_count` pool points are the previous anchors, aligned
    /// with `self.membership`.
    fn summarize(
        &mut self,
        pool: &[LowDimPoint],
        old_count: usize,
        t_next: u64,
    ) -> Result<(Vec<Membership>, Vec<TrackedHull>)> {
        let labels = cluster_embedding(pool, self.config.cluster_eps, self.config.cluster_min_pts)?;
        let members = labels.members();

        let mut polygons = Vec::with_capacity(members.len());
        for idx in &members {
            let pts: Vec<Point2> = idx.iter().map(|&i| pool[i].coords).collect();
            polygons.push(match convex_hull(&pts) {
                Ok(p) => Some(p),
                Err(Error::DegenerateHull { .. }) => None,
                Err(e) => return Err(e),
            });
        }

        // overlap[(cluster, old hull id)] = shared former anchors
        let mut overlap: BTreeMap<(usize, u64), usize> = BTreeMap::new();
        for (c, idx) in members.iter().enumerate() {
            if polygons[c].is_none() {
                continue;
            }
            for &i in idx.iter().filter(|&&i| i < old_count) {
                if let Membership::Hull(h) = self.membership[i] {
                    *overlap.entry((c, h)).or_default() += 1;
                }
            }
        }
        let mut pairs: Vec<((usize, u64), usize)> = overlap.into_iter().collect();
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut cluster_id: Vec<Option<u64>> = vec![None; members.len()];
        let mut taken = HashSet::new();
        for ((c, h), _) in pairs {
            if cluster_id[c].is_none() && taken.insert(h) {
                cluster_id[c] = Some(h);
            }
        }

        let mut hulls = Vec::new();
        for (c, poly) in polygons.into_iter().enumerate() {
            let Some(poly) = poly else { continue };
            let id = *cluster_id[c].get_or_insert_with(|| {
                let id = self.next_hull_id;
                self.next_hull_id += 1;
                id
            });
            let mut hull = TrackedHull::new(id, poly, self.config.rings, t_next)?;
            self.carry_over(&mut hull, id, t_next);
            hulls.push(hull);
        }
        // An unmatched hull is kept, to starve, only while some of its former
        // anchors are stranded outside every cluster and none was absorbed by
        // another cluster.
        let mut stranded = HashSet::new();
        let mut absorbed = HashSet::new();
        for i in 0..old_count {
            if let Membership::Hull(h) = self.membership[i] {
                match labels.label(i).and_then(|c| cluster_id[c]) {
                    Some(_) => absorbed.insert(h),
                    None => stranded.insert(h),
                };
            }
        }
        let orphans: HashSet<u64> = stranded
            .into_iter()
            .filter(|h| !taken.contains(h) && !absorbed.contains(h))
            .collect();
        hulls.extend(self.hulls.iter().filter(|h| orphans.contains(&h.id)).cloned());
        hulls.sort_by_key(|h| h.id);

        // stranded anchors stay with their orphan hull until it is cut away
        let membership = (0..pool.len())
            .map(|i| match labels.label(i).map(|c| cluster_id[c]) {
                Some(Some(id)) => Membership::Hull(id),
                Some(None) => Membership::Degenerate,
                None => match self.membership.get(i) {
                    Some(&Membership::Hull(h)) if i < old_count && orphans.contains(&h) => Membership::Hull(h),
                    _ => Membership::Noise,
                },
            })
            .collect();
        Ok((membership, hulls))
    }

    /// Each section inherits the most recent hit time found at its centre
    /// and at its corners (pulled slightly inwards) in the previous hulls.
    /// A probe outside every previous polygon counts as new ground, hit now.
    fn carry_over(&self, hull: &mut TrackedHull, id: u64, t_next: u64) {
        let mut previous: Vec<&TrackedHull> = self.hulls.iter().collect();
        previous.sort_by_key(|h| (h.id != id, h.id));
        let last_hit_at = |p: Point2| {
            previous
                .iter()
                .find_map(|old| {
                    if !old.polygon.contains(p) {
                        return None;
                    }
                    old.partition.locate(p).map(|k| old.partition.section(k).last_hit)
                })
                .unwrap_or(t_next)
        };
        for s in 0..hull.partition.sections().len() {
            let center = hull.partition.section_center(s);
            let probes = hull
                .partition
                .section_loop(s)
                .into_iter()
                .map(|v| [v[0] + 0.1 * (center[0] - v[0]), v[1] + 0.1 * (center[1] - v[1])])
                .chain(std::iter::once(center));
            let t = probes.map(last_hit_at).max().unwrap_or(t_next);
            hull.partition.set_last_hit(s, t);
        }
    }

    pub fn snapshot(&self) -> ProjectionSnapshot {
        ProjectionSnapshot {
            t: self.t,
            anchors: self.anchors.low().to_vec(),
            hulls: self
                .hulls
                .iter()
                .map(|h| HullSnapshot { id: h.id, vertices: h.polygon.vertices().to_vec() })
                .collect(),
            cuts: self.last_cuts.clone(),
        }
    }
}

/// Tops `kept` up to `budget` with valid pool points, in selection order
/// (most neighbours first, then lowest id), skipping any point within
/// `radius` of one already kept.
fn refill(
    kept: &mut Vec<usize>,
    pool: &[HighDimPoint],
    valid: &[bool],
    neighbor_counts: &BTreeMap<u64, usize>,
    radius: f64,
    budget: usize,
) {
    let taken: HashSet<usize> = kept.iter().copied().collect();
    let mut order: Vec<usize> = (0..pool.len()).filter(|i| valid[*i] && !taken.contains(i)).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(neighbor_counts[&pool[i].id]), pool[i].id));
    let r2 = radius * radius;
    for i in order {
        if kept.len() >= budget {
            break;
        }
        if kept.iter().all(|&k| sq_dist(&pool[k].coords, &pool[i].coords) > r2) {
            kept.push(i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn small_config() -> RunConfig {
        RunConfig {
            batch_size: 4,
            pedrul_budget: 8,
            radius: Radius::Fixed(0.5),
            perplexity: 2.0,
            fit_early_iters: 20,
            fit_optimization_iters: 30,
            partial_iters: 10,
            cluster_min_pts: 2,
            ..RunConfig::default()
        }
    }

    fn gaussian_points(n: usize, seed: u64) -> Vec<HighDimPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|i| HighDimPoint::new(i as u64, (0..3).map(|_| normal.sample(&mut rng)).collect()))
            .collect()
    }

    #[test]
    fn buffer_fills_then_fires() {
        let mut state = EmbeddingState::new(small_config()).unwrap();
        let pts = gaussian_points(4, 1);
        for p in &pts[..3] {
            assert!(state.ingest(p.clone()).unwrap().is_none());
        }
        assert_eq!(state.pending(), 3);
        let report = state.ingest(pts[3].clone()).unwrap().unwrap();
        assert_eq!(report.kind, ProjectionKind::Opening);
        assert_eq!(state.pending(), 0);
        assert_eq!(state.iterations(), 1);
    }

    #[test]
    fn projection_count_after_opening() {
        let config = RunConfig { expected_total: Some(12), slice_fraction: 0.5, ..small_config() };
        let mut state = EmbeddingState::new(config).unwrap();
        let mut kinds = Vec::new();
        for p in gaussian_points(14, 2) {
            if let Some(r) = state.ingest(p).unwrap() {
                kinds.push(r.kind);
            }
        }
        if let Some(r) = state.flush().unwrap() {
            kinds.push(r.kind);
        }
        // opening of 6, then ceil(8 / 4) = 2 partial projections
        assert_eq!(kinds.len(), 3);
        assert_eq!(kinds[0], ProjectionKind::Opening);
        assert_eq!(state.iterations(), 3);
    }

    #[test]
    fn dimension_mismatch_is_rejected_without_side_effects() {
        let mut state = EmbeddingState::new(small_config()).unwrap();
        state.ingest(HighDimPoint::new(0, vec![0.0, 1.0, 2.0])).unwrap();
        let err = state.ingest(HighDimPoint::new(1, vec![0.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, found: 1 }));
        assert_eq!(state.pending(), 1);
    }

    #[test]
    fn fresh_snapshot_is_empty_and_pure() {
        let state = EmbeddingState::new(small_config()).unwrap();
        let s = state.snapshot();
        assert_eq!(s.t, 0);
        assert!(s.hulls.is_empty() && s.anchors.is_empty());
        assert_eq!(state.snapshot(), s);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(EmbeddingState::new(RunConfig { batch_size: 3, ..RunConfig::default() }).is_err());
        assert!(EmbeddingState::new(RunConfig { slice_fraction: 0.0, ..RunConfig::default() }).is_err());
        let short = RunConfig { expected_total: Some(1000), slice_fraction: 0.1, batch_size: 400, ..RunConfig::default() };
        assert!(EmbeddingState::new(short).is_err());
    }

    #[test]
    fn opening_size_rounding() {
        let c = RunConfig { expected_total: Some(10_000), slice_fraction: 0.2, ..RunConfig::default() };
        assert_eq!(c.opening_size(), 2000);
        let c = RunConfig { expected_total: Some(8), slice_fraction: 0.5, ..RunConfig::default() };
        assert_eq!(c.opening_size(), 4);
    }
}
