//! Exponential cobweb slicing: blind forgetting of hull sections that have
//! not received points for longer than N(t) = α·exp(−tη + β) iterations.

use serde::{Deserialize, Serialize};

use crate::geometry::{build_cobweb, cut_ring, cut_wedge, CobwebPartition, ConvexPolygon};
use crate::{LowDimPoint, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
}

impl Default for DecayParams {
    fn default() -> Self {
        Self { alpha: 0.88, beta: 1.6, eta: 0.01 }
    }
}

/// Starvation threshold at iteration `t`.
pub fn decay_threshold(t: u64, params: &DecayParams) -> f64 {
    params.alpha * (-(t as f64) * params.eta + params.beta).exp()
}

/// A cluster hull under slicing: the current (possibly already cut) polygon
/// and the cobweb it was partitioned with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedHull {
    pub id: u64,
    pub polygon: ConvexPolygon,
    pub partition: CobwebPartition,
}

impl TrackedHull {
    /// A hull born at iteration `t`: every section starts as just hit.
    pub fn new(id: u64, polygon: ConvexPolygon, rings: usize, t: u64) -> Result<Self> {
        let partition = build_cobweb(&polygon, rings, t)?;
        Ok(Self { id, polygon, partition })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutKind {
    Ring,
    Wedge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutRecord {
    pub polygon_id: u64,
    pub section_id: usize,
    pub t: u64,
    pub kind: CutKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcsOutcome {
    pub survivors: Vec<TrackedHull>,
    /// Ordered by (polygon id, section id).
    pub cuts: Vec<CutRecord>,
    /// Ids of hulls that were cut away entirely.
    pub removed: Vec<u64>,
}

/// Stamps `last_hit = t` on every section that contains one of `points`.
pub fn record_hits(hulls: &mut [TrackedHull], points: &[LowDimPoint], t: u64) {
    for p in points {
        for hull in hulls.iter_mut() {
            if let Some(id) = hull.partition.locate(p.coords) {
                hull.partition.set_last_hit(id, t);
            }
        }
    }
}

/// Cuts every starved section reachable from the boundary.
///
/// A section is starved when `t - last_hit > N(t)`. While every cell of the
/// outermost remaining band is starved, the band is removed with a ring cut.
/// Then, for each wedge whose outermost remaining cell is starved, the run
/// of consecutive starved cells inward from it is removed with one wedge
/// cut at the run's inner boundary. Starved cells sitting under a live cell
/// wait until the cells outside them are gone. A hull whose sections are
/// all starved, or whose polygon degenerates, is removed.
pub fn apply_ecs(hulls: Vec<TrackedHull>, t: u64, params: &DecayParams) -> EcsOutcome {
    let threshold = decay_threshold(t, params);
    let mut survivors = Vec::with_capacity(hulls.len());
    let mut cuts = Vec::new();
    let mut removed = Vec::new();

    for mut hull in hulls {
        let part = &hull.partition;
        let m = part.rings();
        let wedges = part.wedge_count();
        let starved = |wedge: usize, ring: usize| {
            let s = part.section(part.section_id(wedge, ring));
            t.saturating_sub(s.last_hit) as f64 > threshold
        };
        let mut log = |section_id: usize, kind: CutKind| {
            cuts.push(CutRecord { polygon_id: hull.id, section_id, t, kind });
        };

        let mut polygon = Some(hull.polygon.clone());
        let mut outer = m;
        while outer >= 1 && (0..wedges).all(|w| starved(w, outer)) {
            for w in 0..wedges {
                log(part.section_id(w, outer), CutKind::Ring);
            }
            polygon = polygon.and_then(|p| cut_ring(&p, outer, outer).expect("outermost ring"));
            outer -= 1;
        }

        if outer >= 1 {
            for w in 0..wedges {
                if !starved(w, outer) {
                    continue;
                }
                let mut inner = outer;
                while inner > 1 && starved(w, inner - 1) {
                    inner -= 1;
                }
                for ring in inner..=outer {
                    log(part.section_id(w, ring), CutKind::Wedge);
                }
                let depth = (inner - 1) as f64 / m as f64;
                polygon = polygon.and_then(|p| cut_wedge(&p, &part.wedge(w), depth));
            }
        }

        match polygon {
            Some(p) => {
                hull.polygon = p;
                survivors.push(hull);
            }
            None => removed.push(hull.id),
        }
    }

    cuts.sort_by_key(|c| (c.polygon_id, c.section_id));
    EcsOutcome { survivors, cuts, removed }
}
