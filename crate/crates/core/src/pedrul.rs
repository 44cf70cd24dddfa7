//! Density representatives ("PEDRUL"): points with the most neighbours
//! within a radius in the original space, chosen greedily so that no two
//! representatives are within the radius of each other.

use std::collections::BTreeMap;

use crate::kdtree::KdTree;
use crate::tsne::sq_dist;
use crate::{Error, HighDimPoint, Result};

/// Size of the sample used by [`auto_radius`].
pub const RADIUS_SAMPLE: usize = 1000;
/// Fraction of the median pairwise distance used by [`auto_radius`].
pub const RADIUS_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct PedrulSelection {
    /// Chosen ids, by descending neighbour count then ascending id.
    pub chosen: Vec<u64>,
    /// Neighbour count of every candidate (self excluded).
    pub neighbor_counts: BTreeMap<u64, usize>,
    pub radius: f64,
}

/// Greedy selection of at most `budget` mutually separated dense points.
///
/// Candidates are visited by neighbour count (descending, ties by ascending
/// id). A candidate is accepted unless it lies within `radius` of a point
/// already accepted. If exclusion exhausts the candidates first, fewer than
/// `budget` points are returned.
pub fn select_pedrul(points: &[HighDimPoint], radius: f64, budget: usize) -> Result<PedrulSelection> {
    if budget == 0 {
        return Err(Error::Config("PEDRUL budget must be at least 1".into()));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Config(format!("search radius {radius} must be positive")));
    }
    if points.is_empty() {
        return Ok(PedrulSelection { chosen: Vec::new(), neighbor_counts: BTreeMap::new(), radius });
    }
    let tree = KdTree::build(points)?;
    let counts: Vec<usize> = points
        .iter()
        .map(|p| tree.count_within(&p.coords, radius) - 1)
        .collect();

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(points[a].id.cmp(&points[b].id)));

    let mut blocked = vec![false; points.len()];
    let mut chosen = Vec::with_capacity(budget.min(points.len()));
    for idx in order {
        if chosen.len() == budget {
            break;
        }
        if blocked[idx] {
            continue;
        }
        chosen.push(points[idx].id);
        for j in tree.within(&points[idx].coords, radius) {
            blocked[j] = true;
        }
    }

    let neighbor_counts = points.iter().zip(&counts).map(|(p, c)| (p.id, *c)).collect();
    Ok(PedrulSelection { chosen, neighbor_counts, radius })
}

/// A scale-adaptive search radius: a fixed fraction of the median pairwise
/// distance over an evenly strided sample of at most [`RADIUS_SAMPLE`] points.
pub fn auto_radius(points: &[HighDimPoint]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Config("automatic radius needs at least two points".into()));
    }
    let stride = points.len().div_ceil(RADIUS_SAMPLE);
    let sample: Vec<&HighDimPoint> = points.iter().step_by(stride).collect();
    let mut d = Vec::with_capacity(sample.len() * (sample.len() - 1) / 2);
    for i in 0..sample.len() {
        for j in (i + 1)..sample.len() {
            d.push(sq_dist(&sample[i].coords, &sample[j].coords));
        }
    }
    let mid = d.len() / 2;
    let (_, median, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let r = RADIUS_FRACTION * median.sqrt();
    if r > 0.0 {
        Ok(r)
    } else {
        Err(Error::Config("median pairwise distance is zero; pass an explicit radius".into()))
    }
}
