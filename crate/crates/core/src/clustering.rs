//! DBSCAN over embedded points.
//!
//! Core points have at least `min_pts` points (themselves included) within
//! `eps`. Clusters are the connected components of core points under the
//! `eps` relation. A non-core point within `eps` of some core point joins the
//! cluster of its nearest such core point, so the partition does not depend
//! on input order. Cluster ids are assigned in order of each cluster's
//! lowest-index core point.

use crate::kdtree::KdTree;
use crate::{Error, LowDimPoint, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    labels: Vec<Option<usize>>,
    clusters: usize,
}

impl ClusterLabels {
    /// Cluster of point `i`, or `None` for noise.
    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters
    }

    /// Point indices of each cluster, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.clusters];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                out[*c].push(i);
            }
        }
        out
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

pub fn cluster_embedding(points: &[LowDimPoint], eps: f64, min_pts: usize) -> Result<ClusterLabels> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("cluster eps {eps} must be positive")));
    }
    if min_pts == 0 {
        return Err(Error::Config("min_pts must be at least 1".into()));
    }
    let n = points.len();
    if n == 0 {
        return Ok(ClusterLabels { labels: Vec::new(), clusters: 0 });
    }
    let tree = KdTree::from_flat(
        2,
        points.iter().flat_map(|p| p.coords).collect(),
        (0..n as u64).collect(),
        16,
    )?;
    let neighbors: Vec<Vec<usize>> = points.iter().map(|p| tree.within(&p.coords, eps)).collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut clusters = 0;
    let mut stack = Vec::new();
    for seed in 0..n {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        labels[seed] = Some(clusters);
        stack.push(seed);
        while let Some(i) = stack.pop() {
            for &j in &neighbors[i] {
                if core[j] && labels[j].is_none() {
                    labels[j] = Some(clusters);
                    stack.push(j);
                }
            }
        }
        clusters += 1;
    }

    for i in 0..n {
        if core[i] {
            continue;
        }
        let d2 = |j: usize| {
            let dx = points[i].coords[0] - points[j].coords[0];
            let dy = points[i].coords[1] - points[j].coords[1];
            dx * dx + dy * dy
        };
        labels[i] = neighbors[i]
            .iter()
            .copied()
            .filter(|&j| core[j])
            .min_by(|&a, &b| {
                d2(a).total_cmp(&d2(b))
                    .then(points[a].coords[0].total_cmp(&points[b].coords[0]))
                    .then(points[a].coords[1].total_cmp(&points[b].coords[1]))
            })
            .and_then(|j| labels[j]);
    }
    Ok(ClusterLabels { labels, clusters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(center: [f64; 2], n: usize, r: f64, rng: &mut ChaCha8Rng) -> Vec<LowDimPoint> {
        (0..n)
            .map(|_| LowDimPoint::new(0, [center[0] + rng.gen_range(-r..r), center[1] + rng.gen_range(-r..r)]))
            .collect()
    }

    #[test]
    fn two_separated_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = blob([0.0, 0.0], 20, 1.0, &mut rng);
        pts.extend(blob([50.0, 50.0], 20, 1.0, &mut rng));
        let l = cluster_embedding(&pts, 2.0, 4).unwrap();
        assert_eq!(l.cluster_count(), 2);
        assert!(l.labels()[..20].iter().all(|x| *x == Some(0)));
        assert!(l.labels()[20..].iter().all(|x| *x == Some(1)));
    }

    #[test]
    fn all_within_eps_is_one_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = blob([3.0, 3.0], 12, 0.5, &mut rng);
        let l = cluster_embedding(&pts, 2.0, 8).unwrap();
        assert_eq!(l.cluster_count(), 1);
        assert_eq!(l.noise_count(), 0);
    }

    #[test]
    fn isolated_points_are_noise() {
        let pts: Vec<_> = (0..5).map(|i| LowDimPoint::new(i, [i as f64 * 10.0, 0.0])).collect();
        let l = cluster_embedding(&pts, 1.0, 2).unwrap();
        assert_eq!(l.cluster_count(), 0);
        assert_eq!(l.noise_count(), 5);
    }

    #[test]
    fn bad_parameters() {
        assert!(cluster_embedding(&[], 0.0, 3).is_err());
        assert!(cluster_embedding(&[], 1.0, 0).is_err());
    }
}
