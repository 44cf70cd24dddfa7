//! Static KD-tree with median splits on the widest axis, for exact radius
//! queries in any dimension.

use crate::tsne::{common_dim, sq_dist};
use crate::{Error, HighDimPoint, Result};

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    ids: Vec<u64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    height: usize,
}

impl KdTree {
    pub fn build(points: &[HighDimPoint]) -> Result<Self> {
        Self::build_with_leaf_size(points, DEFAULT_LEAF_SIZE)
    }

    pub fn build_with_leaf_size(points: &[HighDimPoint], leaf_size: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("cannot build a KD-tree over no points".into()));
        }
        let dim = common_dim(points)?;
        let coords = points.iter().flat_map(|p| p.coords.iter().copied()).collect();
        let ids = points.iter().map(|p| p.id).collect();
        Self::from_flat(dim, coords, ids, leaf_size)
    }

    /// Builds over row-major `coords` (`ids.len()` rows of `dim` values).
    pub fn from_flat(dim: usize, coords: Vec<f64>, ids: Vec<u64>, leaf_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Config("cannot build a KD-tree over no points".into()));
        }
        if dim == 0 || coords.len() != dim * ids.len() {
            return Err(Error::Config("coordinate buffer does not match ids".into()));
        }
        let mut tree = Self {
            dim,
            coords,
            order: (0..ids.len()).collect(),
            ids,
            nodes: Vec::new(),
            height: 0,
        };
        let n = tree.ids.len();
        tree.height = tree.grow(0, n, leaf_size.max(1));
        Ok(tree)
    }

    fn coord(&self, idx: usize, axis: usize) -> f64 {
        self.coords[idx * self.dim + axis]
    }

    pub fn point(&self, idx: usize) -> &[f64] {
        &self.coords[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Returns the height of the subtree rooted at the pushed node.
    fn grow(&mut self, start: usize, end: usize, leaf_size: usize) -> usize {
        let node = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= leaf_size {
            return 0;
        }
        let (axis, spread) = (0..self.dim)
            .map(|axis| {
                let (lo, hi) = self.order[start..end].iter().fold(
                    (f64::INFINITY, f64::NEG_INFINITY),
                    |(lo, hi), &i| {
                        let v = self.coord(i, axis);
                        (lo.min(v), hi.max(v))
                    },
                );
                (axis, hi - lo)
            })
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        if spread <= 0.0 {
            // all points coincide
            return 0;
        }
        let mid = start + (end - start) / 2;
        let (coords, dim) = (&self.coords, self.dim);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * dim + axis].total_cmp(&coords[b * dim + axis])
        });
        let value = self.coord(self.order[mid], axis);
        let left = self.nodes.len();
        let hl = self.grow(start, mid, leaf_size);
        let right = self.nodes.len();
        let hr = self.grow(mid, end, leaf_size);
        self.nodes[node] = Node::Split { axis, value, left, right };
        1 + hl.max(hr)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, idx: usize) -> u64 {
        self.ids[idx]
    }

    /// Indices (into the build order) of all points within `radius` of
    /// `query`, inclusive, in ascending index order.
    pub fn within(&self, query: &[f64], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit(query, radius, &mut |i| out.push(i));
        out.sort_unstable();
        out
    }

    /// Number of points within `radius` of `query`, inclusive.
    pub fn count_within(&self, query: &[f64], radius: f64) -> usize {
        let mut count = 0;
        self.visit(query, radius, &mut |_| count += 1);
        count
    }

    fn visit(&self, query: &[f64], radius: f64, f: &mut impl FnMut(usize)) {
        debug_assert_eq!(query.len(), self.dim);
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        if sq_dist(self.point(i), query) <= r2 {
                            f(i);
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let q = query[axis];
                    if q - radius <= value {
                        stack.push(left);
                    }
                    if q + radius >= value {
                        stack.push(right);
                    }
                }
            }
        }
    }

    /// Ids of the points within `radius` of `query`, excluding `query.id`.
    pub fn radius_neighbors(&self, query: &HighDimPoint, radius: f64) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .within(&query.coords, radius)
            .into_iter()
            .map(|i| self.ids[i])
            .filter(|&id| id != query.id)
            .collect();
        ids.sort_unstable();
        ids
    }
}
