//! Planar geometry for cluster summaries.
//!
//! A cluster is summarized by its convex hull. The hull is split into a
//! cobweb: one wedge per hull edge (the triangle from the centroid to that
//! edge), and each wedge into `m` bands by concentric copies of the polygon
//! scaled about the centroid by `k/m`. Sections are numbered wedge-major,
//! innermost band first.
//!
//! Cuts keep the polygon convex. A ring cut drops the outermost band by
//! scaling the polygon by `(m-1)/m`. A wedge cut clips the polygon along the
//! chord joining the wedge's two spokes at a given depth, discarding the
//! side that holds the wedge's edge.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Point2 = [f64; 2];

/// Relative tolerance for boundary and degeneracy decisions.
const REL_EPS: f64 = 1e-12;

#[inline]
fn sub(a: Point2, b: Point2) -> Point2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn cross(a: Point2, b: Point2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn dot(a: Point2, b: Point2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
fn lerp(from: Point2, to: Point2, t: f64) -> Point2 {
    [from[0] + t * (to[0] - from[0]), from[1] + t * (to[1] - from[1])]
}

/// Orientation of the turn a → b → c (positive when counter-clockwise).
#[inline]
pub fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    cross(sub(b, a), sub(c, a))
}

/// Signed shoelace area of a closed loop.
pub fn shoelace_area(loop_: &[Point2]) -> f64 {
    let n = loop_.len();
    (0..n).map(|i| cross(loop_[i], loop_[(i + 1) % n])).sum::<f64>() / 2.0
}

/// True if `loop_` has at least three vertices and every consecutive turn
/// is strictly counter-clockwise.
pub fn is_strictly_convex(loop_: &[Point2]) -> bool {
    let n = loop_.len();
    n >= 3 && (0..n).all(|i| orient(loop_[i], loop_[(i + 1) % n], loop_[(i + 2) % n]) > 0.0)
}

/// Counter-clockwise, strictly convex polygon with at least three vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
}

impl ConvexPolygon {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        if !vertices.iter().all(|v| v[0].is_finite() && v[1].is_finite()) {
            return Err(Error::Contract("non-finite polygon vertex".into()));
        }
        if !is_strictly_convex(&vertices) {
            return Err(Error::Contract("vertices are not a strictly convex CCW loop".into()));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        shoelace_area(&self.vertices)
    }

    /// Area centroid.
    pub fn centroid(&self) -> Point2 {
        let n = self.vertices.len();
        let origin = self.vertices[0];
        let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let p = sub(self.vertices[i], origin);
            let q = sub(self.vertices[(i + 1) % n], origin);
            let c = cross(p, q);
            a2 += c;
            cx += (p[0] + q[0]) * c;
            cy += (p[1] + q[1]) * c;
        }
        [origin[0] + cx / (3.0 * a2), origin[1] + cy / (3.0 * a2)]
    }

    /// Length of the bounding-box diagonal.
    pub fn scale(&self) -> f64 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    }

    /// Inclusive point-in-polygon test with a small relative tolerance.
    pub fn contains(&self, p: Point2) -> bool {
        let s = self.scale();
        let tol = 1e-9 * s * s;
        let n = self.vertices.len();
        (0..n).all(|i| orient(self.vertices[i], self.vertices[(i + 1) % n], p) >= -tol)
    }

    /// The polygon scaled by `factor` about `center`.
    fn scaled_about(&self, center: Point2, factor: f64) -> Option<Self> {
        let pts: Vec<Point2> = self.vertices.iter().map(|v| lerp(center, *v, factor)).collect();
        tidy(&pts)
    }
}

/// Convex hull by Andrew's monotone chain. Collinear boundary points are
/// dropped. Fewer than three non-collinear points yield
/// [`Error::DegenerateHull`].
pub fn convex_hull(points: &[Point2]) -> Result<ConvexPolygon> {
    let mut pts: Vec<Point2> = points.to_vec();
    if pts.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::Contract("non-finite point passed to convex_hull".into()));
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::DegenerateHull { points: points.len() });
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() + 1);
    for &p in &pts {
        while hull.len() >= 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() < 3 {
        return Err(Error::DegenerateHull { points: points.len() });
    }
    Ok(ConvexPolygon { vertices: hull })
}

/// Re-hulls a loop produced by clipping or scaling, merging vertices that
/// coincide up to rounding. `None` when nothing with positive area is left.
fn tidy(loop_: &[Point2]) -> Option<ConvexPolygon> {
    let hull = convex_hull(loop_).ok()?;
    let s = hull.scale();
    let min_gap = REL_EPS * s;
    let mut v: Vec<Point2> = Vec::with_capacity(hull.len());
    for p in hull.vertices {
        if v.last().map_or(true, |q: &Point2| dot(sub(p, *q), sub(p, *q)).sqrt() > min_gap) {
            v.push(p);
        }
    }
    while v.len() > 1 && dot(sub(v[0], v[v.len() - 1]), sub(v[0], v[v.len() - 1])).sqrt() <= min_gap {
        v.pop();
    }
    if v.len() < 3 {
        return None;
    }
    let hull = convex_hull(&v).ok()?;
    if hull.area() <= REL_EPS * s * s {
        return None;
    }
    Some(hull)
}

/// One cobweb cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub id: usize,
    pub wedge: usize,
    /// 1-based band index, 1 = innermost.
    pub ring: usize,
    /// Iteration at which a point last landed in this cell.
    pub last_hit: u64,
}

/// The triangle from the centroid to one hull edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wedge {
    pub apex: Point2,
    pub start: Point2,
    pub end: Point2,
}

/// A convex polygon subdivided into wedge × ring sections.
#[derive(Debug, Clone, PartialEq)]
pub struct CobwebPartition {
    polygon: ConvexPolygon,
    centroid: Point2,
    rings: usize,
    base_angle: f64,
    /// Angle of each vertex around the centroid, relative to vertex 0.
    angles: Vec<f64>,
    sections: Vec<Section>,
}

/// Subdivides `polygon` into `rings` bands per wedge, all stamped with
/// `last_hit = t`.
pub fn build_cobweb(polygon: &ConvexPolygon, rings: usize, t: u64) -> Result<CobwebPartition> {
    if rings == 0 {
        return Err(Error::Config("ring count must be at least 1".into()));
    }
    let centroid = polygon.centroid();
    let raw: Vec<f64> = polygon
        .vertices()
        .iter()
        .map(|v| (v[1] - centroid[1]).atan2(v[0] - centroid[0]))
        .collect();
    let base_angle = raw[0];
    let angles: Vec<f64> = raw.iter().map(|a| (a - base_angle).rem_euclid(TAU)).collect();
    if angles.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Contract("vertices are not angularly ordered about the centroid".into()));
    }
    let sections = (0..polygon.len())
        .flat_map(|wedge| {
            (1..=rings).map(move |ring| Section {
                id: wedge * rings + ring - 1,
                wedge,
                ring,
                last_hit: t,
            })
        })
        .collect();
    Ok(CobwebPartition {
        polygon: polygon.clone(),
        centroid,
        rings,
        base_angle,
        angles,
        sections,
    })
}

/// Section containing `point`, or `None` outside the polygon.
pub fn locate(partition: &CobwebPartition, point: Point2) -> Option<usize> {
    partition.locate(point)
}

impl CobwebPartition {
    pub fn polygon(&self) -> &ConvexPolygon {
        &self.polygon
    }

    pub fn centroid(&self) -> Point2 {
        self.centroid
    }

    pub fn rings(&self) -> usize {
        self.rings
    }

    pub fn wedge_count(&self) -> usize {
        self.polygon.len()
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section(&self, id: usize) -> &Section {
        &self.sections[id]
    }

    pub fn section_id(&self, wedge: usize, ring: usize) -> usize {
        wedge * self.rings + ring - 1
    }

    pub fn set_last_hit(&mut self, id: usize, t: u64) {
        self.sections[id].last_hit = t;
    }

    pub fn wedge(&self, i: usize) -> Wedge {
        let v = self.polygon.vertices();
        Wedge {
            apex: self.centroid,
            start: v[i],
            end: v[(i + 1) % v.len()],
        }
    }

    /// Vertices of a section, counter-clockwise.
    pub fn section_loop(&self, id: usize) -> Vec<Point2> {
        let s = self.sections[id];
        let w = self.wedge(s.wedge);
        let m = self.rings as f64;
        let (inner, outer) = ((s.ring - 1) as f64 / m, s.ring as f64 / m);
        let a1 = lerp(w.apex, w.start, outer);
        let b1 = lerp(w.apex, w.end, outer);
        if s.ring == 1 {
            vec![w.apex, a1, b1]
        } else {
            vec![lerp(w.apex, w.start, inner), a1, b1, lerp(w.apex, w.end, inner)]
        }
    }

    pub fn section_area(&self, id: usize) -> f64 {
        shoelace_area(&self.section_loop(id))
    }

    /// Area centroid of a section.
    pub fn section_center(&self, id: usize) -> Point2 {
        // every section loop is convex with positive area
        ConvexPolygon { vertices: self.section_loop(id) }.centroid()
    }

    /// Angular binary search for the wedge, then a radial test for the band.
    /// Boundary points go to the lowest incident section id.
    pub fn locate(&self, point: Point2) -> Option<usize> {
        let d = sub(point, self.centroid);
        if d == [0.0, 0.0] {
            return Some(0);
        }
        let a = (d[1].atan2(d[0]) - self.base_angle).rem_euclid(TAU);
        let k = self.angles.partition_point(|&x| x < a);
        let wedge = k.saturating_sub(1);

        let w = self.wedge(wedge);
        let edge = sub(w.end, w.start);
        let normal = [edge[1], -edge[0]];
        let depth = dot(normal, d) / dot(normal, sub(w.start, w.apex));
        if depth > 1.0 + REL_EPS {
            return None;
        }
        let m = self.rings as f64;
        let ring = ((depth * m - REL_EPS).ceil().max(1.0) as usize).min(self.rings);
        Some(self.section_id(wedge, ring))
    }
}

/// Clips `polygon` along the chord joining the wedge's spokes at fraction
/// `depth` of their length, removing the side that holds the wedge's edge.
///
/// Vertices beyond the chord are deleted and the two points where the chord
/// line meets the boundary are inserted. `depth = 0` cuts through the
/// centroid. Returns `None` when nothing with positive area remains.
pub fn cut_wedge(polygon: &ConvexPolygon, wedge: &Wedge, depth: f64) -> Option<ConvexPolygon> {
    let depth = depth.clamp(0.0, 1.0);
    let edge = sub(wedge.end, wedge.start);
    let normal = [edge[1], -edge[0]];
    let anchor = lerp(wedge.apex, wedge.start, depth);
    let side = |p: Point2| dot(normal, sub(p, anchor));

    let v = polygon.vertices();
    let n = v.len();
    let mut out: Vec<Point2> = Vec::with_capacity(n + 2);
    for i in 0..n {
        let (p, q) = (v[i], v[(i + 1) % n]);
        let (sp, sq) = (side(p), side(q));
        if sp <= 0.0 {
            out.push(p);
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            out.push(lerp(p, q, sp / (sp - sq)));
        }
    }
    if out.len() < 3 {
        return None;
    }
    tidy(&out)
}

/// Removes the outermost of `rings` bands. Only the outermost band may be
/// cut; with a single band the polygon disappears.
pub fn cut_ring(polygon: &ConvexPolygon, ring_index: usize, rings: usize) -> Result<Option<ConvexPolygon>> {
    if rings == 0 || ring_index != rings {
        return Err(Error::Contract(format!(
            "only the outermost ring ({rings}) can be cut, not ring {ring_index}"
        )));
    }
    if rings == 1 {
        return Ok(None);
    }
    Ok(polygon.scaled_about(polygon.centroid(), (rings - 1) as f64 / rings as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> ConvexPolygon {
        ConvexPolygon::new(vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]).unwrap()
    }

    fn random_hull(seed: u64, n: usize) -> ConvexPolygon {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Point2> = (0..n).map(|_| [rng.gen_range(-3.0..5.0), rng.gen_range(-2.0..1.0)]).collect();
        convex_hull(&pts).unwrap()
    }

    #[test]
    fn hull_of_square_with_center() {
        let h = convex_hull(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]]).unwrap();
        assert_eq!(h.len(), 4);
        assert_eq!(h.area(), 1.0);
    }

    #[test]
    fn hull_of_triangle_is_itself() {
        let h = convex_hull(&[[0.0, 0.0], [2.0, 1.0], [0.0, 3.0]]).unwrap();
        let mut v = h.vertices().to_vec();
        v.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        assert_eq!(v, vec![[0.0, 0.0], [0.0, 3.0], [2.0, 1.0]]);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(convex_hull(&[[0.0, 0.0], [1.0, 1.0]]), Err(Error::DegenerateHull { .. })));
        assert!(matches!(
            convex_hull(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]),
            Err(Error::DegenerateHull { .. })
        ));
        assert!(matches!(
            convex_hull(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]),
            Err(Error::DegenerateHull { .. })
        ));
    }

    #[test]
    fn hull_is_idempotent() {
        let h = random_hull(4, 300);
        assert_eq!(convex_hull(h.vertices()).unwrap(), h);
    }

    #[test]
    fn single_ring_sections_are_the_fan() {
        let sq = square();
        let cw = build_cobweb(&sq, 1, 0).unwrap();
        assert_eq!(cw.sections().len(), 4);
        for s in cw.sections() {
            let w = cw.wedge(s.wedge);
            assert_eq!(cw.section_loop(s.id), vec![w.apex, w.start, w.end]);
        }
    }

    #[test]
    fn square_two_rings_tile() {
        let sq = square();
        let cw = build_cobweb(&sq, 2, 7).unwrap();
        assert_eq!(cw.sections().len(), 8);
        assert!(cw.sections().iter().all(|s| s.last_hit == 7));
        let inner: f64 = cw.sections().iter().filter(|s| s.ring == 1).map(|s| cw.section_area(s.id)).sum();
        assert!((inner - 1.0).abs() < 1e-12, "inner ring is the half-scale square");
        let total: f64 = (0..8).map(|id| cw.section_area(id)).sum();
        assert!((total - sq.area()).abs() < 1e-9);
    }

    #[test]
    fn random_hull_sections_tile() {
        for seed in 0..20 {
            let h = random_hull(seed, 40);
            let cw = build_cobweb(&h, 3, 0).unwrap();
            let total: f64 = (0..cw.sections().len()).map(|id| cw.section_area(id)).sum();
            assert!((total - h.area()).abs() <= 1e-9 * h.area());
        }
    }

    #[test]
    fn locate_simple_cases() {
        let cw = build_cobweb(&square(), 3, 0).unwrap();
        assert_eq!(cw.locate(cw.centroid()), Some(0));
        assert_eq!(cw.locate([100.0, -40.0]), None);
        assert_eq!(cw.section(cw.locate([0.05, 0.0]).unwrap()).ring, 1);
        assert_eq!(cw.section(cw.locate([0.95, 0.1]).unwrap()).ring, 3);
        // exact vertex lies on two spokes' shared boundary; lowest id wins
        let v1 = cw.polygon().vertices()[1];
        let id = cw.locate(v1).unwrap();
        assert_eq!(cw.section(id).ring, 3);
        assert_eq!(cw.section(id).wedge, 0);
    }

    #[test]
    fn section_centers_locate_to_their_section() {
        let h = random_hull(9, 60);
        let cw = build_cobweb(&h, 4, 0).unwrap();
        for s in cw.sections() {
            assert_eq!(cw.locate(cw.section_center(s.id)), Some(s.id));
        }
    }

    #[test]
    fn wedge_cut_of_square_loses_area() {
        let sq = square();
        let cw = build_cobweb(&sq, 2, 0).unwrap();
        let out = cut_wedge(&sq, &cw.wedge(0), 0.5).unwrap();
        assert!(is_strictly_convex(out.vertices()));
        assert!(out.area() < sq.area());
        assert!((out.area() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cutting_every_whole_wedge_empties_the_polygon() {
        let h = random_hull(2, 50);
        let cw = build_cobweb(&h, 3, 0).unwrap();
        let mut current = Some(h.clone());
        for i in 0..cw.wedge_count() {
            if let Some(poly) = current.as_ref() {
                current = cut_wedge(poly, &cw.wedge(i), 0.0);
            }
        }
        assert!(current.is_none());
    }

    #[test]
    fn cut_with_stale_wedge_stays_convex() {
        // Wedge taken from a different polygon: the chord lies beyond every
        // vertex of the square, so the square survives unchanged.
        let sq = square();
        let stale = Wedge { apex: [0.0, 0.0], start: [3.0, -3.0], end: [3.0, 3.0] };
        let out = cut_wedge(&sq, &stale, 0.5).unwrap();
        assert!(is_strictly_convex(out.vertices()));
        assert!((out.area() - sq.area()).abs() < 1e-12);
    }

    #[test]
    fn ring_cuts() {
        let sq = square();
        let half = cut_ring(&sq, 2, 2).unwrap().unwrap();
        assert!((half.area() / sq.area() - 0.25).abs() < 1e-12);
        assert!(cut_ring(&sq, 1, 1).unwrap().is_none());
        assert!(matches!(cut_ring(&sq, 1, 3), Err(Error::Contract(_))));

        let h = random_hull(5, 30);
        let cut = cut_ring(&h, 3, 3).unwrap().unwrap();
        assert!((cut.area() - h.area() * 4.0 / 9.0).abs() < 1e-9 * h.area());
    }
}
