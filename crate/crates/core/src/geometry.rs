//! Planar domain partitioning, receptor layout and boundary sampling.
//!
//! Subdomains are non-overlapping axis-aligned tiles of a parent box. Two
//! tiles that share an edge are coupled along that edge; coupling points are
//! physically coincident, so a boundary pair carries the same coordinate for
//! both sides.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, tag};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid bounding box: x [{x_min}, {x_max}], y [{y_min}, {y_max}]")]
    InvalidBBox { x_min: f64, y_min: f64, x_max: f64, y_max: f64 },
    #[error("grid counts must be positive (got {gx} x {gy})")]
    InvalidGrid { gx: usize, gy: usize },
    #[error("receptor count must be positive")]
    NoReceptors,
    #[error("no shared edge between subdomains {a} and {b}")]
    NoSharedEdge { a: usize, b: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, other: Point, s: f64) -> Point {
        Point::new(self.x + s * (other.x - self.x), self.y + s * (other.y - self.y))
    }

    pub fn with_height(self, z: f64) -> Point3 {
        Point3 { x: self.x, y: self.y, z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: Point,
    pub end: Point,
}

impl Segment {
    pub const fn new(start: Point, end: Point) -> Self {
        Self { start, end }
    }

    pub fn length(&self) -> f64 {
        self.start.distance(self.end)
    }

    pub fn midpoint(&self) -> Point {
        self.start.lerp(self.end, 0.5)
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        let (dx, dy) = (self.end.x - self.start.x, self.end.y - self.start.y);
        let len2 = dx * dx + dy * dy;
        if len2 == 0.0 {
            return self.start.distance(p);
        }
        let s = (((p.x - self.start.x) * dx + (p.y - self.start.y) * dy) / len2).clamp(0.0, 1.0);
        self.start.lerp(self.end, s).distance(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let b = Self { x_min, y_min, x_max, y_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(GeometryError::InvalidBBox {
                x_min: self.x_min,
                y_min: self.y_min,
                x_max: self.x_max,
                y_max: self.y_max,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn centroid(&self) -> Point {
        Point::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    /// Closed containment.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn contains_strict(&self, p: Point) -> bool {
        p.x > self.x_min && p.x < self.x_max && p.y > self.y_min && p.y < self.y_max
    }

    pub fn overlap_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// Distance from `p` to the nearest point of the box perimeter.
    pub fn distance_to_edge(&self, p: Point) -> f64 {
        let dx = (p.x - self.x_min).min(self.x_max - p.x);
        let dy = (p.y - self.y_min).min(self.y_max - p.y);
        dx.min(dy)
    }
}

/// A shared edge with a neighbouring subdomain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRef {
    pub neighbor: usize,
    pub edge: Segment,
    /// Importance weight of this boundary in the consistency penalty.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subdomain {
    pub id: usize,
    pub bbox: BBox,
    /// Ids into the scenario's source table.
    pub line_sources: Vec<usize>,
    pub receptors: Vec<Point>,
    pub boundary_refs: Vec<BoundaryRef>,
}

impl Subdomain {
    pub fn shared_edge(&self, neighbor: usize) -> Option<&BoundaryRef> {
        self.boundary_refs.iter().find(|b| b.neighbor == neighbor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPair {
    /// `(m, n)`: `p1` is evaluated by subdomain `m`, `p2` by subdomain `n`.
    pub boundary: (usize, usize),
    pub p1: Point,
    pub p2: Point,
    pub epsilon: f64,
}

/// Splits `bbox` into a `gx` by `gy` grid of tiles with row-major ids
/// (`id = iy * gx + ix`). Grid lines are computed once, so abutting tiles
/// share bit-identical edge coordinates.
pub fn partition_domain(bbox: BBox, gx: usize, gy: usize) -> Result<Vec<Subdomain>, GeometryError> {
    bbox.validate()?;
    if gx == 0 || gy == 0 {
        return Err(GeometryError::InvalidGrid { gx, gy });
    }
    let line = |lo: f64, hi: f64, n: usize, i: usize| {
        if i == n {
            hi
        } else {
            lo + (hi - lo) * (i as f64) / (n as f64)
        }
    };
    let xs: Vec<f64> = (0..=gx).map(|i| line(bbox.x_min, bbox.x_max, gx, i)).collect();
    let ys: Vec<f64> = (0..=gy).map(|i| line(bbox.y_min, bbox.y_max, gy, i)).collect();

    let mut subs = Vec::with_capacity(gx * gy);
    for iy in 0..gy {
        for ix in 0..gx {
            let id = iy * gx + ix;
            let tile = BBox { x_min: xs[ix], y_min: ys[iy], x_max: xs[ix + 1], y_max: ys[iy + 1] };
            let mut refs = Vec::new();
            // West, east, south, north.
            if ix > 0 {
                refs.push(BoundaryRef {
                    neighbor: id - 1,
                    edge: Segment::new(Point::new(xs[ix], ys[iy]), Point::new(xs[ix], ys[iy + 1])),
                    epsilon: 1.0,
                });
            }
            if ix + 1 < gx {
                refs.push(BoundaryRef {
                    neighbor: id + 1,
                    edge: Segment::new(Point::new(xs[ix + 1], ys[iy]), Point::new(xs[ix + 1], ys[iy + 1])),
                    epsilon: 1.0,
                });
            }
            if iy > 0 {
                refs.push(BoundaryRef {
                    neighbor: id - gx,
                    edge: Segment::new(Point::new(xs[ix], ys[iy]), Point::new(xs[ix + 1], ys[iy])),
                    epsilon: 1.0,
                });
            }
            if iy + 1 < gy {
                refs.push(BoundaryRef {
                    neighbor: id + gx,
                    edge: Segment::new(Point::new(xs[ix], ys[iy + 1]), Point::new(xs[ix + 1], ys[iy + 1])),
                    epsilon: 1.0,
                });
            }
            subs.push(Subdomain { id, bbox: tile, line_sources: Vec::new(), receptors: Vec::new(), boundary_refs: refs });
        }
    }
    Ok(subs)
}

/// Jittered-grid receptor layout. The box is cut into `nx * ny >= n_r` cells
/// with roughly square aspect; if there are more cells than receptors, a
/// seeded subset of cells is kept. Each receptor sits at its cell centre
/// plus a uniform offset of at most 40% of the cell size per axis, so every
/// point is strictly inside the box. A one-cell grid yields the centroid.
pub fn place_receptors(sub: &Subdomain, n_r: usize, seed: u64) -> Result<Vec<Point>, GeometryError> {
    if n_r == 0 {
        return Err(GeometryError::NoReceptors);
    }
    let b = sub.bbox;
    let aspect = b.width() / b.height();
    let nx = ((n_r as f64 * aspect).sqrt().ceil() as usize).clamp(1, n_r);
    let ny = n_r.div_ceil(nx);
    let mut rng = rng::stream(seed, &[tag::RECEPTORS, sub.id as u64]);

    let mut cells: Vec<(usize, usize)> = (0..ny).flat_map(|j| (0..nx).map(move |i| (i, j))).collect();
    // Partial Fisher-Yates: drop surplus cells, then restore row-major order.
    let surplus = cells.len() - n_r;
    for k in 0..surplus {
        let pick = rng.random_range(k..cells.len());
        cells.swap(k, pick);
    }
    let mut kept = cells.split_off(surplus);
    kept.sort_by_key(|&(i, j)| (j, i));

    let (cw, ch) = (b.width() / nx as f64, b.height() / ny as f64);
    let jitter = if nx * ny == 1 { 0.0 } else { 0.4 };
    Ok(kept
        .into_iter()
        .map(|(i, j)| {
            let ox: f64 = rng.random_range(-1.0..=1.0);
            let oy: f64 = rng.random_range(-1.0..=1.0);
            Point::new(
                b.x_min + cw * (i as f64 + 0.5 + jitter * ox),
                b.y_min + ch * (j as f64 + 0.5 + jitter * oy),
            )
        })
        .collect())
}

/// Equally spaced coupling points on the shared edge of `a` and `b`, at
/// parametric positions `k / (n_b + 1)` for `k = 1..=n_b`. Edge endpoints
/// (tile corners) are never sampled.
pub fn sample_boundary(a: &Subdomain, b: &Subdomain, n_b: usize) -> Result<Vec<BoundaryPair>, GeometryError> {
    let shared = a.shared_edge(b.id).ok_or(GeometryError::NoSharedEdge { a: a.id, b: b.id })?;
    Ok((1..=n_b)
        .map(|k| {
            let p = shared.edge.start.lerp(shared.edge.end, k as f64 / (n_b + 1) as f64);
            BoundaryPair { boundary: (a.id, b.id), p1: p, p2: p, epsilon: shared.epsilon }
        })
        .collect())
}

/// Index of the subdomain containing `p`, preferring the lowest id on ties.
pub fn locate(subdomains: &[Subdomain], p: Point) -> Option<usize> {
    subdomains.iter().position(|s| s.bbox.contains(p))
}

/// All subdomains whose closed box contains `p` (several on shared edges).
pub fn locate_all(subdomains: &[Subdomain], p: Point) -> Vec<usize> {
    subdomains.iter().filter(|s| s.bbox.contains(p)).map(|s| s.id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> BBox {
        BBox::new(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn identity_partition() {
        let subs = partition_domain(unit(), 1, 1).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].bbox, unit());
        assert!(subs[0].boundary_refs.is_empty());
    }

    #[test]
    fn two_tiles_share_one_vertical_edge() {
        let subs = partition_domain(unit(), 2, 1).unwrap();
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0].boundary_refs.len(), 1);
        assert_eq!(subs[1].boundary_refs.len(), 1);
        let e = subs[0].boundary_refs[0].edge;
        assert_eq!(e, Segment::new(Point::new(0.5, 0.0), Point::new(0.5, 1.0)));
        assert_eq!(subs[1].boundary_refs[0].edge, e);
    }

    #[test]
    fn twelve_tile_grid_neighbour_counts() {
        let subs = partition_domain(BBox::new(0.0, 0.0, 4.0, 3.0).unwrap(), 4, 3).unwrap();
        assert_eq!(subs.len(), 12);
        let counts: Vec<usize> = subs.iter().map(|s| s.boundary_refs.len()).collect();
        // Row-major: corners 0, 3, 8, 11; interior 5, 6.
        for (id, c) in counts.iter().enumerate() {
            let expected = match id {
                0 | 3 | 8 | 11 => 2,
                5 | 6 => 4,
                _ => 3,
            };
            assert_eq!(*c, expected, "subdomain {id}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(partition_domain(unit(), 0, 1).unwrap_err(), GeometryError::InvalidGrid { gx: 0, gy: 1 });
        assert!(BBox::new(1.0, 0.0, 1.0, 1.0).is_err());
        let s = &partition_domain(unit(), 1, 1).unwrap()[0];
        assert_eq!(place_receptors(s, 0, 1), Err(GeometryError::NoReceptors));
    }

    #[test]
    fn single_receptor_is_centroid() {
        let s = &partition_domain(unit(), 1, 1).unwrap()[0];
        assert_eq!(place_receptors(s, 1, 99).unwrap(), vec![Point::new(0.5, 0.5)]);
    }

    #[test]
    fn four_receptors_one_per_quadrant() {
        let s = &partition_domain(unit(), 1, 1).unwrap()[0];
        for seed in 0..20 {
            let pts = place_receptors(s, 4, seed).unwrap();
            let quad = |p: &Point| ((p.x >= 0.5) as usize, (p.y >= 0.5) as usize);
            for q in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                assert_eq!(pts.iter().filter(|p| quad(p) == q).count(), 1, "seed {seed}, quadrant {q:?}");
            }
        }
    }

    #[test]
    fn three_hundred_receptors_distinct_and_deterministic() {
        let s = &partition_domain(BBox::new(0.0, 0.0, 1000.0, 800.0).unwrap(), 1, 1).unwrap()[0];
        let a = place_receptors(s, 300, 7).unwrap();
        let b = place_receptors(s, 300, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        assert!(a.iter().all(|p| s.bbox.contains_strict(*p)));
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                assert!(a[i] != a[j]);
            }
        }
    }

    #[test]
    fn boundary_samples() {
        let subs = partition_domain(BBox::new(0.0, 0.0, 2.0, 1.0).unwrap(), 2, 1).unwrap();
        let one = sample_boundary(&subs[0], &subs[1], 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].p1, Point::new(1.0, 0.5));
        let three = sample_boundary(&subs[0], &subs[1], 3).unwrap();
        let ys: Vec<f64> = three.iter().map(|p| p.p1.y).collect();
        assert_eq!(ys, vec![0.25, 0.5, 0.75]);
        assert!(three.iter().all(|p| p.p1 == p.p2 && p.p1.x == 1.0));
    }

    #[test]
    fn non_adjacent_has_no_edge() {
        let subs = partition_domain(BBox::new(0.0, 0.0, 3.0, 1.0).unwrap(), 3, 1).unwrap();
        assert_eq!(
            sample_boundary(&subs[0], &subs[2], 2).unwrap_err(),
            GeometryError::NoSharedEdge { a: 0, b: 2 }
        );
    }

    proptest! {
        #[test]
        fn partition_is_complete_and_symmetric(
            x0 in -1e4f64..1e4, y0 in -1e4f64..1e4, w in 1.0f64..1e4, h in 1.0f64..1e4,
            gx in 1usize..6, gy in 1usize..6, n_b in 1usize..6,
        ) {
            let bbox = BBox::new(x0, y0, x0 + w, y0 + h).unwrap();
            let subs = partition_domain(bbox, gx, gy).unwrap();
            prop_assert_eq!(subs.len(), gx * gy);
            let total: f64 = subs.iter().map(|s| s.bbox.area()).sum();
            prop_assert!((total - bbox.area()).abs() <= 1e-12 * bbox.area());
            for a in &subs {
                for b in &subs {
                    if a.id != b.id {
                        prop_assert_eq!(a.bbox.overlap_area(&b.bbox), 0.0);
                    }
                }
                for r in &a.boundary_refs {
                    let back = subs[r.neighbor].shared_edge(a.id).expect("symmetric neighbour");
                    prop_assert_eq!(back.edge, r.edge);
                    prop_assert!(r.edge.length() > 0.0);
                    prop_assert!(r.epsilon > 0.0);
                    for pair in sample_boundary(a, &subs[r.neighbor], n_b).unwrap() {
                        prop_assert_eq!(pair.p1, pair.p2);
                        prop_assert!(r.edge.distance_to(pair.p1) < 1e-9);
                    }
                }
            }
        }

        #[test]
        fn receptors_inside(n_r in 1usize..400, seed in any::<u64>(), w in 10.0f64..5000.0, h in 10.0f64..5000.0) {
            let s = &partition_domain(BBox::new(0.0, 0.0, w, h).unwrap(), 1, 1).unwrap()[0];
            let pts = place_receptors(s, n_r, seed).unwrap();
            prop_assert_eq!(pts.len(), n_r);
            prop_assert!(pts.iter().all(|p| s.bbox.contains_strict(*p)));
        }
    }
}
