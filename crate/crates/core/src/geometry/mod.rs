//! Planar geometry: points, convex polygons, the Voronoi tessellation of
//! antenna sites and the stop/antenna compatibility maps derived from it.

mod compat;
mod voronoi;

pub use compat::{build_compatibility, input_fingerprint, CompatibilityMap};
pub use voronoi::{build_voronoi, ClipRect, NearestSite, Tessellation, VoronoiCell};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn dist2(self, o: Point) -> f64 {
        let (dx, dy) = (self.x - o.x, self.y - o.y);
        dx * dx + dy * dy
    }

    #[inline]
    pub fn dist(self, o: Point) -> f64 {
        self.dist2(o).sqrt()
    }
}

#[inline]
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let len2 = abx * abx + aby * aby;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * abx + (p.y - a.y) * aby) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * abx, a.y + t * aby))
}

/// Inside test for a counterclockwise convex ring; boundary counts as inside.
pub fn convex_contains(ring: &[Point], p: Point) -> bool {
    if ring.len() < 3 {
        return false;
    }
    let n = ring.len();
    (0..n).all(|i| cross(ring[i], ring[(i + 1) % n], p) >= 0.0)
}

/// Minimum distance from `p` to a counterclockwise convex ring, 0 inside.
pub fn distance_to_convex_polygon(p: Point, ring: &[Point]) -> f64 {
    match ring.len() {
        0 => f64::INFINITY,
        1 => p.dist(ring[0]),
        _ => {
            if convex_contains(ring, p) {
                return 0.0;
            }
            let n = ring.len();
            (0..n)
                .map(|i| point_segment_distance(p, ring[i], ring[(i + 1) % n]))
                .fold(f64::INFINITY, f64::min)
        }
    }
}

/// Whether the disc of radius `d` around `center` intersects the polygon.
pub fn circle_polygon_overlap(center: Point, d: f64, ring: &[Point]) -> bool {
    distance_to_convex_polygon(center, ring) <= d
}

/// Shoelace area, positive for counterclockwise rings.
pub fn polygon_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
}

pub fn is_convex_ccw(ring: &[Point]) -> bool {
    let n = ring.len();
    n >= 3 && (0..n).all(|i| cross(ring[i], ring[(i + 1) % n], ring[(i + 2) % n]) >= -1e-6)
}
