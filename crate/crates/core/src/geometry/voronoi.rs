use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{polygon_area, Point};
use crate::error::{Error, Result};
use crate::records::LocationIdx;

/// Axis-aligned rectangle the tessellation is clipped to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipRect {
    pub min: Point,
    pub max: Point,
}

impl ClipRect {
    /// Bounding box of `points` expanded by `margin` on every side.
    pub fn around(points: impl IntoIterator<Item = Point>, margin: f64) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (mut min, mut max) = (first, first);
        for p in it {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Some(Self {
            min: Point::new(min.x - margin, min.y - margin),
            max: Point::new(max.x + margin, max.y + margin),
        })
    }

    pub fn ring(&self) -> Vec<Point> {
        vec![
            self.min,
            Point::new(self.max.x, self.min.y),
            self.max,
            Point::new(self.min.x, self.max.y),
        ]
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Voronoi cell of one unique antenna location. Antennas sharing exact
/// coordinates share the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiCell {
    pub site: Point,
    /// Counterclockwise convex ring.
    pub polygon: Vec<Point>,
    pub antennas: Vec<LocationIdx>,
}

impl VoronoiCell {
    pub fn area(&self) -> f64 {
        polygon_area(&self.polygon)
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.polygon {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        (min, max)
    }
}

#[derive(Debug, Clone)]
pub struct Tessellation {
    pub clip: ClipRect,
    cells: Vec<VoronoiCell>,
    cell_of_antenna: Vec<usize>,
}

impl Tessellation {
    pub fn cells(&self) -> &[VoronoiCell] {
        &self.cells
    }

    pub fn cell_of(&self, antenna: LocationIdx) -> &VoronoiCell {
        &self.cells[self.cell_of_antenna[antenna.index()]]
    }

    pub fn cell_index_of(&self, antenna: LocationIdx) -> usize {
        self.cell_of_antenna[antenna.index()]
    }

    pub fn n_antennas(&self) -> usize {
        self.cell_of_antenna.len()
    }
}

/// Uniform bucket grid over a point set, used for nearest-site lookups and
/// for visiting Voronoi neighbours ring by ring.
#[derive(Debug, Clone)]
pub struct NearestSite {
    points: Vec<Point>,
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl NearestSite {
    pub fn new(points: &[Point]) -> Self {
        let rect = ClipRect::around(points.iter().copied(), 1.0)
            .unwrap_or(ClipRect { min: Point::new(0.0, 0.0), max: Point::new(1.0, 1.0) });
        let n = points.len().max(1) as f64;
        let cell = (rect.area() / n).sqrt().max(1e-3);
        let nx = ((rect.width() / cell).ceil() as usize).clamp(1, 4096);
        let ny = ((rect.height() / cell).ceil() as usize).clamp(1, 4096);
        let cell = (rect.width() / nx as f64).max(rect.height() / ny as f64);
        let mut grid = Self {
            points: points.to_vec(),
            origin: rect.min,
            cell,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
        };
        for (i, &p) in points.iter().enumerate() {
            let (cx, cy) = grid.cell_xy(p);
            grid.buckets[cy * nx + cx].push(i as u32);
        }
        grid
    }

    fn cell_xy(&self, p: Point) -> (usize, usize) {
        let cx = ((p.x - self.origin.x) / self.cell).floor();
        let cy = ((p.y - self.origin.y) / self.cell).floor();
        (
            (cx.max(0.0) as usize).min(self.nx - 1),
            (cy.max(0.0) as usize).min(self.ny - 1),
        )
    }

    /// Calls `f` with every point index in the Chebyshev ring `r` of grid
    /// cells around the cell of `p`. Returns false once the ring lies
    /// entirely outside the grid.
    fn visit_ring(&self, p: Point, r: usize, mut f: impl FnMut(u32)) -> bool {
        let (cx, cy) = self.cell_xy(p);
        let (cx, cy, r) = (cx as isize, cy as isize, r as isize);
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        if cx - r < 0 && cy - r < 0 && cx + r >= nx && cy + r >= ny {
            return false;
        }
        let mut visit = |x: isize, y: isize| {
            if x >= 0 && y >= 0 && x < nx && y < ny {
                for &i in &self.buckets[(y * nx + x) as usize] {
                    f(i);
                }
            }
        };
        if r == 0 {
            visit(cx, cy);
            return true;
        }
        for x in cx - r..=cx + r {
            visit(x, cy - r);
            visit(x, cy + r);
        }
        for y in cy - r + 1..cy + r {
            visit(cx - r, y);
            visit(cx + r, y);
        }
        true
    }

    /// Lower bound on the distance from `p` to any point in ring `r`.
    fn ring_clearance(&self, r: usize) -> f64 {
        r.saturating_sub(1) as f64 * self.cell
    }

    /// Index of the point closest to `p` (lowest index on exact ties).
    pub fn nearest(&self, p: Point) -> Option<usize> {
        if self.points.is_empty() {
            return None;
        }
        let mut best: Option<(f64, u32)> = None;
        for r in 0.. {
            if let Some((d2, _)) = best {
                if self.ring_clearance(r).powi(2) > d2 {
                    break;
                }
            }
            let more = self.visit_ring(p, r, |i| {
                let d2 = p.dist2(self.points[i as usize]);
                if best.is_none_or(|(bd, bi)| d2 < bd || (d2 == bd && i < bi)) {
                    best = Some((d2, i));
                }
            });
            if !more {
                break;
            }
        }
        best.map(|(_, i)| i as usize)
    }
}

/// Keeps the part of `poly` on the `site` side of the bisector of `site`
/// and `other`.
fn clip_by_bisector(poly: &[Point], site: Point, other: Point, out: &mut Vec<Point>) {
    out.clear();
    let (nx, ny) = (other.x - site.x, other.y - site.y);
    let (mx, my) = (0.5 * (site.x + other.x), 0.5 * (site.y + other.y));
    let side = |p: Point| (p.x - mx) * nx + (p.y - my) * ny;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (fa, fb) = (side(a), side(b));
        if fa <= 0.0 {
            out.push(a);
        }
        if (fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0) {
            let t = fa / (fa - fb);
            out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
        }
    }
}

fn cell_polygon(grid: &NearestSite, me: usize, clip: &ClipRect) -> Vec<Point> {
    let site = grid.points[me];
    let mut poly = clip.ring();
    let mut scratch = Vec::with_capacity(16);
    for r in 0.. {
        let reach = poly.iter().map(|v| v.dist(site)).fold(0.0, f64::max);
        if grid.ring_clearance(r) > 2.0 * reach {
            break;
        }
        let mut neighbours = Vec::new();
        let more = grid.visit_ring(site, r, |i| {
            if i as usize != me {
                neighbours.push(i);
            }
        });
        // Closest first: early cuts shrink the polygon fastest.
        neighbours.sort_by(|&a, &b| {
            site.dist2(grid.points[a as usize])
                .total_cmp(&site.dist2(grid.points[b as usize]))
                .then(a.cmp(&b))
        });
        for i in neighbours {
            let q = grid.points[i as usize];
            if q.dist(site) > 2.0 * reach {
                continue;
            }
            clip_by_bisector(&poly, site, q, &mut scratch);
            std::mem::swap(&mut poly, &mut scratch);
        }
        if !more {
            break;
        }
    }
    poly
}

/// Voronoi tessellation of the antenna sites (indexed by `LocationIdx`),
/// clipped to `clip`. Exact duplicate coordinates collapse to one cell.
pub fn build_voronoi(sites: &[Point], clip: ClipRect) -> Result<Tessellation> {
    if sites.is_empty() {
        return Err(Error::NoSites);
    }
    if let Some(p) = sites.iter().find(|p| !p.is_finite() || !clip.contains(**p)) {
        return Err(Error::InvalidCoordinate(format!("site {p:?} outside the clip rectangle")));
    }

    let mut order: Vec<usize> = (0..sites.len()).collect();
    order.sort_by(|&a, &b| {
        sites[a]
            .x
            .total_cmp(&sites[b].x)
            .then(sites[a].y.total_cmp(&sites[b].y))
            .then(a.cmp(&b))
    });
    let mut unique: Vec<Point> = Vec::new();
    let mut members: Vec<Vec<LocationIdx>> = Vec::new();
    let mut cell_of_antenna = vec![0usize; sites.len()];
    for &i in &order {
        if unique.last() != Some(&sites[i]) {
            unique.push(sites[i]);
            members.push(Vec::new());
        }
        members.last_mut().unwrap().push(LocationIdx(i as u32));
        cell_of_antenna[i] = unique.len() - 1;
    }

    let grid = NearestSite::new(&unique);
    let polygons: Vec<Vec<Point>> = (0..unique.len())
        .into_par_iter()
        .map(|i| cell_polygon(&grid, i, &clip))
        .collect();

    let cells = polygons
        .into_iter()
        .zip(unique)
        .zip(members)
        .map(|((polygon, site), mut antennas)| {
            antennas.sort();
            VoronoiCell {
                site,
                polygon,
                antennas,
            }
        })
        .collect();

    Ok(Tessellation {
        clip,
        cells,
        cell_of_antenna,
    })
}
