use std::io::{BufRead, Write};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{circle_polygon_overlap, Point, Tessellation};
use crate::error::{Error, Result};
use crate::records::{LocationIdx, LocationTable};

/// Stop/antenna pairs whose `radius` disc around the stop overlaps the
/// antenna's Voronoi cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityMap {
    radius: f64,
    // Sorted antenna ordinals per stop ordinal.
    per_stop: Vec<Vec<LocationIdx>>,
}

impl CompatibilityMap {
    pub fn from_lists(radius: f64, mut per_stop: Vec<Vec<LocationIdx>>) -> Self {
        for l in &mut per_stop {
            l.sort_unstable();
            l.dedup();
        }
        Self { radius, per_stop }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn n_stops(&self) -> usize {
        self.per_stop.len()
    }

    /// Compatible antennas of `stop`, ascending.
    #[inline]
    pub fn antennas(&self, stop: LocationIdx) -> &[LocationIdx] {
        self.per_stop.get(stop.index()).map_or(&[], Vec::as_slice)
    }

    #[inline]
    pub fn contains(&self, stop: LocationIdx, antenna: LocationIdx) -> bool {
        self.antennas(stop).binary_search(&antenna).is_ok()
    }

    pub fn len(&self) -> usize {
        self.per_stop.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pairs(&self) -> impl Iterator<Item = (LocationIdx, LocationIdx)> + '_ {
        self.per_stop
            .iter()
            .enumerate()
            .flat_map(|(s, l)| l.iter().map(move |&a| (LocationIdx(s as u32), a)))
    }

    pub fn is_subset_of(&self, other: &CompatibilityMap) -> bool {
        self.pairs().all(|(s, a)| other.contains(s, a))
    }

    /// Writes `stop_id,antenna_id` rows after a comment line carrying the
    /// radius and the input fingerprint.
    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        stops: &LocationTable,
        antennas: &LocationTable,
        fingerprint: &str,
    ) -> std::io::Result<()> {
        writeln!(w, "# radius={} inputs={}", self.radius, fingerprint)?;
        writeln!(w, "stop_id,antenna_id")?;
        for (s, a) in self.pairs() {
            writeln!(w, "{},{}", stops.id(s), antennas.id(a))?;
        }
        Ok(())
    }

    /// Reads a map written by [`write_csv`](Self::write_csv); returns the map
    /// and the fingerprint recorded in its header.
    pub fn read_csv<R: BufRead>(
        r: R,
        stops: &LocationTable,
        antennas: &LocationTable,
    ) -> Result<(Self, String)> {
        let parse_err = |line: u64, msg: String| Error::Parse {
            source_name: "compatibility map".into(),
            line,
            msg,
        };
        let mut lines = r.lines();
        let head = lines
            .next()
            .transpose()
            .map_err(|e| Error::io("compatibility map", e))?
            .ok_or_else(|| parse_err(1, "empty file".into()))?;
        let mut radius = None;
        let mut fingerprint = None;
        for tok in head.trim_start_matches('#').split_whitespace() {
            if let Some(v) = tok.strip_prefix("radius=") {
                radius = v.parse::<f64>().ok();
            } else if let Some(v) = tok.strip_prefix("inputs=") {
                fingerprint = Some(v.to_string());
            }
        }
        let (radius, fingerprint) = radius
            .zip(fingerprint)
            .ok_or_else(|| parse_err(1, "missing radius/inputs header".into()))?;

        let mut per_stop = vec![Vec::new(); stops.len()];
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("compatibility map", e))?;
            let lineno = n as u64 + 2;
            if lineno == 2 {
                if line.trim() != "stop_id,antenna_id" {
                    return Err(parse_err(2, format!("unexpected header `{line}`")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (s, a) = line
                .split_once(',')
                .ok_or_else(|| parse_err(lineno, "expected two columns".into()))?;
            let s = stops
                .lookup(s)
                .ok_or_else(|| parse_err(lineno, format!("unknown stop `{s}`")))?;
            let a = antennas
                .lookup(a)
                .ok_or_else(|| parse_err(lineno, format!("unknown antenna `{a}`")))?;
            per_stop[s.index()].push(a);
        }
        Ok((Self::from_lists(radius, per_stop), fingerprint))
    }
}

/// Content hash of everything a compatibility map depends on.
pub fn input_fingerprint(
    stops: &LocationTable,
    antennas: &LocationTable,
    clip_margin: f64,
    radius: f64,
) -> String {
    let mut h = Sha256::new();
    h.update(radius.to_le_bytes());
    h.update(clip_margin.to_le_bytes());
    for table in [stops, antennas] {
        h.update((table.len() as u64).to_le_bytes());
        for (_, id, p) in table.iter() {
            h.update(id.as_bytes());
            h.update([0u8]);
            h.update(p.x.to_le_bytes());
            h.update(p.y.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Compatibility of every stop with every antenna cell at radius `d`.
pub fn build_compatibility(stops: &[Point], tess: &Tessellation, d: f64) -> CompatibilityMap {
    let boxes: Vec<(Point, Point)> = tess.cells().iter().map(|c| c.bbox()).collect();
    let per_stop = stops
        .par_iter()
        .map(|&s| {
            let mut out = Vec::new();
            for (cell, (lo, hi)) in tess.cells().iter().zip(&boxes) {
                let dx = (lo.x - s.x).max(s.x - hi.x).max(0.0);
                let dy = (lo.y - s.y).max(s.y - hi.y).max(0.0);
                if dx * dx + dy * dy > d * d {
                    continue;
                }
                if circle_polygon_overlap(s, d, &cell.polygon) {
                    out.extend_from_slice(&cell.antennas);
                }
            }
            out
        })
        .collect();
    CompatibilityMap::from_lists(d, per_stop)
}
