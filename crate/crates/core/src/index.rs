//! Time-range plus location-dictionary index over one dataset.
//!
//! Candidate search never touches coordinates: the compatible locations of
//! a query come from a precomputed [`CompatibilityMap`](crate::geometry::CompatibilityMap)
//! and each location holds a time-sorted list of record references.

use crate::records::{LocationIdx, Timestamp, Trajectory};

/// Reference to record `record` of user `user` (both ordinals).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordRef {
    pub user: u32,
    pub record: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct IndexEntry {
    pub timestamp: Timestamp,
    pub rec: RecordRef,
}

/// Per-location, time-sorted record lists in one flat buffer.
#[derive(Debug, Clone, Default)]
pub struct SpatioTemporalIndex {
    offsets: Vec<usize>,
    entries: Vec<IndexEntry>,
}

impl SpatioTemporalIndex {
    /// Indexes every record of `trajectories`. `n_locations` is the size of
    /// the dataset's location table.
    pub fn build(trajectories: &[Trajectory], n_locations: usize) -> Self {
        let mut counts = vec![0usize; n_locations + 1];
        for t in trajectories {
            for r in &t.records {
                counts[r.location.index() + 1] += 1;
            }
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let placeholder = IndexEntry {
            timestamp: 0,
            rec: RecordRef { user: 0, record: 0 },
        };
        let mut entries = vec![placeholder; offsets[n_locations]];
        for (u, t) in trajectories.iter().enumerate() {
            for (k, r) in t.records.iter().enumerate() {
                let slot = &mut cursor[r.location.index()];
                entries[*slot] = IndexEntry {
                    timestamp: r.timestamp,
                    rec: RecordRef {
                        user: u as u32,
                        record: k as u32,
                    },
                };
                *slot += 1;
            }
        }
        for w in offsets.windows(2) {
            entries[w[0]..w[1]].sort_unstable();
        }
        Self { offsets, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_locations(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    /// Time-sorted entries at `loc`.
    pub fn at(&self, loc: LocationIdx) -> &[IndexEntry] {
        let i = loc.index();
        if i + 1 >= self.offsets.len() {
            return &[];
        }
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Appends to `out` every entry at the locations in `locs` with a
    /// timestamp in the closed range `[t_lo, t_hi]`. `locs` must not repeat
    /// a location.
    pub fn query_into(
        &self,
        locs: &[LocationIdx],
        t_lo: Timestamp,
        t_hi: Timestamp,
        out: &mut Vec<(LocationIdx, IndexEntry)>,
    ) {
        for &loc in locs {
            let list = self.at(loc);
            let start = list.partition_point(|e| e.timestamp < t_lo);
            out.extend(
                list[start..]
                    .iter()
                    .take_while(|e| e.timestamp <= t_hi)
                    .map(|e| (loc, *e)),
            );
        }
    }

    /// Records at any of `locs` with timestamp in `[t_lo, t_hi]`, sorted.
    pub fn query(&self, locs: &[LocationIdx], t_lo: Timestamp, t_hi: Timestamp) -> Vec<RecordRef> {
        let mut locs = locs.to_vec();
        locs.sort_unstable();
        locs.dedup();
        let mut hits = Vec::new();
        self.query_into(&locs, t_lo, t_hi, &mut hits);
        let mut out: Vec<RecordRef> = hits.into_iter().map(|(_, e)| e.rec).collect();
        out.sort_unstable();
        out
    }
}
