//! Activity groups: users are bucketed by their record count so that match
//! count distributions can be estimated per (transport bin, phone bin) pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::DatasetTag;

pub const DEFAULT_EDGES_T: [u32; 14] = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130];
pub const DEFAULT_EDGES_C: [u32; 16] = [
    0, 20, 30, 50, 70, 100, 125, 150, 200, 250, 300, 400, 500, 700, 1000, 2000,
];

/// Ascending bin edges per dataset. Bin `k` covers `[edges[k], edges[k+1])`
/// and the last bin is open-ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityBins {
    edges_t: Vec<u32>,
    edges_c: Vec<u32>,
}

impl Default for ActivityBins {
    fn default() -> Self {
        Self {
            edges_t: DEFAULT_EDGES_T.to_vec(),
            edges_c: DEFAULT_EDGES_C.to_vec(),
        }
    }
}

fn validate(edges: &[u32], tag: DatasetTag) -> Result<()> {
    if edges.first() != Some(&0) {
        return Err(Error::Config(format!("{tag} bin edges must start at 0")));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("{tag} bin edges must be strictly ascending")));
    }
    Ok(())
}

impl ActivityBins {
    pub fn new(edges_t: Vec<u32>, edges_c: Vec<u32>) -> Result<Self> {
        validate(&edges_t, DatasetTag::Transport)?;
        validate(&edges_c, DatasetTag::Communication)?;
        Ok(Self { edges_t, edges_c })
    }

    pub fn edges(&self, tag: DatasetTag) -> &[u32] {
        match tag {
            DatasetTag::Transport => &self.edges_t,
            DatasetTag::Communication => &self.edges_c,
        }
    }

    pub fn n_bins(&self, tag: DatasetTag) -> usize {
        self.edges(tag).len()
    }

    /// Index of the bin containing activity `r`.
    pub fn bin(&self, r: usize, tag: DatasetTag) -> usize {
        let edges = self.edges(tag);
        let r = u32::try_from(r).unwrap_or(u32::MAX);
        edges.partition_point(|&e| e <= r) - 1
    }

    pub fn lower(&self, tag: DatasetTag, bin: usize) -> u32 {
        self.edges(tag)[bin]
    }

    /// Exclusive upper edge, `None` for the open-ended last bin.
    pub fn upper(&self, tag: DatasetTag, bin: usize) -> Option<u32> {
        self.edges(tag).get(bin + 1).copied()
    }

    /// Human-readable label such as `40-49` or `130+`.
    pub fn label(&self, tag: DatasetTag, bin: usize) -> String {
        let lo = self.lower(tag, bin);
        match self.upper(tag, bin) {
            Some(hi) if hi == lo + 1 => lo.to_string(),
            Some(hi) => format!("{lo}-{}", hi - 1),
            None => format!("{lo}+"),
        }
    }

    /// Bin index of every activity in `activities`.
    pub fn assign(&self, activities: &[usize], tag: DatasetTag) -> Vec<usize> {
        activities.iter().map(|&r| self.bin(r, tag)).collect()
    }

    /// Number of users per bin.
    pub fn populations(&self, activities: &[usize], tag: DatasetTag) -> Vec<u64> {
        let mut pop = vec![0u64; self.n_bins(tag)];
        for &r in activities {
            pop[self.bin(r, tag)] += 1;
        }
        pop
    }
}

/// Keeps the bins whose lower edge lies in `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinRange {
    pub min: u32,
    pub max: Option<u32>,
}

impl BinRange {
    pub const ALL: BinRange = BinRange { min: 0, max: None };

    pub fn new(min: u32, max: Option<u32>) -> Self {
        Self { min, max }
    }

    pub fn keeps(&self, bins: &ActivityBins, tag: DatasetTag, bin: usize) -> bool {
        let lo = bins.lower(tag, bin);
        lo >= self.min && self.max.is_none_or(|m| lo < m)
    }
}
