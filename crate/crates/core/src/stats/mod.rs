//! Empirical match-count distributions per activity group, unicity and
//! descriptive dataset profiles.

mod profile;
mod unicity;

pub use profile::{profile, trip_speeds, SLOTS_PER_WEEK, ProfileOptions, ProfileReport, SpeedProfile, TimeOfWeekCurve};
pub use unicity::{unicity, Proximity, UnicityEstimate, UnicityQuery};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bins::ActivityBins;
use crate::error::{Error, Result};
use crate::matcher::{count_temporal_matches, MatchOutcome, Thresholds};
use crate::records::{DatasetTag, Trajectory};

/// SplitMix64 finaliser, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Normalised probability distribution over match counts `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDistribution {
    probs: Vec<f64>,
}

impl MatchDistribution {
    /// Accepts non-negative probabilities summing to 1 within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution("negative or non-finite probability".into()));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {s}")));
        }
        Ok(Self { probs })
    }

    pub fn point_mass(m: usize) -> Self {
        let mut probs = vec![0.0; m + 1];
        probs[m] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, m: usize) -> f64 {
        self.probs.get(m).copied().unwrap_or(0.0)
    }

    /// Largest `m + 1` carrying mass (the support bound).
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(m, p)| m as f64 * p).sum()
    }

    /// `tails()[m]` is the mass at `m` or above, summed from the top down.
    pub fn tails(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.probs.len() + 1];
        for m in (0..self.probs.len()).rev() {
            out[m] = out[m + 1] + self.probs[m];
        }
        out
    }

    pub fn tail(&self, m: usize) -> f64 {
        self.probs.iter().skip(m).rev().sum()
    }

    pub fn cdf_below(&self, m: usize) -> f64 {
        self.probs.iter().take(m).sum()
    }
}

/// Counts of pairs by number of matches for one activity group.
///
/// `c_bin = None` pools every phone user (the "any user" distribution).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCountHistogram {
    pub t_bin: usize,
    pub c_bin: Option<usize>,
    counts: BTreeMap<u32, u64>,
    total: u64,
}

impl MatchCountHistogram {
    pub fn new(t_bin: usize, c_bin: Option<usize>) -> Self {
        Self {
            t_bin,
            c_bin,
            counts: BTreeMap::new(),
            total: 0,
        }
    }

    pub fn add(&mut self, m: u32) {
        self.add_n(m, 1);
    }

    pub fn add_n(&mut self, m: u32, n: u64) {
        if n > 0 {
            *self.counts.entry(m).or_insert(0) += n;
            self.total += n;
        }
    }

    /// Associative, commutative merge of partial aggregates.
    pub fn merge(&mut self, other: &MatchCountHistogram) {
        for (&m, &n) in &other.counts {
            self.add_n(m, n);
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, m: u32) -> u64 {
        self.counts.get(&m).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<u32, u64> {
        &self.counts
    }

    pub fn max_m(&self) -> Option<u32> {
        self.counts.keys().next_back().copied()
    }

    pub fn probability(&self, m: u32) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(m) as f64 / self.total as f64
        }
    }

    pub fn mean(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let s: u128 = self.counts.iter().map(|(&m, &n)| m as u128 * n as u128).sum();
        s as f64 / self.total as f64
    }

    /// Mass at `m` or above, from integer counts.
    pub fn tail(&self, m: u32) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let n: u64 = self.counts.range(m..).map(|(_, &n)| n).sum();
        n as f64 / self.total as f64
    }

    pub fn distribution(&self) -> Result<MatchDistribution> {
        if self.total == 0 {
            return Err(Error::InvalidDistribution("empty histogram".into()));
        }
        let len = self.max_m().map_or(1, |m| m as usize + 1);
        let mut probs = vec![0.0; len];
        for (&m, &n) in &self.counts {
            probs[m as usize] = n as f64 / self.total as f64;
        }
        MatchDistribution::new(probs)
    }
}

/// Activity-bin membership of every user of both datasets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Populations {
    pub t_bin_of: Vec<usize>,
    pub c_bin_of: Vec<usize>,
    pub t_sizes: Vec<u64>,
    pub c_sizes: Vec<u64>,
}

impl Populations {
    pub fn new(t_activity: &[usize], c_activity: &[usize], bins: &ActivityBins) -> Self {
        Self {
            t_bin_of: bins.assign(t_activity, DatasetTag::Transport),
            c_bin_of: bins.assign(c_activity, DatasetTag::Communication),
            t_sizes: bins.populations(t_activity, DatasetTag::Transport),
            c_sizes: bins.populations(c_activity, DatasetTag::Communication),
        }
    }

    pub fn from_trajectories(t: &[Trajectory], c: &[Trajectory], bins: &ActivityBins) -> Self {
        let ta: Vec<usize> = t.iter().map(Trajectory::activity).collect();
        let ca: Vec<usize> = c.iter().map(Trajectory::activity).collect();
        Self::new(&ta, &ca, bins)
    }

    pub fn n_t(&self) -> u64 {
        self.t_bin_of.len() as u64
    }

    pub fn n_c(&self) -> u64 {
        self.c_bin_of.len() as u64
    }

    pub fn members(bin_of: &[usize], n_bins: usize) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); n_bins];
        for (u, &b) in bin_of.iter().enumerate() {
            out[b].push(u as u32);
        }
        out
    }

    /// Fraction of users per bin.
    pub fn marginals(sizes: &[u64]) -> Vec<f64> {
        let n: u64 = sizes.iter().sum();
        sizes
            .iter()
            .map(|&s| if n == 0 { 0.0 } else { s as f64 / n as f64 })
            .collect()
    }
}

pub type GroupKey = (usize, usize);

/// Temporal-match count histograms per (transport bin, phone bin).
///
/// Groups with more pairs than `sample_pairs` are estimated from
/// `sample_pairs` uniformly drawn pairs (with replacement); smaller groups
/// are enumerated exactly. Groups with an empty side are absent.
pub fn estimate_pt(
    transport: &[Trajectory],
    comm: &[Trajectory],
    bins: &ActivityBins,
    thresholds: &Thresholds,
    sample_pairs: u64,
    seed: u64,
) -> Result<BTreeMap<GroupKey, MatchCountHistogram>> {
    if sample_pairs == 0 {
        return Err(Error::Config("sample_pairs must be at least 1".into()));
    }
    let pops = Populations::from_trajectories(transport, comm, bins);
    let t_members = Populations::members(&pops.t_bin_of, bins.n_bins(DatasetTag::Transport));
    let c_members = Populations::members(&pops.c_bin_of, bins.n_bins(DatasetTag::Communication));

    let groups: Vec<GroupKey> = (0..t_members.len())
        .flat_map(|a| (0..c_members.len()).map(move |b| (a, b)))
        .filter(|&(a, b)| !t_members[a].is_empty() && !c_members[b].is_empty())
        .collect();

    let hists = groups
        .par_iter()
        .map(|&(a, b)| {
            let (tm, cm) = (&t_members[a], &c_members[b]);
            let mut h = MatchCountHistogram::new(a, Some(b));
            let pairs = tm.len() as u64 * cm.len() as u64;
            if pairs <= sample_pairs {
                for &i in tm {
                    for &j in cm {
                        h.add(count_temporal_matches(&transport[i as usize], &comm[j as usize], thresholds));
                    }
                }
            } else {
                h.merge(&sample_pair_counts(
                    transport,
                    comm,
                    tm,
                    cm,
                    thresholds,
                    sample_pairs,
                    mix_seed(seed, a as u64, b as u64),
                ));
            }
            ((a, b), h)
        })
        .collect();
    Ok(hists)
}

/// Temporal-match counts of `draws` pairs drawn uniformly, with
/// replacement, from `t_users x c_users`.
pub fn sample_pair_counts(
    transport: &[Trajectory],
    comm: &[Trajectory],
    t_users: &[u32],
    c_users: &[u32],
    thresholds: &Thresholds,
    draws: u64,
    seed: u64,
) -> MatchCountHistogram {
    let mut h = MatchCountHistogram::new(0, None);
    if t_users.is_empty() || c_users.is_empty() {
        return h;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let i = t_users[rng.random_range(0..t_users.len())];
        let j = c_users[rng.random_range(0..c_users.len())];
        h.add(count_temporal_matches(&transport[i as usize], &comm[j as usize], thresholds));
    }
    h
}

/// Distribution of each transport user's best spatial match count, per
/// transport bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerUserBestHistogram {
    pub per_t_bin: BTreeMap<usize, MatchCountHistogram>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsEstimate {
    /// P_s(m | t bin, c bin).
    pub by_group: BTreeMap<GroupKey, MatchCountHistogram>,
    /// P_s(m | t bin) against any phone user.
    pub by_t_bin: BTreeMap<usize, MatchCountHistogram>,
    pub best: PerUserBestHistogram,
}

/// Spatial-match count histograms from the counted outcomes of a full
/// (untruncated) matching run. Pairs never reported, and alibis, land at 0.
pub fn estimate_ps(outcomes: &[MatchOutcome], pops: &Populations) -> Result<PsEstimate> {
    let mut positive: BTreeMap<GroupKey, BTreeMap<u32, u64>> = BTreeMap::new();
    let mut best = vec![0u32; pops.t_bin_of.len()];
    for o in outcomes.iter().filter(|o| !o.is_alibi() && o.m > 0) {
        let key = (pops.t_bin_of[o.t_user as usize], pops.c_bin_of[o.c_user as usize]);
        *positive.entry(key).or_default().entry(o.m).or_insert(0) += 1;
        let b = &mut best[o.t_user as usize];
        *b = (*b).max(o.m);
    }

    let mut by_group = BTreeMap::new();
    let mut by_t_bin: BTreeMap<usize, MatchCountHistogram> = BTreeMap::new();
    for (a, &nt) in pops.t_sizes.iter().enumerate() {
        if nt == 0 {
            continue;
        }
        let mut any = MatchCountHistogram::new(a, None);
        for (b, &nc) in pops.c_sizes.iter().enumerate() {
            if nc == 0 {
                continue;
            }
            let capacity = nt * nc;
            let mut h = MatchCountHistogram::new(a, Some(b));
            if let Some(pos) = positive.get(&(a, b)) {
                for (&m, &n) in pos {
                    h.add_n(m, n);
                }
            }
            let observed = h.total();
            if observed > capacity {
                return Err(Error::InconsistentPopulation {
                    t_bin: a,
                    c_bin: b,
                    observed,
                    capacity,
                });
            }
            h.add_n(0, capacity - observed);
            any.merge(&h);
            by_group.insert((a, b), h);
        }
        if any.total() > 0 {
            by_t_bin.insert(a, any);
        }
    }

    let mut per_t_bin: BTreeMap<usize, MatchCountHistogram> = BTreeMap::new();
    for (u, &m) in best.iter().enumerate() {
        let a = pops.t_bin_of[u];
        per_t_bin
            .entry(a)
            .or_insert_with(|| MatchCountHistogram::new(a, None))
            .add(m);
    }

    Ok(PsEstimate {
        by_group,
        by_t_bin,
        best: PerUserBestHistogram { per_t_bin },
    })
}

/// Pools several histograms into one (e.g. all groups of a transport bin).
pub fn pool<'a>(
    hists: impl IntoIterator<Item = &'a MatchCountHistogram>,
    t_bin: usize,
    c_bin: Option<usize>,
) -> MatchCountHistogram {
    let mut out = MatchCountHistogram::new(t_bin, c_bin);
    for h in hists {
        out.merge(h);
    }
    out
}
