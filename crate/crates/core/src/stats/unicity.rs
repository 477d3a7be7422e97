use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mix_seed;
use crate::error::{Error, Result};
use crate::geometry::{build_compatibility, Point, Tessellation};
use crate::index::SpatioTemporalIndex;
use crate::records::{LocationIdx, Timestamp, Trajectory};

/// For every location, the locations considered spatially close to it at
/// some radius.
#[derive(Debug, Clone, PartialEq)]
pub struct Proximity {
    radius: f64,
    neighbours: Vec<Vec<LocationIdx>>,
}

impl Proximity {
    /// Plain Euclidean distance `<= d` between locations (transit stops).
    pub fn within_distance(points: &[Point], d: f64) -> Self {
        let neighbours = points
            .par_iter()
            .map(|&p| {
                points
                    .iter()
                    .enumerate()
                    .filter(|(_, q)| p.dist(**q) <= d)
                    .map(|(j, _)| LocationIdx(j as u32))
                    .collect()
            })
            .collect();
        Self { radius: d, neighbours }
    }

    /// Antenna `b` is close to antenna `a` when the `d` disc around the site
    /// of `a` overlaps the Voronoi cell of `b`.
    pub fn voronoi(sites: &[Point], tess: &Tessellation, d: f64) -> Self {
        let map = build_compatibility(sites, tess, d);
        let neighbours = (0..sites.len())
            .map(|i| map.antennas(LocationIdx(i as u32)).to_vec())
            .collect();
        Self { radius: d, neighbours }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn neighbours(&self, loc: LocationIdx) -> &[LocationIdx] {
        &self.neighbours[loc.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicityQuery {
    /// Number of records sampled per trial.
    pub p: usize,
    /// Strict time tolerance in seconds.
    pub tau: Timestamp,
    pub n_trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicityEstimate {
    pub p: usize,
    pub d: f64,
    pub tau: Timestamp,
    pub unicity: f64,
    pub stderr: f64,
    pub n_trials: usize,
    pub n_unique: usize,
}

/// Fraction of trials in which `p` random records of a random user are
/// matched by no other user within the proximity and strict `tau` window.
///
/// `idx` must index `trajectories`. Trials draw only from users with at
/// least `p` records, optionally further restricted to `candidates`.
/// Each trial uses its own sub-seed, so the sampled records for a given
/// trial are nested as `p` grows.
pub fn unicity(
    trajectories: &[Trajectory],
    idx: &SpatioTemporalIndex,
    proximity: &Proximity,
    query: &UnicityQuery,
    candidates: Option<&[usize]>,
) -> Result<UnicityEstimate> {
    let pool: Vec<usize> = match candidates {
        Some(c) => c.to_vec(),
        None => (0..trajectories.len()).collect(),
    };
    let eligible: Vec<usize> = pool
        .into_iter()
        .filter(|&u| u < trajectories.len() && trajectories[u].activity() >= query.p.max(1))
        .collect();
    if eligible.is_empty() || query.n_trials == 0 {
        return Err(Error::NoEligibleUsers);
    }

    let n_unique = (0..query.n_trials)
        .into_par_iter()
        .filter(|&trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(query.seed, trial as u64, 0x756e));
            let user = eligible[rng.random_range(0..eligible.len())];
            let records = &trajectories[user].records;
            let mut order: Vec<usize> = (0..records.len()).collect();
            for i in 0..query.p {
                let j = rng.random_range(i..order.len());
                order.swap(i, j);
            }
            is_unique(user, &order[..query.p], trajectories, idx, proximity, query.tau)
        })
        .count();

    let n = query.n_trials as f64;
    let u = n_unique as f64 / n;
    Ok(UnicityEstimate {
        p: query.p,
        d: proximity.radius(),
        tau: query.tau,
        unicity: u,
        stderr: (u * (1.0 - u) / n).sqrt(),
        n_trials: query.n_trials,
        n_unique,
    })
}

fn is_unique(
    user: usize,
    sample: &[usize],
    trajectories: &[Trajectory],
    idx: &SpatioTemporalIndex,
    proximity: &Proximity,
    tau: Timestamp,
) -> bool {
    let mut survivors: Option<Vec<u32>> = None;
    let mut hits = Vec::new();
    for &k in sample {
        let r = trajectories[user].records[k];
        hits.clear();
        idx.query_into(proximity.neighbours(r.location), r.timestamp - tau + 1, r.timestamp + tau - 1, &mut hits);
        let mut users: Vec<u32> = hits
            .iter()
            .map(|(_, e)| e.rec.user)
            .filter(|&u| u as usize != user)
            .collect();
        users.sort_unstable();
        users.dedup();
        let next = match survivors {
            None => users,
            Some(prev) => prev.into_iter().filter(|u| users.binary_search(u).is_ok()).collect(),
        };
        if next.is_empty() {
            return true;
        }
        survivors = Some(next);
    }
    survivors.is_none_or(|s| s.is_empty())
}
