use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bins::ActivityBins;
use crate::records::{Dataset, DatasetTag, LocationTable, Timestamp, Trajectory, TripFlag};

pub const SLOTS_PER_WEEK: usize = 7 * 24 * 4;
const SLOT_SECONDS: i64 = 15 * 60;
const WEEK_SECONDS: i64 = 7 * 24 * 3600;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    /// Width of the records-per-user histogram bins.
    pub records_bin_width: usize,
    /// Timestamp treated as the start of a week (slot 0).
    pub week_origin: Timestamp,
    pub speed_bin_kmh: f64,
}

impl ProfileOptions {
    pub fn for_dataset(tag: DatasetTag, week_origin: Timestamp) -> Self {
        Self {
            records_bin_width: match tag {
                DatasetTag::Transport => 10,
                DatasetTag::Communication => 100,
            },
            week_origin,
            speed_bin_kmh: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeOfWeekCurve {
    pub bin: usize,
    pub label: String,
    pub users: u64,
    /// Record counts per 15-minute slot of the week.
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    /// `(lower edge in km/h, trips)`.
    pub histogram: Vec<(f64, u64)>,
    pub trips: u64,
    pub orphan_ends: u64,
    pub orphan_starts: u64,
    pub zero_duration: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub dataset: DatasetTag,
    pub users: usize,
    pub records: usize,
    /// `(lower edge, users)`.
    pub records_per_user: Vec<(usize, u64)>,
    pub time_of_week: Vec<TimeOfWeekCurve>,
    pub speeds: Option<SpeedProfile>,
}

/// Average speeds (km/h) of the trips of one transport user, plus the
/// diagnostics tally. A trip is a start tap followed by an end tap with no
/// other start in between; its speed uses the straight-line distance
/// between the two stops.
pub fn trip_speeds(traj: &Trajectory, stops: &LocationTable, tally: &mut SpeedProfile) -> Vec<f64> {
    let mut out = Vec::new();
    let mut pending = None;
    for r in &traj.records {
        match r.flag {
            TripFlag::Start => {
                if pending.replace(*r).is_some() {
                    tally.orphan_starts += 1;
                }
            }
            TripFlag::End => match pending.take() {
                Some(s) => {
                    let dt = r.timestamp - s.timestamp;
                    if dt <= 0 {
                        tally.zero_duration += 1;
                    } else {
                        let dist = stops.point(s.location).dist(stops.point(r.location));
                        out.push(dist / dt as f64 * 3.6);
                        tally.trips += 1;
                    }
                }
                None => tally.orphan_ends += 1,
            },
            TripFlag::None => {}
        }
    }
    if pending.is_some() {
        tally.orphan_starts += 1;
    }
    out
}

pub fn profile(dataset: &Dataset, bins: &ActivityBins, opts: &ProfileOptions) -> ProfileReport {
    let tag = dataset.tag;
    let width = opts.records_bin_width.max(1);

    let mut per_user: BTreeMap<usize, u64> = BTreeMap::new();
    for t in &dataset.trajectories {
        *per_user.entry(t.activity() / width * width).or_insert(0) += 1;
    }

    let mut curves: BTreeMap<usize, TimeOfWeekCurve> = BTreeMap::new();
    for t in &dataset.trajectories {
        let b = bins.bin(t.activity(), tag);
        let curve = curves.entry(b).or_insert_with(|| TimeOfWeekCurve {
            bin: b,
            label: bins.label(tag, b),
            users: 0,
            counts: vec![0; SLOTS_PER_WEEK],
        });
        curve.users += 1;
        for r in &t.records {
            let slot = (r.timestamp - opts.week_origin).rem_euclid(WEEK_SECONDS) / SLOT_SECONDS;
            curve.counts[slot as usize] += 1;
        }
    }

    let speeds = (tag == DatasetTag::Transport).then(|| {
        let mut tally = SpeedProfile::default();
        let mut hist: BTreeMap<i64, u64> = BTreeMap::new();
        let w = if opts.speed_bin_kmh > 0.0 { opts.speed_bin_kmh } else { 1.0 };
        for t in &dataset.trajectories {
            for v in trip_speeds(t, &dataset.locations, &mut tally) {
                *hist.entry((v / w).floor() as i64).or_insert(0) += 1;
            }
        }
        tally.histogram = hist.into_iter().map(|(k, n)| (k as f64 * w, n)).collect();
        tally
    });

    ProfileReport {
        dataset: tag,
        users: dataset.n_users(),
        records: dataset.n_records(),
        records_per_user: per_user.into_iter().collect(),
        time_of_week: curves.into_values().collect(),
        speeds,
    }
}
