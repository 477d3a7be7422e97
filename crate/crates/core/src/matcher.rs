//! Record-level classification, per-pair match counting and the
//! index-driven candidate search over all transport users.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_compatibility, CompatibilityMap, Tessellation};
use crate::index::SpatioTemporalIndex;
use crate::records::{EventRecord, LocationTable, Timestamp, Trajectory, TripFlag};

/// Spatial radii (m) and time windows (s) for the walking and transit
/// neighbourhoods of a transit tap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub d_w: f64,
    pub tau_w: Timestamp,
    pub d_t: f64,
    pub tau_t: Timestamp,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            d_w: 500.0,
            tau_w: 600,
            d_t: 2000.0,
            tau_t: 300,
        }
    }
}

impl Thresholds {
    pub fn tau_max(&self) -> Timestamp {
        self.tau_w.max(self.tau_t)
    }

    pub fn tau(&self, branch: Branch) -> Timestamp {
        match branch {
            Branch::Walking => self.tau_w,
            Branch::Transit => self.tau_t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_w > 0.0 && self.d_t.is_finite()) {
            return Err(Error::InvalidParams("radii must be positive and finite".into()));
        }
        if self.d_w > self.d_t {
            return Err(Error::InvalidParams(format!(
                "walking radius {} exceeds transit radius {}",
                self.d_w, self.d_t
            )));
        }
        if self.tau_w <= 0 || self.tau_t <= 0 {
            return Err(Error::InvalidParams("time windows must be positive".into()));
        }
        Ok(())
    }
}

/// Thresholds together with the compatibility maps for both radii.
#[derive(Debug, Clone)]
pub struct MatchParams {
    pub thresholds: Thresholds,
    pub compat_w: CompatibilityMap,
    pub compat_t: CompatibilityMap,
}

impl MatchParams {
    pub fn new(
        thresholds: Thresholds,
        compat_w: CompatibilityMap,
        compat_t: CompatibilityMap,
    ) -> Result<Self> {
        thresholds.validate()?;
        if compat_w.radius() != thresholds.d_w || compat_t.radius() != thresholds.d_t {
            return Err(Error::InvalidParams(format!(
                "compatibility radii ({}, {}) do not match thresholds ({}, {})",
                compat_w.radius(),
                compat_t.radius(),
                thresholds.d_w,
                thresholds.d_t
            )));
        }
        if !compat_w.is_subset_of(&compat_t) {
            return Err(Error::InvalidParams(
                "walking compatibility map is not contained in the transit map".into(),
            ));
        }
        Ok(Self {
            thresholds,
            compat_w,
            compat_t,
        })
    }

    /// Builds both compatibility maps from the stop table and the antenna
    /// tessellation.
    pub fn build(thresholds: Thresholds, stops: &LocationTable, tess: &Tessellation) -> Result<Self> {
        thresholds.validate()?;
        let compat_w = build_compatibility(stops.points(), tess, thresholds.d_w);
        let compat_t = build_compatibility(stops.points(), tess, thresholds.d_t);
        Self::new(thresholds, compat_w, compat_t)
    }

    fn compat(&self, branch: Branch) -> &CompatibilityMap {
        match branch {
            Branch::Walking => &self.compat_w,
            Branch::Transit => &self.compat_t,
        }
    }
}

/// Which neighbourhood applies to a (tap, phone record) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Walking,
    Transit,
}

/// Phone records before a trip start or after a trip end are taken while
/// walking; records inside the trip are taken while riding. Equal
/// timestamps use the walking neighbourhood.
#[inline]
pub fn branch(flag: TripFlag, t_transport: Timestamp, t_comm: Timestamp) -> Branch {
    match flag {
        TripFlag::Start if t_comm > t_transport => Branch::Transit,
        TripFlag::End if t_comm < t_transport => Branch::Transit,
        _ => Branch::Walking,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairClass {
    SpatialMatch,
    Alibi,
    NoTemporalMatch,
}

#[inline]
pub fn classify_pair(rec_t: &EventRecord, rec_c: &EventRecord, params: &MatchParams) -> PairClass {
    let b = branch(rec_t.flag, rec_t.timestamp, rec_c.timestamp);
    if (rec_c.timestamp - rec_t.timestamp).abs() >= params.thresholds.tau(b) {
        PairClass::NoTemporalMatch
    } else if params.compat(b).contains(rec_t.location, rec_c.location) {
        PairClass::SpatialMatch
    } else {
        PairClass::Alibi
    }
}

#[inline]
fn is_temporal_match(rec_t: &EventRecord, rec_c: &EventRecord, th: &Thresholds) -> bool {
    let b = branch(rec_t.flag, rec_t.timestamp, rec_c.timestamp);
    (rec_c.timestamp - rec_t.timestamp).abs() < th.tau(b)
}

/// Result of comparing two trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Alibi,
    Matches(u32),
}

impl Comparison {
    pub fn matches(self) -> u32 {
        match self {
            Comparison::Alibi => 0,
            Comparison::Matches(m) => m,
        }
    }
}

/// One-use greedy counting over the temporal matches of two time-sorted
/// trajectories. `inconsistent` decides whether a temporal match is an
/// alibi; returning true aborts the count.
fn greedy_count(
    t: &[EventRecord],
    c: &[EventRecord],
    tau_max: Timestamp,
    mut temporal: impl FnMut(&EventRecord, &EventRecord) -> bool,
    mut inconsistent: impl FnMut(&EventRecord, &EventRecord) -> bool,
) -> Comparison {
    let mut used = vec![false; c.len()];
    let mut lo = 0usize;
    let mut m = 0u32;
    for rt in t {
        while lo < c.len() && c[lo].timestamp <= rt.timestamp - tau_max {
            lo += 1;
        }
        let mut matched = false;
        for (l, rc) in c.iter().enumerate().skip(lo) {
            if rc.timestamp >= rt.timestamp + tau_max {
                break;
            }
            if !temporal(rt, rc) {
                continue;
            }
            if inconsistent(rt, rc) {
                return Comparison::Alibi;
            }
            if !matched && !used[l] {
                m += 1;
                matched = true;
                used[l] = true;
            }
        }
    }
    Comparison::Matches(m)
}

/// Counts spatially consistent matches between a transport and a phone
/// trajectory, each record used at most once, or reports an alibi.
pub fn compare_users(traj_t: &Trajectory, traj_c: &Trajectory, params: &MatchParams) -> Comparison {
    let th = &params.thresholds;
    greedy_count(
        &traj_t.records,
        &traj_c.records,
        th.tau_max(),
        |a, b| is_temporal_match(a, b, th),
        |a, b| classify_pair(a, b, params) == PairClass::Alibi,
    )
}

/// Same one-use count as [`compare_users`] with the spatial test disabled.
pub fn count_temporal_matches(traj_t: &Trajectory, traj_c: &Trajectory, th: &Thresholds) -> u32 {
    greedy_count(
        &traj_t.records,
        &traj_c.records,
        th.tau_max(),
        |a, b| is_temporal_match(a, b, th),
        |_, _| false,
    )
    .matches()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeKind {
    Counted,
    Alibi,
}

/// Result for one (transport user, phone user) pair, by ordinal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub t_user: u32,
    pub c_user: u32,
    pub kind: OutcomeKind,
    pub m: u32,
}

impl MatchOutcome {
    pub fn from_comparison(t_user: u32, c_user: u32, cmp: Comparison) -> Self {
        match cmp {
            Comparison::Alibi => Self {
                t_user,
                c_user,
                kind: OutcomeKind::Alibi,
                m: 0,
            },
            Comparison::Matches(m) => Self {
                t_user,
                c_user,
                kind: OutcomeKind::Counted,
                m,
            },
        }
    }

    pub fn is_alibi(&self) -> bool {
        self.kind == OutcomeKind::Alibi
    }
}

/// Best phone-side candidates of one transport user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    pub t_user: u32,
    pub best_m: u32,
    /// All phone users reaching `best_m`, ascending. Empty when the user has
    /// no counted candidate.
    pub best: Vec<u32>,
    pub tie: bool,
}

impl Pairing {
    /// The paired phone user when the maximum is attained uniquely.
    pub fn unique(&self) -> Option<u32> {
        (self.best.len() == 1).then(|| self.best[0])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchWork {
    /// Index entries returned by all candidate queries.
    pub index_hits: u64,
    /// Index entries that classified as spatial matches.
    pub spatial_hits: u64,
    pub compare_calls: u64,
}

impl MatchWork {
    fn add(&mut self, o: &MatchWork) {
        self.index_hits += o.index_hits;
        self.spatial_hits += o.spatial_hits;
        self.compare_calls += o.compare_calls;
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatchRun {
    /// Retained counted outcomes and every alibi found, sorted.
    pub outcomes: Vec<MatchOutcome>,
    /// One entry per transport user, in ordinal order.
    pub pairings: Vec<Pairing>,
    pub work: MatchWork,
}

impl MatchRun {
    pub fn counted(&self) -> impl Iterator<Item = &MatchOutcome> {
        self.outcomes.iter().filter(|o| !o.is_alibi())
    }
}

struct UserResult {
    outcomes: Vec<MatchOutcome>,
    pairing: Pairing,
    work: MatchWork,
}

fn match_user(
    t_user: u32,
    traj: &Trajectory,
    comm: &[Trajectory],
    idx: &SpatioTemporalIndex,
    params: &MatchParams,
    top_k: Option<usize>,
) -> UserResult {
    let tau = params.thresholds.tau_max();
    let mut evaluated: HashMap<u32, Comparison> = HashMap::new();
    let mut hits = Vec::new();
    let mut candidates = Vec::new();
    let mut work = MatchWork::default();

    for rt in &traj.records {
        hits.clear();
        idx.query_into(
            params.compat_t.antennas(rt.location),
            rt.timestamp - tau,
            rt.timestamp + tau,
            &mut hits,
        );
        work.index_hits += hits.len() as u64;
        candidates.clear();
        for (_, e) in &hits {
            let rc = &comm[e.rec.user as usize].records[e.rec.record as usize];
            if classify_pair(rt, rc, params) == PairClass::SpatialMatch {
                candidates.push(e.rec.user);
            }
        }
        work.spatial_hits += candidates.len() as u64;
        candidates.sort_unstable();
        candidates.dedup();
        for &j in &candidates {
            evaluated.entry(j).or_insert_with(|| {
                work.compare_calls += 1;
                compare_users(traj, &comm[j as usize], params)
            });
        }
    }

    let mut outcomes: Vec<MatchOutcome> = evaluated
        .into_iter()
        .map(|(j, cmp)| MatchOutcome::from_comparison(t_user, j, cmp))
        .collect();
    outcomes.sort_unstable_by(|a, b| a.kind.cmp(&b.kind).then(b.m.cmp(&a.m)).then(a.c_user.cmp(&b.c_user)));
    let n_counted = outcomes.iter().take_while(|o| !o.is_alibi()).count();

    let best_m = outcomes.first().filter(|o| !o.is_alibi()).map_or(0, |o| o.m);
    let best: Vec<u32> = outcomes[..n_counted]
        .iter()
        .take_while(|o| o.m == best_m)
        .map(|o| o.c_user)
        .collect();

    if let Some(k) = top_k {
        if k < n_counted {
            let cutoff = if k == 0 { u32::MAX } else { outcomes[k - 1].m };
            let keep = outcomes[..n_counted].iter().take_while(|o| o.m >= cutoff).count();
            outcomes.drain(keep..n_counted);
        }
    }
    outcomes.sort_unstable();

    UserResult {
        outcomes,
        pairing: Pairing {
            t_user,
            best_m,
            tie: best.len() > 1,
            best,
        },
        work,
    }
}

/// Runs the candidate search and pairwise comparison for every transport
/// user against the phone dataset indexed in `idx`.
///
/// `top_k = None` keeps every counted outcome; `Some(k)` keeps, per
/// transport user, the outcomes whose count reaches the k-th best (ties at
/// the cut are all kept).
pub fn match_all(
    transport: &[Trajectory],
    comm: &[Trajectory],
    idx: &SpatioTemporalIndex,
    params: &MatchParams,
    top_k: Option<usize>,
) -> MatchRun {
    let per_user: Vec<UserResult> = transport
        .par_iter()
        .enumerate()
        .map(|(i, traj)| match_user(i as u32, traj, comm, idx, params, top_k))
        .collect();

    let mut run = MatchRun::default();
    for r in per_user {
        run.work.add(&r.work);
        run.outcomes.extend(r.outcomes);
        run.pairings.push(r.pairing);
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_voronoi, ClipRect, Point};
    use crate::records::{DatasetTag, LocationIdx};

    /// One stop at the origin; antenna 0 next to it, antenna 1 at 1 km
    /// (transit- but not walk-compatible), antenna 2 at 10 km (neither).
    fn setup() -> MatchParams {
        let stops =
            LocationTable::new(DatasetTag::Transport, vec![("s".into(), Point::new(0.0, 0.0))]).unwrap();
        let ants = [Point::new(0.0, 50.0), Point::new(1500.0, 0.0), Point::new(10_000.0, 0.0)];
        let clip = ClipRect::around(ants.iter().copied(), 5000.0).unwrap();
        let tess = build_voronoi(&ants, clip).unwrap();
        let p = MatchParams::build(Thresholds::default(), &stops, &tess).unwrap();
        assert!(p.compat_w.contains(LocationIdx(0), LocationIdx(0)));
        assert!(!p.compat_w.contains(LocationIdx(0), LocationIdx(1)));
        assert!(p.compat_t.contains(LocationIdx(0), LocationIdx(1)));
        assert!(!p.compat_t.contains(LocationIdx(0), LocationIdx(2)));
        p
    }

    fn tap(t: Timestamp, flag: TripFlag) -> EventRecord {
        EventRecord::new(t, LocationIdx(0), flag)
    }

    fn call(t: Timestamp, antenna: u32) -> EventRecord {
        EventRecord::new(t, LocationIdx(antenna), TripFlag::None)
    }

    #[test]
    fn branch_table() {
        assert_eq!(branch(TripFlag::Start, 1000, 900), Branch::Walking);
        assert_eq!(branch(TripFlag::End, 1000, 1100), Branch::Walking);
        assert_eq!(branch(TripFlag::Start, 1000, 1100), Branch::Transit);
        assert_eq!(branch(TripFlag::End, 1000, 900), Branch::Transit);
        assert_eq!(branch(TripFlag::Start, 1000, 1000), Branch::Walking);
        assert_eq!(branch(TripFlag::End, 1000, 1000), Branch::Walking);
    }

    #[test]
    fn walking_branch_spatial_match() {
        let p = setup();
        assert_eq!(classify_pair(&tap(1000, TripFlag::Start), &call(900, 0), &p), PairClass::SpatialMatch);
    }

    #[test]
    fn transit_branch_alibi() {
        let p = setup();
        assert_eq!(classify_pair(&tap(1000, TripFlag::Start), &call(1200, 2), &p), PairClass::Alibi);
        // Same antenna before the start tap falls outside the walking map too.
        assert_eq!(classify_pair(&tap(1000, TripFlag::Start), &call(900, 1), &p), PairClass::Alibi);
        // Antenna 1 is fine while riding.
        assert_eq!(classify_pair(&tap(1000, TripFlag::Start), &call(1200, 1), &p), PairClass::SpatialMatch);
    }

    #[test]
    fn window_boundary_is_exclusive() {
        let p = setup();
        assert_eq!(classify_pair(&tap(1000, TripFlag::Start), &call(400, 2), &p), PairClass::NoTemporalMatch);
        assert_eq!(classify_pair(&tap(1000, TripFlag::Start), &call(1300, 2), &p), PairClass::NoTemporalMatch);
        assert_eq!(classify_pair(&tap(1000, TripFlag::End), &call(1600, 2), &p), PairClass::NoTemporalMatch);
        assert_eq!(classify_pair(&tap(1000, TripFlag::End), &call(1599, 2), &p), PairClass::Alibi);
    }

    #[test]
    fn empty_trajectories_count_zero() {
        let p = setup();
        let empty = Trajectory::new("e", vec![]);
        let t = Trajectory::new("t", vec![tap(1000, TripFlag::Start)]);
        assert_eq!(compare_users(&empty, &t, &p), Comparison::Matches(0));
        assert_eq!(compare_users(&t, &empty, &p), Comparison::Matches(0));
    }

    #[test]
    fn one_tap_near_two_calls_counts_once() {
        let p = setup();
        let t = Trajectory::new("t", vec![tap(1000, TripFlag::Start)]);
        let c = Trajectory::new("c", vec![call(800, 0), call(950, 0)]);
        assert_eq!(compare_users(&t, &c, &p), Comparison::Matches(1));
    }

    #[test]
    fn two_taps_near_one_call_count_once() {
        let p = setup();
        let t = Trajectory::new("t", vec![tap(1000, TripFlag::End), tap(1100, TripFlag::Start)]);
        let c = Trajectory::new("c", vec![call(1050, 0)]);
        assert_eq!(compare_users(&t, &c, &p), Comparison::Matches(1));
    }

    #[test]
    fn alibi_dominates_spatial_matches() {
        let p = setup();
        let t = Trajectory::new(
            "t",
            vec![tap(1000, TripFlag::Start), tap(5000, TripFlag::End), tap(9000, TripFlag::Start)],
        );
        let c = Trajectory::new("c", vec![call(990, 0), call(5010, 0), call(9100, 2)]);
        assert_eq!(compare_users(&t, &c, &p), Comparison::Alibi);
        assert_eq!(count_temporal_matches(&t, &c, &p.thresholds), 3);
    }

    #[test]
    fn temporal_count_includes_alibis() {
        let p = setup();
        let t = Trajectory::new("t", vec![tap(1000, TripFlag::Start)]);
        let c = Trajectory::new("c", vec![call(1200, 2)]);
        assert_eq!(count_temporal_matches(&t, &c, &p.thresholds), 1);
        let far = Trajectory::new("c", vec![call(100_000, 0)]);
        assert_eq!(count_temporal_matches(&t, &far, &p.thresholds), 0);
    }

    #[test]
    fn match_all_finds_planted_pair_and_reports_ties() {
        let p = setup();
        let transport = vec![Trajectory::new(
            "t0",
            vec![tap(1000, TripFlag::Start), tap(3000, TripFlag::End)],
        )];
        let comm = vec![
            Trajectory::new("c0", vec![call(900, 0), call(3100, 0)]),
            Trajectory::new("c1", vec![call(950, 0)]),
            Trajectory::new("c2", vec![call(990, 0), call(3050, 0)]),
            Trajectory::new("c3", vec![call(1100, 0), call(1200, 2)]),
        ];
        let idx = SpatioTemporalIndex::build(&comm, 3);
        let run = match_all(&transport, &comm, &idx, &p, None);
        let pr = &run.pairings[0];
        assert_eq!(pr.best_m, 2);
        assert_eq!(pr.best, vec![0, 2]);
        assert!(pr.tie);
        assert_eq!(pr.unique(), None);
        assert!(run.outcomes.iter().any(|o| o.c_user == 3 && o.is_alibi()));

        let top1 = match_all(&transport, &comm, &idx, &p, Some(1));
        let kept: Vec<_> = top1.counted().map(|o| (o.c_user, o.m)).collect();
        assert_eq!(kept, vec![(0, 2), (2, 2)]);
    }

    #[test]
    fn mismatched_maps_are_rejected() {
        let p = setup();
        let r = MatchParams::new(Thresholds::default(), p.compat_t.clone(), p.compat_w.clone());
        assert!(r.is_err());
        let bad = Thresholds {
            d_w: 3000.0,
            ..Thresholds::default()
        };
        assert!(bad.validate().is_err());
    }
}
