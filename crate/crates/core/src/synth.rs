//! Seeded synthetic city with ground-truth pairs between transport and phone
//! users, plus the exhaustive all-pairs matcher used as a test oracle.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NearestSite, Point};
use crate::matcher::{classify_pair, compare_users, MatchOutcome, MatchParams, PairClass};
use crate::projection::{GeoPoint, LocalProjection};
use crate::records::{Dataset, DatasetTag, EventRecord, LocationIdx, LocationTable, Timestamp, Trajectory, TripFlag};
use crate::stats::mix_seed;

const DAY: i64 = 86_400;
/// Riding speed between stops, 18 km/h.
const VEHICLE_SPEED: f64 = 5.0;
const MIN_TRIP_SECONDS: i64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_stops: usize,
    pub n_antennas: usize,
    /// Side of the square city in metres.
    pub area: f64,
    pub n_paired: usize,
    pub n_unpaired_t: usize,
    pub n_unpaired_c: usize,
    pub trips_per_day: f64,
    pub records_per_day_c: f64,
    pub colocate_prob: f64,
    pub days: u32,
    pub seed: u64,
    /// Standard deviation of the displacement between a phone record's
    /// position and the true position, capped at `jitter_cap`.
    pub jitter_sigma: f64,
    pub jitter_cap: f64,
    /// Home and work anchors lie within this distance of their stop.
    pub anchor_offset: f64,
    /// Coefficient of variation of the per-user activity multipliers.
    pub activity_spread: f64,
    pub start_time: Timestamp,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stops: 400,
            n_antennas: 300,
            area: 20_000.0,
            n_paired: 1000,
            n_unpaired_t: 0,
            n_unpaired_c: 0,
            trips_per_day: 3.5,
            records_per_day_c: 7.5,
            colocate_prob: 1.0,
            days: 7,
            seed: 1,
            jitter_sigma: 300.0,
            jitter_cap: 350.0,
            anchor_offset: 100.0,
            activity_spread: 0.5,
            // 2018-01-01 00:00 UTC, a Monday.
            start_time: 1_514_764_800,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSynthConfig(m.into()));
        if self.n_stops == 0 || self.n_antennas == 0 {
            return bad("n_stops and n_antennas must be positive");
        }
        if !(self.area > 0.0 && self.area.is_finite()) {
            return bad("area must be positive");
        }
        for (name, v) in [
            ("trips_per_day", self.trips_per_day),
            ("records_per_day_c", self.records_per_day_c),
            ("jitter_sigma", self.jitter_sigma),
            ("jitter_cap", self.jitter_cap),
            ("anchor_offset", self.anchor_offset),
            ("activity_spread", self.activity_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidSynthConfig(format!("{name} must be a non-negative number")));
            }
        }
        if !(0.0..=1.0).contains(&self.colocate_prob) {
            return bad("colocate_prob must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn end_time(&self) -> Timestamp {
        self.start_time + self.days as i64 * DAY
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct SynthCity {
    pub transport: Dataset,
    pub comm: Dataset,
    /// `(transport user id, phone user id)` for every paired person, sorted.
    pub ground_truth: Vec<(String, String)>,
    /// Maps the planar coordinates to longitude/latitude for CSV output.
    pub projection: LocalProjection,
}

impl SynthCity {
    pub fn stops(&self) -> &LocationTable {
        &self.transport.locations
    }

    pub fn antennas(&self) -> &LocationTable {
        &self.comm.locations
    }

    /// Ground truth as `(transport ordinal, phone ordinal)`.
    pub fn truth_ordinals(&self) -> Vec<(u32, u32)> {
        self.ground_truth
            .iter()
            .map(|(t, c)| {
                let i = self.transport.user_ordinal(t).expect("ground truth user in transport");
                let j = self.comm.user_ordinal(c).expect("ground truth user in comm");
                (i as u32, j as u32)
            })
            .collect()
    }
}

/// A ride between two stops.
#[derive(Debug, Clone, Copy)]
struct Ride {
    depart: Timestamp,
    arrive: Timestamp,
    from: LocationIdx,
    to: LocationIdx,
}

struct Person {
    rides: Vec<Ride>,
    /// Anchor occupied before the first ride and after each ride.
    anchors_after: Vec<Point>,
    c_records: Vec<EventRecord>,
}

fn uniform_in_disc(rng: &mut impl Rng, center: Point, r: f64) -> Point {
    let rho = r * rng.random::<f64>().sqrt();
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    Point::new(center.x + rho * theta.cos(), center.y + rho * theta.sin())
}

fn activity_multiplier(rng: &mut impl Rng, cv: f64) -> f64 {
    if cv <= 0.0 {
        return 1.0;
    }
    let shape = 1.0 / (cv * cv);
    Gamma::new(shape, cv * cv).map(|g| g.sample(rng)).unwrap_or(1.0)
}

fn poisson(rng: &mut impl Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

fn position_at(p: &Person, stops: &[Point], t: Timestamp) -> Point {
    // Index of the first ride departing after t.
    let k = p.rides.partition_point(|r| r.depart <= t);
    if k == 0 {
        return p.anchors_after[0];
    }
    let r = &p.rides[k - 1];
    if t >= r.arrive {
        return p.anchors_after[k];
    }
    let (a, b) = (stops[r.from.index()], stops[r.to.index()]);
    let f = (t - r.depart) as f64 / (r.arrive - r.depart) as f64;
    Point::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
}

fn simulate_person(
    cfg: &SynthConfig,
    stops: &[Point],
    antennas: &NearestSite,
    n_antennas: usize,
    rng: &mut ChaCha8Rng,
    emit_c: bool,
) -> Person {
    let home_stop = rng.random_range(0..stops.len());
    let mut work_stop = rng.random_range(0..stops.len());
    if stops.len() > 1 {
        while work_stop == home_stop {
            work_stop = rng.random_range(0..stops.len());
        }
    }
    let anchor_stop = [home_stop, work_stop];
    let anchor = [
        uniform_in_disc(rng, stops[home_stop], cfg.anchor_offset),
        uniform_in_disc(rng, stops[work_stop], cfg.anchor_offset),
    ];
    let t_mult = activity_multiplier(rng, cfg.activity_spread);
    let c_mult = activity_multiplier(rng, cfg.activity_spread);
    let dwell = Exp::new(1.0f64 / 7200.0).expect("positive rate");

    let mut rides = Vec::new();
    let mut anchors_after = vec![anchor[0]];
    let mut at = 0usize;
    for day in 0..cfg.days as i64 {
        let day_start = cfg.start_time + day * DAY;
        let n_trips = poisson(rng, cfg.trips_per_day * t_mult);
        let mut t = day_start + 6 * 3600 + rng.random_range(0..3 * 3600);
        if let Some(last) = rides.last() {
            let last: &Ride = last;
            t = t.max(last.arrive + 45 * 60);
        }
        for _ in 0..n_trips {
            let (from, to) = (anchor_stop[at], anchor_stop[1 - at]);
            let dist = stops[from].dist(stops[to]);
            let arrive = t + ((dist / VEHICLE_SPEED).round() as i64).max(MIN_TRIP_SECONDS);
            if arrive >= cfg.end_time() {
                break;
            }
            rides.push(Ride {
                depart: t,
                arrive,
                from: LocationIdx(from as u32),
                to: LocationIdx(to as u32),
            });
            at = 1 - at;
            anchors_after.push(anchor[at]);
            t = arrive + 45 * 60 + dwell.sample(rng).round() as i64;
        }
    }

    let mut person = Person {
        rides,
        anchors_after,
        c_records: Vec::new(),
    };
    if emit_c {
        let span = cfg.days as i64 * DAY;
        let n = poisson(rng, cfg.records_per_day_c * c_mult * cfg.days as f64);
        let jitter = Normal::new(0.0, cfg.jitter_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let mut recs = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let t = cfg.start_time + rng.random_range(0..span.max(1));
            let ant = if rng.random::<f64>() < cfg.colocate_prob {
                let here = position_at(&person, stops, t);
                let (mut dx, mut dy) = if cfg.jitter_sigma > 0.0 {
                    (jitter.sample(rng), jitter.sample(rng))
                } else {
                    (0.0, 0.0)
                };
                let len = dx.hypot(dy);
                if len > cfg.jitter_cap {
                    dx *= cfg.jitter_cap / len;
                    dy *= cfg.jitter_cap / len;
                }
                antennas.nearest(Point::new(here.x + dx, here.y + dy)).expect("antennas exist")
            } else {
                rng.random_range(0..n_antennas)
            };
            recs.push(EventRecord::new(t, LocationIdx(ant as u32), TripFlag::None));
        }
        person.c_records = recs;
    }
    person
}

fn tap_records(p: &Person) -> Vec<EventRecord> {
    p.rides
        .iter()
        .flat_map(|r| {
            [
                EventRecord::new(r.depart, r.from, TripFlag::Start),
                EventRecord::new(r.arrive, r.to, TripFlag::End),
            ]
        })
        .collect()
}

fn shuffled_ids(rng: &mut ChaCha8Rng, prefix: &str, n: usize) -> Vec<String> {
    let width = n.max(1).to_string().len().max(5);
    let mut ids: Vec<String> = (0..n).map(|i| format!("{prefix}{i:0width$}")).collect();
    ids.shuffle(rng);
    ids
}

/// Builds a synthetic city. Persons `0..n_paired` appear in both datasets,
/// the next `n_unpaired_t` only in transport, the last `n_unpaired_c` only
/// in the phone dataset. User ids are shuffled so ordinals reveal nothing.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCity> {
    cfg.validate()?;
    let mut layout_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, u64::MAX, 0));
    let side = cfg.area;
    let mut draw = |n: usize| -> Vec<Point> {
        (0..n)
            .map(|_| Point::new(layout_rng.random::<f64>() * side, layout_rng.random::<f64>() * side))
            .collect()
    };
    let stop_pts = draw(cfg.n_stops);
    let antenna_pts = draw(cfg.n_antennas);
    let nearest = NearestSite::new(&antenna_pts);

    let n_t = cfg.n_paired + cfg.n_unpaired_t;
    let n_persons = n_t + cfg.n_unpaired_c;
    let persons: Vec<Person> = (0..n_persons)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, p as u64, 1));
            let emit_c = p < cfg.n_paired || p >= n_t;
            simulate_person(cfg, &stop_pts, &nearest, antenna_pts.len(), &mut rng, emit_c)
        })
        .collect();

    let mut id_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, u64::MAX, 1));
    let t_ids = shuffled_ids(&mut id_rng, "t", n_t);
    let c_ids = shuffled_ids(&mut id_rng, "c", cfg.n_paired + cfg.n_unpaired_c);

    let mut t_trajs = Vec::with_capacity(n_t);
    let mut c_trajs = Vec::with_capacity(c_ids.len());
    let mut ground_truth = Vec::with_capacity(cfg.n_paired);
    for (p, person) in persons.iter().enumerate() {
        if p < n_t {
            t_trajs.push(Trajectory::new(t_ids[p].clone(), tap_records(person)));
        }
        let c_slot = if p < cfg.n_paired {
            Some(p)
        } else if p >= n_t {
            Some(p - n_t + cfg.n_paired)
        } else {
            None
        };
        if let Some(j) = c_slot {
            c_trajs.push(Trajectory::new(c_ids[j].clone(), person.c_records.clone()));
        }
        if p < cfg.n_paired {
            ground_truth.push((t_ids[p].clone(), c_ids[p].clone()));
        }
    }
    t_trajs.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    c_trajs.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    ground_truth.sort();

    let stops = LocationTable::new(
        DatasetTag::Transport,
        stop_pts.iter().enumerate().map(|(i, p)| (format!("stop{i:05}"), *p)).collect(),
    )?;
    let antennas = LocationTable::new(
        DatasetTag::Communication,
        antenna_pts.iter().enumerate().map(|(i, p)| (format!("ant{i:05}"), *p)).collect(),
    )?;
    // Location ids are zero-padded, so sorting kept the generation order
    // that the record indices refer to.
    debug_assert!(stops.ids().windows(2).all(|w| w[0] < w[1]));

    let projection = LocalProjection::new(GeoPoint::new(103.8198, 1.3521))?;
    Ok(SynthCity {
        transport: Dataset {
            tag: DatasetTag::Transport,
            trajectories: t_trajs,
            locations: stops,
        },
        comm: Dataset {
            tag: DatasetTag::Communication,
            trajectories: c_trajs,
            locations: antennas,
        },
        ground_truth,
        projection,
    })
}

/// Compares every transport user with every phone user. Returns one
/// outcome per pair, sorted.
pub fn oracle_match_all(transport: &[Trajectory], comm: &[Trajectory], params: &MatchParams) -> Vec<MatchOutcome> {
    let mut out: Vec<MatchOutcome> = transport
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, t)| {
            comm.iter()
                .enumerate()
                .map(move |(j, c)| MatchOutcome::from_comparison(i as u32, j as u32, compare_users(t, c, params)))
        })
        .collect();
    out.sort();
    out
}

/// True when some record pair of the two users is a spatial match.
pub fn has_spatial_match(t: &Trajectory, c: &Trajectory, params: &MatchParams) -> bool {
    t.records.iter().any(|rt| {
        c.records
            .iter()
            .any(|rc| classify_pair(rt, rc, params) == PairClass::SpatialMatch)
    })
}
