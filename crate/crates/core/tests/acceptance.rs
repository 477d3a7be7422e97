//! Acceptance suite. Prints one PASS/FAIL line per criterion plus the
//! measurements behind it. Set `ACCEPTANCE_STRICT=1` to turn any FAIL into
//! a non-zero exit status.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{city_with_params, random_distribution, rng, simulate_px, small_city_config};
use rand::Rng;
use trace_matcher::geometry::{
    build_compatibility, build_voronoi, distance_to_convex_polygon, ClipRect, CompatibilityMap, Point,
};
use trace_matcher::matchability::{fit_px_curve, p_x, ps_pt_ratio, CurveFit, FitOptions};
use trace_matcher::pipeline::{build_params, compute_stats, estimate, success_rate};
use trace_matcher::stats::{unicity, MatchCountHistogram, MatchDistribution, Proximity, UnicityQuery};
use trace_matcher::synth::{generate, has_spatial_match, oracle_match_all, SynthConfig};
use trace_matcher::{
    match_all, Config, DatasetTag, EventRecord, LocationIdx, LocationTable, SpatioTemporalIndex, TimeWindow,
    Trajectory, TripFlag,
};

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = fn() -> Verdict;

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn criterion_1() -> Verdict {
    let started = Instant::now();
    let mut mismatched = Vec::new();
    let mut outcomes = 0usize;
    let mut records = (0usize, 0usize);
    for seed in 1..=20 {
        let (city, params) = city_with_params(&small_city_config(seed));
        let (t, c) = (&city.transport.trajectories, &city.comm.trajectories);
        records.0 += city.transport.n_records();
        records.1 += city.comm.n_records();
        let idx = SpatioTemporalIndex::build(c, city.comm.locations.len());
        let run = match_all(t, c, &idx, &params, None);
        let oracle = oracle_match_all(t, c, &params);
        // The candidate search only evaluates pairs that share a spatial match; every
        // other pair is an implicit zero.
        let reachable: Vec<_> = oracle
            .iter()
            .copied()
            .filter(|o| has_spatial_match(&t[o.t_user as usize], &c[o.c_user as usize], &params))
            .collect();
        let implicit_zero = oracle.len() - reachable.len();
        let unreached_nonzero = oracle
            .iter()
            .filter(|o| o.m > 0)
            .filter(|o| run.outcomes.binary_search(o).is_err())
            .count();
        if run.outcomes != reachable || unreached_nonzero > 0 || implicit_zero + run.outcomes.len() != t.len() * c.len()
        {
            mismatched.push(seed);
        }
        outcomes += run.outcomes.len();
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        mismatched.is_empty() && secs < 60.0,
        format!(
            "20 instances (200x200 users, {:.0} + {:.0} records per side on average), {outcomes} outcomes, mismatched seeds {mismatched:?}, {secs:.1}s",
            records.0 as f64 / 20.0,
            records.1 as f64 / 20.0
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut r = rng(2024);
    let draws = 100_000;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for trial in 0..50 {
        let len_t = r.random_range(2..8);
        let len_s = r.random_range(2..8);
        let pt = random_distribution(&mut r, len_t, 0.0);
        let ps = random_distribution(&mut r, len_s, 0.6);
        let n_c = r.random_range(1..=20);
        let exact = p_x(&pt, &ps, n_c).unwrap();
        let sim = simulate_px(&pt, &ps, n_c, draws, 10_000 + trial);
        let se = (exact * (1.0 - exact) / draws as f64).sqrt();
        let z = if se > 0.0 {
            (sim - exact).abs() / se
        } else if sim == exact {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
        failures += usize::from(z > 3.0);
    }
    let any_ps = MatchDistribution::new(vec![0.5, 0.3, 0.2]).unwrap();
    let zero = p_x(&MatchDistribution::point_mass(0), &any_ps, 7).unwrap();
    let one = p_x(
        &MatchDistribution::new(vec![0.0, 0.4, 0.6]).unwrap(),
        &MatchDistribution::point_mass(0),
        1000,
    )
    .unwrap();
    let ps = MatchDistribution::new(vec![0.99, 0.009, 0.001]).unwrap();
    let third = p_x(&MatchDistribution::point_mass(2), &ps, 2).unwrap();
    let analytic = zero == 0.0 && one == 1.0 && (third - 0.998001).abs() <= 1e-15;
    verdict(
        failures == 0 && analytic,
        format!(
            "50 triples at 1e5 draws: {failures} beyond 3 SE (worst {worst:.2} SE); analytic cases {zero}, {one}, {third:.12}"
        ),
    )
}

fn criterion_3() -> Verdict {
    let (a, b) = (434.69, 2.993);
    let pts: Vec<(f64, f64)> = (1..=40)
        .map(|i| {
            let m = 0.25 * i as f64;
            (m, 1.0 / (1.0 + a * m.powf(-b)))
        })
        .collect();
    let fit = fit_px_curve(&pts, &FitOptions::default()).unwrap();
    let ra = (fit.a - a).abs() / a;
    let rb = (fit.b - b).abs() / b;
    let reference = CurveFit::reference();
    let p1 = reference.eval(1.0);
    let gap = reference.branch_gap().unwrap_or(f64::INFINITY);
    verdict(
        ra < 1e-3 && rb < 1e-3 && (p1 - 0.002295).abs() <= 1e-6 && gap < 0.002,
        format!(
            "recovered A = {:.4} (rel {ra:.1e}), b = {:.5} (rel {rb:.1e}); p_x(1) = {p1:.7}; gap at 21.09 = {gap:.5}",
            fit.a, fit.b
        ),
    )
}

fn extrapolation_run(colocate: f64) -> (Vec<(u32, f64, f64)>, CurveFit) {
    let synth = SynthConfig {
        n_paired: 2000,
        days: 28,
        colocate_prob: colocate,
        ..SynthConfig::default()
    };
    let city = generate(&synth).unwrap();
    let cfg = Config::default();
    let params = build_params(city.stops(), city.antennas(), cfg.thresholds, cfg.clip_margin).unwrap();
    let truth = city.truth_ordinals();
    let week = 7 * 86_400;
    let prefix = |k: i64| TimeWindow::new(synth.start_time, synth.start_time + k * week);

    let (t1, c1) = (city.transport.restrict(prefix(1)), city.comm.restrict(prefix(1)));
    let idx = SpatioTemporalIndex::build(&c1.trajectories, c1.locations.len());
    let run = match_all(&t1.trajectories, &c1.trajectories, &idx, &params, None);
    let stats = compute_stats(&t1.trajectories, &c1.trajectories, &run.outcomes, &cfg).unwrap();
    let report = estimate(&stats.pt, &stats.ps.by_t_bin, &stats.pops, &cfg).unwrap();

    let rows = (1..=4u32)
        .map(|k| {
            let (tk, ck) = (city.transport.restrict(prefix(k as i64)), city.comm.restrict(prefix(k as i64)));
            let idx = SpatioTemporalIndex::build(&ck.trajectories, ck.locations.len());
            let run = match_all(&tk.trajectories, &ck.trajectories, &idx, &params, Some(1));
            let predicted = report.extrapolation[k as usize - 1].averages.all.unwrap_or(f64::NAN);
            (k, success_rate(&run.pairings, &truth), predicted)
        })
        .collect();
    (rows, report.fit)
}

fn format_rows(rows: &[(u32, f64, f64)]) -> String {
    rows.iter()
        .map(|(k, e, p)| format!("k={k}: empirical {e:.3} vs predicted {p:.3}"))
        .collect::<Vec<_>>()
        .join("; ")
}

fn criterion_4() -> Verdict {
    let (rows, fit) = extrapolation_run(0.9);
    let pass = rows.iter().filter(|r| r.0 >= 2).all(|(_, e, p)| (e - p).abs() <= 0.07);
    let (diag, _) = extrapolation_run(1.0);
    verdict(
        pass,
        format!(
            "colocate 0.9, 2000 pairs, week-1 fit A = {:.2}, b = {:.3}: {} | same city with colocate 1.0: {}",
            fit.a,
            fit.b,
            format_rows(&rows),
            format_rows(&diag)
        ),
    )
}

fn non_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn unicity_sweeps(trajs: &[Trajectory], n_loc: usize, prox: &dyn Fn(f64) -> Proximity) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let idx = SpatioTemporalIndex::build(trajs, n_loc);
    let eligible: Vec<usize> = (0..trajs.len()).filter(|&u| trajs[u].activity() >= 5).collect();
    let u = |p: usize, d: &Proximity, tau: i64| {
        let q = UnicityQuery {
            p,
            tau,
            n_trials: 1000,
            seed: 99,
        };
        unicity(trajs, &idx, d, &q, Some(&eligible)).unwrap().unicity
    };
    let p500 = prox(500.0);
    let by_p = (1..=5).map(|p| u(p, &p500, 300)).collect();
    let by_d = [200.0, 500.0, 1000.0].iter().map(|&d| u(2, &prox(d), 300)).collect();
    let by_tau = [60, 300, 600].iter().map(|&tau| u(2, &p500, tau)).collect();
    (by_p, by_d, by_tau)
}

fn planted_doppelgangers() -> (f64, f64) {
    // 100 users at private stops 5 km apart; users 70..100 come in
    // identical pairs sharing a stop.
    let stops: Vec<(String, Point)> = (0..85)
        .map(|i| (format!("s{i}"), Point::new(5000.0 * (i % 10) as f64, 5000.0 * (i / 10) as f64)))
        .collect();
    let table = LocationTable::new(DatasetTag::Transport, stops).unwrap();
    let trajs: Vec<Trajectory> = (0..100u32)
        .map(|u| {
            let stop = if u < 70 { u } else { 70 + (u - 70) / 2 };
            let recs = (0..10)
                .map(|k| EventRecord::new(1_000 + 3600 * k, LocationIdx(stop), TripFlag::Start))
                .collect();
            Trajectory::new(format!("u{u:03}"), recs)
        })
        .collect();
    let idx = SpatioTemporalIndex::build(&trajs, table.len());
    let prox = Proximity::within_distance(table.points(), 500.0);
    let q = UnicityQuery {
        p: 3,
        tau: 300,
        n_trials: 4000,
        seed: 5,
    };
    let e = unicity(&trajs, &idx, &prox, &q, None).unwrap();
    (e.unicity, 1.96 * (0.7f64 * 0.3 / q.n_trials as f64).sqrt())
}

fn criterion_5() -> Verdict {
    let city = generate(&SynthConfig {
        n_paired: 1000,
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let stops = city.stops().points().to_vec();
    let (tp, td, tt) = unicity_sweeps(&city.transport.trajectories, stops.len(), &|d| {
        Proximity::within_distance(&stops, d)
    });
    let ants = city.antennas();
    let tess = trace_matcher::pipeline::tessellate(ants, ants, 5000.0).unwrap();
    let (cp, cd, ct) = unicity_sweeps(&city.comm.trajectories, ants.len(), &|d| {
        Proximity::voronoi(ants.points(), &tess, d)
    });
    let monotone = non_decreasing(&tp)
        && non_decreasing(&cp)
        && non_increasing(&td)
        && non_increasing(&cd)
        && non_increasing(&tt)
        && non_increasing(&ct);
    let (planted, half_ci) = planted_doppelgangers();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",");
    verdict(
        monotone && (planted - 0.7).abs() <= half_ci,
        format!(
            "transport p:[{}] d:[{}] tau:[{}]; phone p:[{}] d:[{}] tau:[{}]; planted {planted:.4} (0.70 +/- {half_ci:.4})",
            fmt(&tp),
            fmt(&td),
            fmt(&tt),
            fmt(&cp),
            fmt(&cd),
            fmt(&ct)
        ),
    )
}

fn exhaustive_map(stops: &[Point], tess: &trace_matcher::geometry::Tessellation, d: f64) -> Vec<Vec<LocationIdx>> {
    stops
        .iter()
        .map(|&s| {
            (0..tess.n_antennas())
                .map(|a| LocationIdx(a as u32))
                .filter(|&a| distance_to_convex_polygon(s, &tess.cell_of(a).polygon) <= d)
                .collect()
        })
        .collect()
}

fn as_lists(map: &CompatibilityMap) -> Vec<Vec<LocationIdx>> {
    (0..map.n_stops()).map(|s| map.antennas(LocationIdx(s as u32)).to_vec()).collect()
}

fn criterion_6() -> Verdict {
    let mut r = rng(6);
    let (mut oracle_ok, mut subset_ok, mut cells_ok, mut sampled_ok) = (0, 0, 0, 0);
    let mut worst_area: f64 = 0.0;
    for _ in 0..50 {
        let side = r.random_range(3000.0..20_000.0);
        let pt = |r: &mut rand_chacha::ChaCha8Rng| Point::new(r.random_range(0.0..side), r.random_range(0.0..side));
        let stops: Vec<Point> = (0..r.random_range(5..60)).map(|_| pt(&mut r)).collect();
        let mut ants: Vec<Point> = (0..r.random_range(1..80)).map(|_| pt(&mut r)).collect();
        if ants.len() > 3 && r.random::<f64>() < 0.3 {
            ants[1] = ants[0];
        }
        let clip = ClipRect::around(stops.iter().chain(&ants).copied(), 5000.0).unwrap();
        let tess = build_voronoi(&ants, clip).unwrap();

        let walk = build_compatibility(&stops, &tess, 500.0);
        let transit = build_compatibility(&stops, &tess, 2000.0);
        oracle_ok += usize::from(
            as_lists(&walk) == exhaustive_map(&stops, &tess, 500.0)
                && as_lists(&transit) == exhaustive_map(&stops, &tess, 2000.0),
        );
        subset_ok += usize::from(walk.is_subset_of(&transit));

        // Every cell vertex is at least as close to its own site as to any
        // other antenna.
        let vertices_ok = tess.cells().iter().all(|c| {
            c.polygon.iter().all(|v| {
                let own = v.dist(c.site);
                ants.iter().all(|a| own <= v.dist(*a) + 1e-6 * (1.0 + own))
            })
        });
        let area: f64 = tess.cells().iter().map(|c| c.area()).sum();
        let rel = (area - tess.clip.area()).abs() / tess.clip.area();
        worst_area = worst_area.max(rel);
        cells_ok += usize::from(vertices_ok && rel <= 1e-6);

        // Points sampled inside each disc land in cells the map lists.
        let sampled = stops.iter().enumerate().all(|(s, &c)| {
            (0..200).all(|_| {
                let rho = 2000.0 * r.random::<f64>().sqrt();
                let th = r.random::<f64>() * std::f64::consts::TAU;
                let p = Point::new(c.x + rho * th.cos(), c.y + rho * th.sin());
                let nearest = (0..ants.len())
                    .min_by(|&i, &j| p.dist2(ants[i]).total_cmp(&p.dist2(ants[j])))
                    .unwrap();
                transit.contains(LocationIdx(s as u32), LocationIdx(nearest as u32))
            })
        });
        sampled_ok += usize::from(sampled);
    }
    verdict(
        oracle_ok == 50 && subset_ok == 50 && cells_ok == 50 && sampled_ok == 50,
        format!(
            "50 instances: oracle equal {oracle_ok}, subset {subset_ok}, valid tilings {cells_ok} (worst area error {worst_area:.1e}), disc samples covered {sampled_ok}"
        ),
    )
}

fn normalization_error(h: &MatchCountHistogram) -> f64 {
    let total: f64 = h.counts().keys().map(|&m| h.probability(m)).sum();
    (total - 1.0).abs()
}

fn criterion_7() -> Verdict {
    let (city, params) = city_with_params(&small_city_config(77));
    let (t, c) = (&city.transport.trajectories, &city.comm.trajectories);
    let idx = SpatioTemporalIndex::build(c, city.comm.locations.len());
    let run = match_all(t, c, &idx, &params, None);
    let exact_cfg = Config {
        sample_pairs: u64::MAX,
        ..Config::default()
    };
    let exact = compute_stats(t, c, &run.outcomes, &exact_cfg).unwrap();
    let sampled = compute_stats(
        t,
        c,
        &run.outcomes,
        &Config {
            sample_pairs: 500,
            ..Config::default()
        },
    )
    .unwrap();
    let all_hists = exact
        .pt
        .values()
        .chain(sampled.pt.values())
        .chain(exact.ps.by_group.values())
        .chain(exact.ps.by_t_bin.values())
        .chain(exact.ps.best.per_t_bin.values());
    let worst_norm = all_hists.map(normalization_error).fold(0.0, f64::max);
    let violations = exact
        .pt
        .iter()
        .filter(|(k, h)| {
            let s = &exact.ps.by_group[*k];
            (1.0 - s.probability(0)) > (1.0 - h.probability(0)) + 1e-12
        })
        .count();

    let m_max = 60;
    let mut pt = vec![0.0; m_max + 1];
    for (m, p) in pt.iter_mut().enumerate().skip(1) {
        *p = 1.0 / m as f64;
    }
    let s: f64 = pt.iter().sum::<f64>() * 1.5;
    for p in &mut pt {
        *p /= s;
    }
    pt[0] = 1.0 - pt.iter().sum::<f64>();
    let mut ps: Vec<f64> = pt.iter().enumerate().map(|(m, p)| p * 8e-6 * (m as f64).powf(-1.52)).collect();
    ps[0] = 1.0 - ps[1..].iter().sum::<f64>();
    let series = ps_pt_ratio(
        &MatchDistribution::new(pt).unwrap(),
        &MatchDistribution::new(ps).unwrap(),
        (1, m_max),
    )
    .unwrap();
    let fit = series.fit.unwrap();
    verdict(
        worst_norm <= 1e-12 && violations == 0 && (fit.exponent + 1.52).abs() <= 1e-3,
        format!(
            "{} groups, worst normalization error {worst_norm:.1e}, P_s/P_t mass violations {violations}, planted ratio fit {:.3e} m^{:.5}",
            exact.pt.len(),
            fit.coefficient,
            fit.exponent
        ),
    )
}

fn run_cli(args: &[&str]) -> f64 {
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_trace-matcher")).args(args).output().expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    started.elapsed().as_secs_f64()
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_8() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let city = [
        "--set", "synth.n_paired=100000", "--set", "synth.days=2", "--set", "synth.trips_per_day=2.5", "--set",
        "synth.records_per_day_c=5", "--set", "synth.n_stops=5000", "--set", "synth.n_antennas=3000", "--set",
        "synth.area=40000",
    ];
    let mut synth_args = vec!["synth".to_string()];
    synth_args.extend(city.iter().map(|x| x.to_string()));
    synth_args.extend(["--out".to_string(), s(&data)]);
    let synth_secs = run_cli(&synth_args.iter().map(String::as_str).collect::<Vec<_>>());
    let records: usize = ["transport.csv", "comm.csv"]
        .iter()
        .map(|f| std::fs::read_to_string(data.join(f)).unwrap().lines().count() - 1)
        .sum();

    let (d, r) = (s(&data), s(&run));
    let m = s(&run.join("matches.csv"));
    let mut stages = BTreeMap::new();
    stages.insert("1 ingest", run_cli(&["ingest", "--data", &d, "--out", &r]));
    stages.insert("2 precompute", run_cli(&["precompute", "--data", &r, "--out", &r]));
    stages.insert("3 match", run_cli(&["match", "--data", &r, "--out", &m]));
    stages.insert("4 stats", run_cli(&["stats", "--data", &r, "--matches", &m, "--out", &r]));
    stages.insert("5 estimate", run_cli(&["estimate", "--stats", &r, "--out", &r]));
    let total: f64 = stages.values().sum();

    // Work against candidate volume on growing slices of a city.
    let synth = SynthConfig {
        n_paired: 16_000,
        days: 2,
        seed: 4,
        ..SynthConfig::default()
    };
    let big = generate(&synth).unwrap();
    let cfg = Config::default();
    let params = build_params(big.stops(), big.antennas(), cfg.thresholds, cfg.clip_margin).unwrap();
    let idx = SpatioTemporalIndex::build(&big.comm.trajectories, big.comm.locations.len());
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for n in [1000, 2000, 4000, 8000, 16_000] {
        let slice = &big.transport.trajectories[..n];
        let mut best = f64::INFINITY;
        let mut hits = 0;
        for _ in 0..3 {
            let started = Instant::now();
            let run = match_all(slice, &big.comm.trajectories, &idx, &params, None);
            best = best.min(started.elapsed().as_secs_f64());
            hits = run.work.index_hits;
        }
        xs.push((hits as f64).ln());
        ys.push(best.ln());
    }
    let b = slope(&xs, &ys);
    let threads = rayon::current_num_threads();
    let per_stage = stages.iter().map(|(k, v)| format!("{}={v:.1}s", &k[2..])).collect::<Vec<_>>().join(", ");
    verdict(
        total < 600.0 && (0.8..=1.2).contains(&b),
        format!(
            "{records} records, pipeline {total:.1}s on {threads} hardware thread(s) ({per_stage}; synth {synth_secs:.1}s); log-log slope of match time on candidate count {b:.3}"
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters from the test harness are ignored.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, Criterion); 8] = [
        ("1 oracle equivalence", criterion_1),
        ("2 success probability vs simulation", criterion_2),
        ("3 fitted curve", criterion_3),
        ("4 extrapolation self-consistency", criterion_4),
        ("5 unicity", criterion_5),
        ("6 geometry", criterion_6),
        ("7 distribution sanity", criterion_7),
        ("8 performance envelope", criterion_8),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let started = Instant::now();
        let v = f();
        failed += usize::from(!v.pass);
        println!(
            "{} criterion {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
