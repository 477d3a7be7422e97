//! Estimates the temporal and spatial match distributions of a synthetic
//! city and turns them into per-group success probabilities.
//!
//! `cargo run --release --example matchability_estimate`

use trace_matcher::pipeline::{build_params, compute_stats, estimate};
use trace_matcher::synth::{generate, SynthConfig};
use trace_matcher::{match_all, Config, SpatioTemporalIndex};

fn main() -> trace_matcher::Result<()> {
    let city = generate(&SynthConfig {
        n_paired: 1500,
        ..SynthConfig::default()
    })?;
    let cfg = Config::default();
    let (t, c) = (&city.transport.trajectories, &city.comm.trajectories);
    let params = build_params(city.stops(), city.antennas(), cfg.thresholds, cfg.clip_margin)?;
    let idx = SpatioTemporalIndex::build(c, city.comm.locations.len());
    let run = match_all(t, c, &idx, &params, None);
    let stats = compute_stats(t, c, &run.outcomes, &cfg)?;
    let report = estimate(&stats.pt, &stats.ps.by_t_bin, &stats.pops, &cfg)?;

    println!("competing phone users: {}", report.n_c);
    println!("group_t,group_c,mbar,p_x");
    for g in report.groups.iter().filter(|g| g.mbar > 0.0) {
        println!("{},{},{:.3},{:.4}", g.t_label, g.c_label, g.mbar, g.p_x);
    }
    println!("weighted averages: {:?}", report.averages);
    println!("fitted curve: A = {:.3}, b = {:.3}", report.fit.a, report.fit.b);
    Ok(())
}
