//! Matches every transit user of a synthetic city against the phone users
//! and scores the best-match pairing against the ground truth.
//!
//! `cargo run --release --example match_pipeline -- [n_paired] [days]`

use std::time::Instant;

use trace_matcher::pipeline::{build_params, success_rate};
use trace_matcher::synth::{generate, SynthConfig};
use trace_matcher::{match_all, Config, SpatioTemporalIndex};

fn main() -> trace_matcher::Result<()> {
    let mut args = std::env::args().skip(1);
    let synth = SynthConfig {
        n_paired: args.next().and_then(|s| s.parse().ok()).unwrap_or(1000),
        days: args.next().and_then(|s| s.parse().ok()).unwrap_or(14),
        ..SynthConfig::default()
    };
    let city = generate(&synth)?;
    let cfg = Config::default();
    let params = build_params(city.stops(), city.antennas(), cfg.thresholds, cfg.clip_margin)?;
    let idx = SpatioTemporalIndex::build(&city.comm.trajectories, city.comm.locations.len());

    let started = Instant::now();
    let run = match_all(&city.transport.trajectories, &city.comm.trajectories, &idx, &params, None);
    let alibis = run.outcomes.iter().filter(|o| o.is_alibi()).count();
    println!(
        "{} outcomes ({alibis} alibis) from {} index hits in {:.2?}",
        run.outcomes.len(),
        run.work.index_hits,
        started.elapsed()
    );
    println!(
        "pairing success over {} days: {:.3}",
        synth.days,
        success_rate(&run.pairings, &city.truth_ordinals())
    );
    Ok(())
}
