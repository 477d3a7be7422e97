//! Generates a small synthetic city and prints what it contains.
//!
//! `cargo run --example synth_city -- [n_paired] [days]`

use trace_matcher::synth::{generate, SynthConfig};

fn main() -> trace_matcher::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = SynthConfig {
        n_paired: args.next().and_then(|s| s.parse().ok()).unwrap_or(500),
        days: args.next().and_then(|s| s.parse().ok()).unwrap_or(7),
        n_unpaired_c: 200,
        ..SynthConfig::default()
    };
    let city = generate(&cfg)?;
    for ds in [&city.transport, &city.comm] {
        let days = cfg.days as f64;
        println!(
            "{:?}: {} users, {} records ({:.2} per user per day), {} locations",
            ds.tag,
            ds.n_users(),
            ds.n_records(),
            ds.n_records() as f64 / ds.n_users() as f64 / days,
            ds.locations.len()
        );
    }
    let (t, c) = &city.ground_truth[0];
    println!("{} ground-truth pairs, e.g. {t} <-> {c}", city.ground_truth.len());
    Ok(())
}
