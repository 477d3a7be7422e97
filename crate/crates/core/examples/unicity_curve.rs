//! Unicity of the transit traces of a synthetic city: how often p random
//! records of a user single them out.
//!
//! `cargo run --release --example unicity_curve`

use trace_matcher::stats::{unicity, Proximity, UnicityQuery};
use trace_matcher::synth::{generate, SynthConfig};
use trace_matcher::SpatioTemporalIndex;

fn main() -> trace_matcher::Result<()> {
    let city = generate(&SynthConfig {
        n_paired: 2000,
        ..SynthConfig::default()
    })?;
    let trajs = &city.transport.trajectories;
    let idx = SpatioTemporalIndex::build(trajs, city.stops().len());
    println!("d_m,tau_s,p,unicity,stderr");
    for d in [200.0, 500.0, 1000.0] {
        let prox = Proximity::within_distance(city.stops().points(), d);
        for tau in [60, 300, 600] {
            for p in 1..=5 {
                let q = UnicityQuery {
                    p,
                    tau,
                    n_trials: 500,
                    seed: 7,
                };
                let e = unicity(trajs, &idx, &prox, &q, None)?;
                println!("{d},{tau},{p},{:.3},{:.3}", e.unicity, e.stderr);
            }
        }
    }
    Ok(())
}
