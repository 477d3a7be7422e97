//! Activity, time-of-week and trip-speed profiles of a synthetic city.
//!
//! `cargo run --release --example profile_dataset`

use trace_matcher::stats::{profile, ProfileOptions};
use trace_matcher::synth::{generate, SynthConfig};
use trace_matcher::ActivityBins;

fn main() -> trace_matcher::Result<()> {
    let synth = SynthConfig {
        n_paired: 1000,
        ..SynthConfig::default()
    };
    let city = generate(&synth)?;
    let bins = ActivityBins::default();
    for ds in [&city.transport, &city.comm] {
        let rep = profile(ds, &bins, &ProfileOptions::for_dataset(ds.tag, synth.start_time));
        println!("{:?} records per user:", ds.tag);
        for (lo, users) in &rep.records_per_user {
            println!("  {lo:>5}+ {users}");
        }
        let busiest = rep
            .time_of_week
            .iter()
            .flat_map(|c| c.counts.iter().enumerate())
            .max_by_key(|(_, n)| **n)
            .map(|(slot, _)| slot);
        if let Some(slot) = busiest {
            println!("  busiest 15-minute slot of the week: day {} {:02}:{:02}", slot / 96, slot % 96 / 4, slot % 4 * 15);
        }
        if let Some(sp) = rep.speeds {
            println!("  {} trips, {} orphan starts, {} orphan ends", sp.trips, sp.orphan_starts, sp.orphan_ends);
        }
    }
    Ok(())
}
