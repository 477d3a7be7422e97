//! Tessellates the antennas of a synthetic city and builds the stop-antenna
//! compatibility maps for the walking and transit radii.
//!
//! `cargo run --example voronoi_compat`

use trace_matcher::geometry::build_compatibility;
use trace_matcher::pipeline::tessellate;
use trace_matcher::synth::{generate, SynthConfig};
use trace_matcher::Thresholds;

fn main() -> trace_matcher::Result<()> {
    let city = generate(&SynthConfig {
        n_paired: 10,
        ..SynthConfig::default()
    })?;
    let tess = tessellate(city.stops(), city.antennas(), 5000.0)?;
    let covered: f64 = tess.cells().iter().map(|c| c.area()).sum();
    println!(
        "{} cells cover {:.6e} m^2 of a {:.6e} m^2 clip rectangle",
        tess.cells().len(),
        covered,
        tess.clip.area()
    );
    let th = Thresholds::default();
    let walk = build_compatibility(city.stops().points(), &tess, th.d_w);
    let transit = build_compatibility(city.stops().points(), &tess, th.d_t);
    for (name, map) in [("walk", &walk), ("transit", &transit)] {
        println!(
            "{name} (d = {} m): {} pairs, {:.1} antennas per stop",
            map.radius(),
            map.len(),
            map.len() as f64 / map.n_stops() as f64
        );
    }
    println!("walk map contained in transit map: {}", walk.is_subset_of(&transit));
    Ok(())
}
