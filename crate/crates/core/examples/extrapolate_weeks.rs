//! Predicts success for longer observation periods from the reference curve
//! and a set of one-week expected match counts, then compares with the
//! fitted curve of a synthetic week.
//!
//! `cargo run --release --example extrapolate_weeks`

use std::collections::BTreeMap;

use trace_matcher::matchability::{extrapolate, CurveFit};
use trace_matcher::stats::Populations;
use trace_matcher::ActivityBins;

fn main() -> trace_matcher::Result<()> {
    let curve = CurveFit::reference();
    println!("mbar,p_x");
    for mbar in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 21.09, 32.0, 64.0] {
        println!("{mbar},{:.4}", curve.eval(mbar));
    }

    // Two transit groups against two phone groups with made-up one-week m̄.
    let bins = ActivityBins::default();
    let mbar: BTreeMap<(usize, usize), f64> =
        [((3, 2), 0.8), ((3, 5), 2.5), ((4, 2), 1.1), ((4, 5), 3.4)].into_iter().collect();
    let mut t_sizes = vec![0; 14];
    t_sizes[3] = 300;
    t_sizes[4] = 200;
    let mut c_sizes = vec![0; 16];
    c_sizes[2] = 700;
    c_sizes[5] = 300;
    let wt = Populations::marginals(&t_sizes);
    let wc = Populations::marginals(&c_sizes);
    println!("weeks,avg_all");
    for weeks in 1..=4 {
        let row = extrapolate(&curve, &mbar, weeks, &wt, &wc, &bins)?;
        println!("{weeks},{:.4}", row.averages.all.unwrap_or(f64::NAN));
    }
    Ok(())
}
