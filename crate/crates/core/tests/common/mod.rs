#![allow(dead_code)]

use trace_matcher::matcher::MatchParams;
use trace_matcher::pipeline::build_params;
use trace_matcher::synth::{generate, SynthCity, SynthConfig};
use trace_matcher::Thresholds;

/// About 200 users and 5-6k records per side.
pub fn small_city_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_paired: 150,
        n_unpaired_t: 50,
        n_unpaired_c: 50,
        days: 4,
        colocate_prob: 0.9,
        seed,
        ..SynthConfig::default()
    }
}

pub fn city_with_params(cfg: &SynthConfig) -> (SynthCity, MatchParams) {
    let city = generate(cfg).expect("valid synth config");
    let params = build_params(city.stops(), city.antennas(), Thresholds::default(), 5000.0).expect("params");
    (city, params)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trace_matcher::stats::MatchDistribution;

fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

fn cdf(d: &MatchDistribution) -> Vec<f64> {
    d.probs()
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

/// Monte-Carlo version of the success experiment: draw the true pair's
/// count from `pt`, draw `n_c` competitor counts from `ps`, succeed when
/// every competitor stays strictly below the true count.
pub fn simulate_px(pt: &MatchDistribution, ps: &MatchDistribution, n_c: u64, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ct, cs) = (cdf(pt), cdf(ps));
    let mut wins = 0usize;
    for _ in 0..draws {
        let m_star = draw(&ct, &mut rng);
        if (0..n_c).all(|_| draw(&cs, &mut rng) < m_star) {
            wins += 1;
        }
    }
    wins as f64 / draws as f64
}

/// A random distribution over `0..len` with at least `p0_min` mass at 0.
pub fn random_distribution(rng: &mut ChaCha8Rng, len: usize, p0_min: f64) -> MatchDistribution {
    let p0 = p0_min + (1.0 - p0_min) * rng.random::<f64>();
    let raw: Vec<f64> = (1..len).map(|_| rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    let mut probs = vec![p0];
    probs.extend(raw.iter().map(|r| (1.0 - p0) * r / s));
    MatchDistribution::new(probs).expect("normalized")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
