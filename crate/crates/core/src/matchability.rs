//! Expected matching success from the match-count distributions.
//!
//! For a transport user of activity bin `r1`, the chance that none of `n_c`
//! phone users reaches `m*` or more spatial matches by accident is
//! `gamma(m* | r1) = (1 - sum_{m >= m*} P_s(m | r1))^n_c`. Averaging `gamma`
//! over the temporal-match distribution of the true pair gives the success
//! probability `p_x(r1, r2)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bins::{ActivityBins, BinRange};
use crate::error::{Error, Result};
use crate::records::DatasetTag;
use crate::stats::{GroupKey, MatchCountHistogram, MatchDistribution, Populations};

const TAIL_SLACK: f64 = 1e-12;

fn gamma_from_tail(tail: f64, n_c: u64) -> Result<f64> {
    if tail.is_nan() || tail > 1.0 + TAIL_SLACK {
        return Err(Error::CorruptHistogram(tail));
    }
    if n_c == 0 {
        return Err(Error::InvalidParams("competing population n_c must be at least 1".into()));
    }
    let tail = tail.max(0.0);
    if tail >= 1.0 {
        return Ok(0.0);
    }
    // log-space keeps (1 - tiny)^(millions) accurate.
    Ok((n_c as f64 * (-tail).ln_1p()).exp())
}

/// Probability that no competitor reaches `m_star` or more matches.
pub fn gamma(ps: &MatchDistribution, n_c: u64, m_star: usize) -> Result<f64> {
    gamma_from_tail(ps.tail(m_star), n_c)
}

/// `gamma(m | r1)` for `m = 0..=m_max`.
pub fn gamma_table(ps: &MatchDistribution, n_c: u64, m_max: usize) -> Result<Vec<f64>> {
    let tails = ps.tails();
    (0..=m_max)
        .map(|m| gamma_from_tail(tails.get(m).copied().unwrap_or(0.0), n_c))
        .collect()
}

/// Expected value of `gamma` under the temporal-match distribution.
pub fn p_x(pt: &MatchDistribution, ps: &MatchDistribution, n_c: u64) -> Result<f64> {
    let tails = ps.tails();
    let mut acc = 0.0;
    for (m, &w) in pt.probs().iter().enumerate() {
        let g = gamma_from_tail(tails.get(m).copied().unwrap_or(0.0), n_c)?;
        acc += w * g;
    }
    Ok(acc.clamp(0.0, 1.0))
}

/// Which activity groups enter an average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub t: BinRange,
    pub c: BinRange,
}

impl Exclusion {
    pub const ALL: Exclusion = Exclusion {
        t: BinRange::ALL,
        c: BinRange::ALL,
    };
    /// Drops low-activity users (under 10 taps, under 20 phone records) and
    /// implausibly active ones (125+ taps, 2000+ phone records).
    pub const ACTIVE: Exclusion = Exclusion {
        t: BinRange { min: 10, max: Some(125) },
        c: BinRange { min: 20, max: Some(2000) },
    };
    pub const T30_49: Exclusion = Exclusion {
        t: BinRange { min: 30, max: Some(50) },
        c: BinRange::ALL,
    };
    pub const T30_49_ACTIVE: Exclusion = Exclusion {
        t: BinRange { min: 30, max: Some(50) },
        c: BinRange { min: 20, max: Some(2000) },
    };

    pub fn keeps(&self, bins: &ActivityBins, (a, b): GroupKey) -> bool {
        self.t.keeps(bins, DatasetTag::Transport, a) && self.c.keeps(bins, DatasetTag::Communication, b)
    }
}

/// Average of `p_x` over group pairs weighted by the product of the
/// transport and phone activity marginals, renormalised over the groups
/// that survive `exclusion` and have a value.
pub fn weighted_average(
    px: &BTreeMap<GroupKey, f64>,
    weights_t: &[f64],
    weights_c: &[f64],
    bins: &ActivityBins,
    exclusion: &Exclusion,
) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (&(a, b), &p) in px {
        if !exclusion.keeps(bins, (a, b)) {
            continue;
        }
        let w = weights_t.get(a).copied().unwrap_or(0.0) * weights_c.get(b).copied().unwrap_or(0.0);
        num += w * p;
        den += w;
    }
    if den <= 0.0 {
        return Err(Error::AllExcluded);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTail {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearTail {
    pub fn eval(&self, mbar: f64) -> f64 {
        self.slope * mbar + self.intercept
    }
}

/// `p_x ~ 1 / (1 + A * mbar^-b)` with an optional linear branch above the
/// crossover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub a: f64,
    pub b: f64,
    pub linear: Option<LinearTail>,
    /// Infinite when there is no linear branch; stored as `null` in JSON.
    #[serde(with = "infinite_as_null")]
    pub crossover: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl CurveFit {
    /// Constants fitted on one week of city-wide transit and phone data.
    pub fn reference() -> Self {
        Self {
            a: 434.69,
            b: 2.993,
            linear: Some(LinearTail {
                slope: 4.66e-4,
                intercept: 0.946,
            }),
            crossover: 21.09,
        }
    }

    pub fn power_law(&self, mbar: f64) -> f64 {
        if mbar <= 0.0 {
            return 0.0;
        }
        1.0 / (1.0 + self.a * mbar.powf(-self.b))
    }

    /// Success probability at `mbar` expected temporal matches, capped to
    /// `[0, 1]`.
    pub fn eval(&self, mbar: f64) -> f64 {
        match self.linear {
            Some(l) if mbar > self.crossover => l.eval(mbar).clamp(0.0, 1.0),
            _ => self.power_law(mbar),
        }
    }

    /// Absolute difference of the two branches at the crossover.
    pub fn branch_gap(&self) -> Option<f64> {
        self.linear
            .map(|l| (self.power_law(self.crossover) - l.eval(self.crossover)).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Points with `mbar` above this value also feed the linear branch.
    pub linear_threshold: f64,
    /// Probabilities are clipped to `[eps, 1 - eps]` before the logit.
    pub eps: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            linear_threshold: 21.09,
            eps: 1e-6,
        }
    }
}

/// Ordinary least squares `y = slope * x + intercept`.
fn ols(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Root of `power_law - linear` nearest to `near`, if the branches cross.
fn branch_intersection(a: f64, b: f64, tail: LinearTail, near: f64, hi: f64) -> Option<f64> {
    let curve = CurveFit {
        a,
        b,
        linear: None,
        crossover: f64::INFINITY,
    };
    let f = |m: f64| curve.power_law(m) - tail.eval(m);
    let (lo, hi) = (1e-3f64, hi.max(near) * 10.0);
    let steps = 4000;
    let ratio = (hi / lo).powf(1.0 / steps as f64);
    let mut roots = Vec::new();
    let mut x0 = lo;
    let mut f0 = f(x0);
    for _ in 0..steps {
        let x1 = x0 * ratio;
        let f1 = f(x1);
        if f0 == 0.0 {
            roots.push(x0);
        } else if f0 * f1 < 0.0 {
            let (mut l, mut r) = (x0, x1);
            for _ in 0..100 {
                let mid = 0.5 * (l + r);
                if f(l) * f(mid) <= 0.0 {
                    r = mid;
                } else {
                    l = mid;
                }
            }
            roots.push(0.5 * (l + r));
        }
        x0 = x1;
        f0 = f1;
    }
    roots
        .into_iter()
        .min_by(|x, y| (x - near).abs().total_cmp(&(y - near).abs()))
}

/// Fits the logistic power law by linear regression of `logit(p_x)` on
/// `ln(mbar)`, plus a linear tail over the points above the threshold.
pub fn fit_px_curve(points: &[(f64, f64)], opts: &FitOptions) -> Result<CurveFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(m, p)| m.is_finite() && *m > 0.0 && p.is_finite())
        .collect();
    if pts.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points with mbar > 0, got {}", pts.len())));
    }
    let xs: Vec<f64> = pts.iter().map(|(m, _)| m.ln()).collect();
    let ys: Vec<f64> = pts
        .iter()
        .map(|(_, p)| {
            let p = p.clamp(opts.eps, 1.0 - opts.eps);
            (p / (1.0 - p)).ln()
        })
        .collect();
    let (b, c) = ols(&xs, &ys).ok_or_else(|| Error::DegenerateFit("all mbar values are equal".into()))?;
    let a = (-c).exp();

    let (tx, ty): (Vec<f64>, Vec<f64>) = pts
        .iter()
        .filter(|(m, _)| *m > opts.linear_threshold)
        .copied()
        .unzip();
    let linear = ols(&tx, &ty).map(|(slope, intercept)| LinearTail { slope, intercept });
    let crossover = match linear {
        Some(l) => {
            let hi = pts.iter().map(|(m, _)| *m).fold(0.0, f64::max);
            branch_intersection(a, b, l, opts.linear_threshold, hi).unwrap_or(opts.linear_threshold)
        }
        None => f64::INFINITY,
    };
    Ok(CurveFit {
        a,
        b,
        linear,
        crossover,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub coefficient: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSeries {
    /// `(m, P_s(m) / P_t(m))` for every `m` with `P_t(m) > 0`.
    pub points: Vec<(usize, f64)>,
    pub fit: Option<PowerLaw>,
}

/// Ratio of spatial to temporal match probabilities with a log-log fit over
/// `m` in `fit_range` (inclusive, `m >= 1`, ratios > 0 only).
pub fn ps_pt_ratio(
    pt: &MatchDistribution,
    ps: &MatchDistribution,
    fit_range: (usize, usize),
) -> Result<RatioSeries> {
    let points: Vec<(usize, f64)> = (0..pt.len())
        .filter(|&m| pt.get(m) > 0.0)
        .map(|m| (m, ps.get(m) / pt.get(m)))
        .collect();
    if !points.iter().any(|&(_, r)| r > 0.0) {
        return Err(Error::EmptySupport);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|&&(m, r)| m >= fit_range.0.max(1) && m <= fit_range.1 && r > 0.0)
        .map(|&(m, r)| ((m as f64).ln(), r.ln()))
        .unzip();
    let fit = ols(&xs, &ys).map(|(exponent, c)| PowerLaw {
        coefficient: c.exp(),
        exponent,
    });
    Ok(RatioSeries { points, fit })
}

/// Population-weighted pooling of per-group distributions: each group
/// contributes its normalised histogram times `weight(key)`.
pub fn pooled_distribution<'a>(
    hists: impl IntoIterator<Item = (GroupKey, &'a MatchCountHistogram)>,
    weight: impl Fn(GroupKey) -> f64,
) -> Result<MatchDistribution> {
    let mut acc: Vec<f64> = Vec::new();
    let mut total = 0.0;
    for (key, h) in hists {
        let w = weight(key);
        if w <= 0.0 || h.total() == 0 {
            continue;
        }
        for (&m, &n) in h.counts() {
            let m = m as usize;
            if acc.len() <= m {
                acc.resize(m + 1, 0.0);
            }
            acc[m] += w * n as f64 / h.total() as f64;
        }
        total += w;
    }
    if total == 0.0 {
        return Err(Error::EmptySupport);
    }
    for v in &mut acc {
        *v /= total;
    }
    MatchDistribution::new(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaTable {
    pub t_bin: usize,
    pub label: String,
    pub n_c: u64,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimate {
    pub t_bin: usize,
    pub c_bin: usize,
    pub t_label: String,
    pub c_label: String,
    pub mbar: f64,
    pub p_x: f64,
}

/// The four Table-style averages; `None` where every group is excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub all: Option<f64>,
    pub active: Option<f64>,
    pub t30_49: Option<f64>,
    pub t30_49_active: Option<f64>,
}

impl Averages {
    pub fn compute(
        px: &BTreeMap<GroupKey, f64>,
        wt: &[f64],
        wc: &[f64],
        bins: &ActivityBins,
    ) -> Result<Self> {
        let avg = |e: &Exclusion| match weighted_average(px, wt, wc, bins, e) {
            Ok(v) => Ok(Some(v)),
            Err(Error::AllExcluded) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            all: avg(&Exclusion::ALL)?,
            active: avg(&Exclusion::ACTIVE)?,
            t30_49: avg(&Exclusion::T30_49)?,
            t30_49_active: avg(&Exclusion::T30_49_ACTIVE)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekRow {
    pub weeks: u32,
    #[serde(flatten)]
    pub averages: Averages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TBinAverage {
    pub t_bin: usize,
    pub label: String,
    pub p_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchabilityReport {
    pub n_c: u64,
    pub gamma: Vec<GammaTable>,
    pub groups: Vec<GroupEstimate>,
    pub per_t_bin: Vec<TBinAverage>,
    pub averages: Averages,
    pub fit: CurveFit,
    /// `fitted` or `reference`.
    pub fit_source: String,
    pub extrapolation: Vec<WeekRow>,
}

/// Success probabilities after `weeks` weeks, assuming the expected number
/// of temporal matches per group grows linearly with time.
pub fn extrapolate(
    fit: &CurveFit,
    mbar_one_week: &BTreeMap<GroupKey, f64>,
    weeks: u32,
    weights_t: &[f64],
    weights_c: &[f64],
    bins: &ActivityBins,
) -> Result<WeekRow> {
    let px: BTreeMap<GroupKey, f64> = mbar_one_week
        .iter()
        .map(|(&k, &m)| (k, fit.eval(weeks as f64 * m)))
        .collect();
    Ok(WeekRow {
        weeks,
        averages: Averages::compute(&px, weights_t, weights_c, bins)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurveChoice {
    /// Fit the curve to this data's `(mbar, p_x)` points.
    Fitted,
    /// Use [`CurveFit::reference`].
    Reference,
}

/// Inputs of [`build_report`] besides the distributions.
#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub n_c: u64,
    pub weeks: u32,
    pub fit: FitOptions,
    pub curve: CurveChoice,
}

/// Full estimate from P_t per group and P_s per transport bin.
pub fn build_report(
    pt: &BTreeMap<GroupKey, MatchCountHistogram>,
    ps_by_t_bin: &BTreeMap<usize, MatchCountHistogram>,
    pops: &Populations,
    bins: &ActivityBins,
    opts: &ReportOptions,
) -> Result<MatchabilityReport> {
    let wt = Populations::marginals(&pops.t_sizes);
    let wc = Populations::marginals(&pops.c_sizes);

    let mut ps_dist = BTreeMap::new();
    for (&a, h) in ps_by_t_bin {
        ps_dist.insert(a, h.distribution()?);
    }

    let mut groups = Vec::new();
    let mut px_map = BTreeMap::new();
    let mut mbar_map = BTreeMap::new();
    let mut m_max: BTreeMap<usize, usize> = BTreeMap::new();
    for (&(a, b), h) in pt {
        let Some(ps) = ps_dist.get(&a) else { continue };
        let ptd = h.distribution()?;
        let px = p_x(&ptd, ps, opts.n_c)?;
        let mbar = h.mean();
        let e = m_max.entry(a).or_insert(0);
        *e = (*e).max(ptd.len().saturating_sub(1));
        px_map.insert((a, b), px);
        mbar_map.insert((a, b), mbar);
        groups.push(GroupEstimate {
            t_bin: a,
            c_bin: b,
            t_label: bins.label(DatasetTag::Transport, a),
            c_label: bins.label(DatasetTag::Communication, b),
            mbar,
            p_x: px,
        });
    }

    let gamma = ps_dist
        .iter()
        .map(|(&a, ps)| {
            let top = m_max.get(&a).copied().unwrap_or(0).max(ps.len().saturating_sub(1));
            Ok(GammaTable {
                t_bin: a,
                label: bins.label(DatasetTag::Transport, a),
                n_c: opts.n_c,
                gamma: gamma_table(ps, opts.n_c, top)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_t_bin = Vec::new();
    for &a in ps_dist.keys() {
        let only: BTreeMap<GroupKey, f64> =
            px_map.iter().filter(|(k, _)| k.0 == a).map(|(k, v)| (*k, *v)).collect();
        if let Ok(v) = weighted_average(&only, &wt, &wc, bins, &Exclusion::ALL) {
            per_t_bin.push(TBinAverage {
                t_bin: a,
                label: bins.label(DatasetTag::Transport, a),
                p_x: v,
            });
        }
    }

    let averages = Averages::compute(&px_map, &wt, &wc, bins)?;

    let (fit, fit_source) = match opts.curve {
        CurveChoice::Reference => (CurveFit::reference(), "reference"),
        CurveChoice::Fitted => {
            let points: Vec<(f64, f64)> = groups.iter().map(|g| (g.mbar, g.p_x)).collect();
            (fit_px_curve(&points, &opts.fit)?, "fitted")
        }
    };
    let extrapolation = (1..=opts.weeks)
        .map(|k| extrapolate(&fit, &mbar_map, k, &wt, &wc, bins))
        .collect::<Result<Vec<_>>>()?;

    Ok(MatchabilityReport {
        n_c: opts.n_c,
        gamma,
        groups,
        per_t_bin,
        averages,
        fit,
        fit_source: fit_source.into(),
        extrapolation,
    })
}
