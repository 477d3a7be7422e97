//! Flat `key = value` configuration shared by every pipeline stage.
//!
//! Blank lines and text after `#` are ignored. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::bins::ActivityBins;
use crate::error::{Error, Result};
use crate::matchability::{CurveChoice, FitOptions};
use crate::matcher::Thresholds;
use crate::records::{DatasetTag, TimeWindow};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub thresholds: Thresholds,
    pub window: TimeWindow,
    pub bins: ActivityBins,
    /// Competing phone population; the phone dataset's user count if unset.
    pub n_c: Option<u64>,
    pub clip_margin: f64,
    pub top_k: Option<usize>,
    pub sample_pairs: u64,
    pub seed: u64,
    pub fit_threshold: f64,
    pub curve: CurveChoice,
    pub weeks: u32,
    /// Inclusive `m` range of the power-law fit to `P_s / P_t`.
    pub ratio_m_min: usize,
    pub ratio_m_max: usize,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            window: TimeWindow::unbounded(),
            bins: ActivityBins::default(),
            n_c: None,
            clip_margin: 5000.0,
            top_k: None,
            sample_pairs: 100_000,
            seed: 0,
            fit_threshold: FitOptions::default().linear_threshold,
            curve: CurveChoice::Fitted,
            weeks: 4,
            ratio_m_min: 5,
            ratio_m_max: 1000,
            synth: SynthConfig::default(),
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn optional<T: FromStr>(key: &str, v: &str, none: &str) -> Result<Option<T>> {
    if v.eq_ignore_ascii_case(none) {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn edges(key: &str, v: &str) -> Result<Vec<u32>> {
    v.split(',').map(|e| num(key, e.trim())).collect()
}

fn join(e: &[u32]) -> String {
    e.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
}

fn opt_str<T: ToString>(v: Option<T>, none: &str) -> String {
    v.map_or_else(|| none.to_string(), |x| x.to_string())
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `key=value`, as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())?;
        self.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        match key {
            "d_w" => self.thresholds.d_w = num(key, v)?,
            "tau_w" => self.thresholds.tau_w = num(key, v)?,
            "d_t" => self.thresholds.d_t = num(key, v)?,
            "tau_t" => self.thresholds.tau_t = num(key, v)?,
            "window_start" => {
                self.window.start = optional(key, v, "none")?.unwrap_or(TimeWindow::unbounded().start)
            }
            "window_end" => self.window.end = optional(key, v, "none")?.unwrap_or(TimeWindow::unbounded().end),
            "bins_t" => {
                self.bins = ActivityBins::new(edges(key, v)?, self.bins.edges(DatasetTag::Communication).to_vec())?
            }
            "bins_c" => self.bins = ActivityBins::new(self.bins.edges(DatasetTag::Transport).to_vec(), edges(key, v)?)?,
            "n_c" => self.n_c = optional(key, v, "auto")?,
            "clip_margin" => self.clip_margin = num(key, v)?,
            "top_k" => self.top_k = optional(key, v, "all")?,
            "sample_pairs" => self.sample_pairs = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "fit_threshold" => self.fit_threshold = num(key, v)?,
            "curve" => {
                self.curve = match v {
                    "fitted" => CurveChoice::Fitted,
                    "reference" => CurveChoice::Reference,
                    _ => return Err(Error::Config(format!("`curve` must be `fitted` or `reference`, got `{v}`"))),
                }
            }
            "weeks" => self.weeks = num(key, v)?,
            "ratio_m_min" => self.ratio_m_min = num(key, v)?,
            "ratio_m_max" => self.ratio_m_max = num(key, v)?,
            "synth.n_stops" => s.n_stops = num(key, v)?,
            "synth.n_antennas" => s.n_antennas = num(key, v)?,
            "synth.area" => s.area = num(key, v)?,
            "synth.n_paired" => s.n_paired = num(key, v)?,
            "synth.n_unpaired_t" => s.n_unpaired_t = num(key, v)?,
            "synth.n_unpaired_c" => s.n_unpaired_c = num(key, v)?,
            "synth.trips_per_day" => s.trips_per_day = num(key, v)?,
            "synth.records_per_day_c" => s.records_per_day_c = num(key, v)?,
            "synth.colocate_prob" => s.colocate_prob = num(key, v)?,
            "synth.days" => s.days = num(key, v)?,
            "synth.seed" => s.seed = num(key, v)?,
            "synth.jitter_sigma" => s.jitter_sigma = num(key, v)?,
            "synth.jitter_cap" => s.jitter_cap = num(key, v)?,
            "synth.anchor_offset" => s.anchor_offset = num(key, v)?,
            "synth.activity_spread" => s.activity_spread = num(key, v)?,
            "synth.start_time" => s.start_time = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.window.start >= self.window.end {
            return Err(Error::Config("window_start must precede window_end".into()));
        }
        if self.clip_margin.is_nan() || self.clip_margin < self.thresholds.d_t {
            return Err(Error::Config("clip_margin must be at least d_t".into()));
        }
        if self.sample_pairs == 0 {
            return Err(Error::Config("sample_pairs must be at least 1".into()));
        }
        if self.top_k == Some(0) {
            return Err(Error::Config("top_k must be positive or `all`".into()));
        }
        if self.n_c == Some(0) {
            return Err(Error::Config("n_c must be positive or `auto`".into()));
        }
        if self.ratio_m_min > self.ratio_m_max {
            return Err(Error::Config("ratio_m_min must not exceed ratio_m_max".into()));
        }
        self.synth.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            linear_threshold: self.fit_threshold,
            ..FitOptions::default()
        }
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let th = &self.thresholds;
        let s = &self.synth;
        let unbounded = TimeWindow::unbounded();
        let window_bound = |v: i64, u: i64| if v == u { "none".to_string() } else { v.to_string() };
        vec![
            ("d_w", th.d_w.to_string()),
            ("tau_w", th.tau_w.to_string()),
            ("d_t", th.d_t.to_string()),
            ("tau_t", th.tau_t.to_string()),
            ("window_start", window_bound(self.window.start, unbounded.start)),
            ("window_end", window_bound(self.window.end, unbounded.end)),
            ("bins_t", join(self.bins.edges(DatasetTag::Transport))),
            ("bins_c", join(self.bins.edges(DatasetTag::Communication))),
            ("n_c", opt_str(self.n_c, "auto")),
            ("clip_margin", self.clip_margin.to_string()),
            ("top_k", opt_str(self.top_k, "all")),
            ("sample_pairs", self.sample_pairs.to_string()),
            ("seed", self.seed.to_string()),
            ("fit_threshold", self.fit_threshold.to_string()),
            (
                "curve",
                match self.curve {
                    CurveChoice::Fitted => "fitted",
                    CurveChoice::Reference => "reference",
                }
                .to_string(),
            ),
            ("weeks", self.weeks.to_string()),
            ("ratio_m_min", self.ratio_m_min.to_string()),
            ("ratio_m_max", self.ratio_m_max.to_string()),
            ("synth.n_stops", s.n_stops.to_string()),
            ("synth.n_antennas", s.n_antennas.to_string()),
            ("synth.area", s.area.to_string()),
            ("synth.n_paired", s.n_paired.to_string()),
            ("synth.n_unpaired_t", s.n_unpaired_t.to_string()),
            ("synth.n_unpaired_c", s.n_unpaired_c.to_string()),
            ("synth.trips_per_day", s.trips_per_day.to_string()),
            ("synth.records_per_day_c", s.records_per_day_c.to_string()),
            ("synth.colocate_prob", s.colocate_prob.to_string()),
            ("synth.days", s.days.to_string()),
            ("synth.seed", s.seed.to_string()),
            ("synth.jitter_sigma", s.jitter_sigma.to_string()),
            ("synth.jitter_cap", s.jitter_cap.to_string()),
            ("synth.anchor_offset", s.anchor_offset.to_string()),
            ("synth.activity_spread", s.activity_spread.to_string()),
            ("synth.start_time", s.start_time.to_string()),
        ]
    }

    /// Text form accepted by [`Config::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn snapshot(&self) -> ConfigSnapshot {
        ConfigSnapshot(self.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }
}

/// Ordered key/value view of a [`Config`] for run manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigSnapshot(pub std::collections::BTreeMap<String, String>);
