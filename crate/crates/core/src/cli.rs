//! Command-line front end. Every subcommand reads flat CSV/JSON inputs,
//! writes flat CSV/JSON outputs and records itself in the output
//! directory's `manifest.json`.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::index::SpatioTemporalIndex;
use crate::ingest::{read_locations_file, read_records, write_locations, write_records, IngestReport};
use crate::matchability::{pooled_distribution, ps_pt_ratio, MatchabilityReport};
use crate::matcher::{match_all, MatchOutcome, MatchRun, OutcomeKind};
use crate::pipeline::{
    compute_stats, create_file, estimate, open_file, params_with_cache, read_histograms, read_populations,
    write_atomic, write_histograms, write_populations, CacheState, DataPaths,
};
use crate::projection::{centroid, LocalProjection};
use crate::records::{Dataset, DatasetTag, Trajectory};
use crate::stats::{
    profile, unicity, MatchCountHistogram, Populations, ProfileOptions, Proximity, UnicityQuery, SLOTS_PER_WEEK,
};
use crate::synth::generate;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const THREADS_ENV: &str = "TRACE_MATCHER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "trace-matcher", version, about = "Match transit and phone traces and estimate matchability")]
pub struct Cli {
    /// Worker threads; falls back to TRACE_MATCHER_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, alias = "params", value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set d_w=400`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::from_file(p)?,
            None => Config::default(),
        };
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding transport.csv, stops.csv, comm.csv and antennas.csv.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Transit records CSV.
    #[arg(long)]
    pub transport: Option<PathBuf>,
    /// Stop locations CSV.
    #[arg(long)]
    pub stops: Option<PathBuf>,
    /// Phone records CSV.
    #[arg(long)]
    pub comm: Option<PathBuf>,
    /// Antenna locations CSV.
    #[arg(long)]
    pub antennas: Option<PathBuf>,
}

impl DataArgs {
    pub fn is_empty(&self) -> bool {
        self.data.is_none()
            && self.transport.is_none()
            && self.stops.is_none()
            && self.comm.is_none()
            && self.antennas.is_none()
    }

    pub fn resolve(&self) -> Result<DataPaths> {
        let base = self.data.as_deref().map(DataPaths::in_dir);
        let pick = |explicit: &Option<PathBuf>, from_dir: Option<&PathBuf>, flag: &str| {
            explicit
                .clone()
                .or_else(|| from_dir.cloned())
                .ok_or_else(|| Error::Config(format!("missing --{flag} (or --data)")))
        };
        Ok(DataPaths {
            transport: pick(&self.transport, base.as_ref().map(|b| &b.transport), "transport")?,
            stops: pick(&self.stops, base.as_ref().map(|b| &b.stops), "stops")?,
            comm: pick(&self.comm, base.as_ref().map(|b| &b.comm), "comm")?,
            antennas: pick(&self.antennas, base.as_ref().map(|b| &b.antennas), "antennas")?,
        })
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate both datasets and write canonical copies plus an ingest report.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic city with ground truth (keys `synth.*`).
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build and cache the compatibility maps for both radii.
    Precompute {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match every transit user against the phone users.
    Match {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Keep only the outcomes reaching each user's k-th best count.
        #[arg(long)]
        top_k: Option<usize>,
        /// Compatibility map cache directory (default: next to --out).
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Output CSV `t_user,c_user,m,alibi_flag,tie_flag`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the temporal and spatial match-count histograms.
    Stats {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output of `match` run without --top-k; matched afresh if absent.
        #[arg(long)]
        matches: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fraction of users singled out by p random records of their own.
    Unicity {
        /// `transport` or `comm`.
        #[arg(long)]
        dataset: DatasetTag,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        locations: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        p: Vec<usize>,
        /// Distance thresholds in metres.
        #[arg(long, value_delimiter = ',', default_value = "500")]
        d: Vec<f64>,
        /// Time thresholds in seconds.
        #[arg(long, value_delimiter = ',', default_value = "300")]
        tau: Vec<i64>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Output CSV `p,d,tau,unicity,stderr,n_trials`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Success probabilities, fitted curve and extrapolation from `stats` output.
    Estimate {
        #[arg(long, value_name = "DIR")]
        stats: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot-ready CSVs from `stats` and `estimate` output (and, optionally, the data).
    Report {
        #[arg(long, value_name = "DIR")]
        stats: PathBuf,
        #[arg(long, value_name = "DIR")]
        estimate: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

/// One pipeline stage as recorded in a manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config: BTreeMap<String, String>,
    /// Input path to the SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
}

/// The single manifest of an output directory; each stage writing into the
/// directory adds or replaces its own entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn record(dir: &Path, stage: &str, rec: StageRecord) -> Result<()> {
        let mut m = Self::load(dir).unwrap_or_default();
        m.tool = env!("CARGO_PKG_NAME").into();
        m.version = env!("CARGO_PKG_VERSION").into();
        m.stages.insert(stage.into(), rec);
        let path = dir.join(MANIFEST_FILE);
        write_atomic(&path, |w| {
            serde_json::to_writer_pretty(&mut *w, &m)?;
            writeln!(w)
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = open_file(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

struct Stage {
    name: &'static str,
    dir: PathBuf,
    started: Instant,
    rec: StageRecord,
}

impl Stage {
    fn begin(name: &'static str, dir: &Path, cfg: &Config, inputs: &[&Path]) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut rec = StageRecord {
            config: cfg.snapshot().0,
            ..StageRecord::default()
        };
        for p in inputs {
            rec.inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        log::info!("{name}: start");
        Ok(Self {
            name,
            dir: dir.to_path_buf(),
            started: Instant::now(),
            rec,
        })
    }

    fn path(&mut self, file: &str) -> PathBuf {
        self.rec.outputs.push(file.into());
        self.dir.join(file)
    }

    fn finish(mut self) -> Result<()> {
        self.rec.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        log::info!("{}: done in {:.2}s", self.name, self.rec.wall_clock_seconds);
        RunManifest::record(&self.dir, self.name, self.rec)
    }
}

fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn cache_notice(state: CacheState, what: &str) {
    if state == CacheState::Stale {
        eprintln!("notice: cached {what} compatibility map was stale and has been regenerated");
    }
}

fn write_csv_rows<W: Write>(w: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header)?;
    for r in rows {
        wtr.write_record(&r)?;
    }
    wtr.flush().map_err(|e| Error::io("csv", e))?;
    Ok(())
}

/// Writes `t_user,c_user,m,alibi_flag,tie_flag`.
pub fn write_matches<W: Write>(w: W, run: &MatchRun, transport: &[Trajectory], comm: &[Trajectory]) -> Result<()> {
    let rows = run.outcomes.iter().map(|o| {
        let p = &run.pairings[o.t_user as usize];
        let tie = p.tie && !o.is_alibi() && o.m == p.best_m && p.best.binary_search(&o.c_user).is_ok();
        vec![
            transport[o.t_user as usize].user_id.clone(),
            comm[o.c_user as usize].user_id.clone(),
            o.m.to_string(),
            u8::from(o.is_alibi()).to_string(),
            u8::from(tie).to_string(),
        ]
    });
    write_csv_rows(w, &["t_user", "c_user", "m", "alibi_flag", "tie_flag"], rows)
}

/// Reads a file written by [`write_matches`] back into outcomes.
pub fn read_matches<R: Read>(
    r: R,
    source_name: &str,
    transport: &Dataset,
    comm: &Dataset,
) -> Result<Vec<MatchOutcome>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let err = |msg: String| Error::Parse {
            source_name: source_name.into(),
            line: i as u64 + 2,
            msg,
        };
        if row.len() != 5 {
            return Err(err("expected 5 columns".into()));
        }
        let t = transport
            .user_ordinal(&row[0])
            .ok_or_else(|| err(format!("unknown transport user `{}`", &row[0])))?;
        let c = comm
            .user_ordinal(&row[1])
            .ok_or_else(|| err(format!("unknown phone user `{}`", &row[1])))?;
        let m: u32 = row[2].parse().map_err(|_| err(format!("bad m `{}`", &row[2])))?;
        let kind = match &row[3] {
            "0" => OutcomeKind::Counted,
            "1" => OutcomeKind::Alibi,
            other => return Err(err(format!("bad alibi_flag `{other}`"))),
        };
        out.push(MatchOutcome {
            t_user: t as u32,
            c_user: c as u32,
            kind,
            m,
        });
    }
    out.sort();
    Ok(out)
}

fn cmd_ingest(data: &DataArgs, cfg: &Config, out: &Path) -> Result<()> {
    let paths = data.resolve()?;
    let mut stage = Stage::begin("ingest", out, cfg, &paths.all())?;
    let pair = paths.load(cfg.window)?;
    write_records(&pair.transport, create_file(&stage.path("transport.csv"))?)?;
    write_locations(&pair.transport.locations, &pair.projection, create_file(&stage.path("stops.csv"))?)?;
    write_records(&pair.comm, create_file(&stage.path("comm.csv"))?)?;
    write_locations(&pair.comm.locations, &pair.projection, create_file(&stage.path("antennas.csv"))?)?;
    #[derive(Serialize)]
    struct Report {
        transport: IngestReport,
        comm: IngestReport,
    }
    let rep = Report {
        transport: pair.transport_report,
        comm: pair.comm_report,
    };
    let mut w = create_file(&stage.path("ingest_report.json"))?;
    serde_json::to_writer_pretty(&mut w, &rep)?;
    writeln!(w).map_err(|e| Error::io(out, e))?;
    stage.finish()
}

fn cmd_synth(cfg: &Config, out: &Path) -> Result<()> {
    let mut stage = Stage::begin("synth", out, cfg, &[])?;
    let city = generate(&cfg.synth)?;
    write_records(&city.transport, create_file(&stage.path("transport.csv"))?)?;
    write_locations(city.stops(), &city.projection, create_file(&stage.path("stops.csv"))?)?;
    write_records(&city.comm, create_file(&stage.path("comm.csv"))?)?;
    write_locations(city.antennas(), &city.projection, create_file(&stage.path("antennas.csv"))?)?;
    let rows = city.ground_truth.iter().map(|(t, c)| vec![t.clone(), c.clone()]);
    write_csv_rows(create_file(&stage.path("ground_truth.csv"))?, &["t_user", "c_user"], rows)?;
    stage.finish()
}

fn cmd_precompute(data: &DataArgs, cfg: &Config, out: &Path) -> Result<()> {
    let paths = data.resolve()?;
    let mut stage = Stage::begin("precompute", out, cfg, &[&paths.stops, &paths.antennas])?;
    let pair = paths.load(cfg.window)?;
    let cached = params_with_cache(
        &pair.transport.locations,
        &pair.comm.locations,
        cfg.thresholds,
        cfg.clip_margin,
        out,
    )?;
    cache_notice(cached.walk, "walking");
    cache_notice(cached.transit, "transit");
    stage.path(crate::pipeline::COMPAT_WALK_FILE);
    stage.path(crate::pipeline::COMPAT_TRANSIT_FILE);
    stage.finish()
}

fn load_matching(
    data: &DataArgs,
    cfg: &Config,
    cache: &Path,
) -> Result<(crate::ingest::LoadedPair, crate::matcher::MatchParams, DataPaths)> {
    let paths = data.resolve()?;
    let pair = paths.load(cfg.window)?;
    let cached = params_with_cache(
        &pair.transport.locations,
        &pair.comm.locations,
        cfg.thresholds,
        cfg.clip_margin,
        cache,
    )?;
    cache_notice(cached.walk, "walking");
    cache_notice(cached.transit, "transit");
    Ok((pair, cached.params, paths))
}

fn run_matching(pair: &crate::ingest::LoadedPair, params: &crate::matcher::MatchParams, top_k: Option<usize>) -> MatchRun {
    let idx = SpatioTemporalIndex::build(&pair.comm.trajectories, pair.comm.locations.len());
    let run = match_all(&pair.transport.trajectories, &pair.comm.trajectories, &idx, params, top_k);
    log::info!(
        "match: {} outcomes, {} index hits, {} comparisons",
        run.outcomes.len(),
        run.work.index_hits,
        run.work.compare_calls
    );
    run
}

fn cmd_match(data: &DataArgs, cfg: &Config, cache: Option<&Path>, out: &Path) -> Result<()> {
    let dir = parent_dir(out);
    let paths = data.resolve()?;
    let mut stage = Stage::begin("match", &dir, cfg, &paths.all())?;
    let cache = cache.map_or_else(|| dir.clone(), Path::to_path_buf);
    let (pair, params, _) = load_matching(data, cfg, &cache)?;
    let run = run_matching(&pair, &params, cfg.top_k);
    let name = out.file_name().map_or_else(|| "matches.csv".into(), |n| n.to_string_lossy().into_owned());
    write_matches(
        create_file(&stage.path(&name))?,
        &run,
        &pair.transport.trajectories,
        &pair.comm.trajectories,
    )?;
    stage.finish()
}

fn cmd_stats(data: &DataArgs, cfg: &Config, matches: Option<&Path>, cache: Option<&Path>, out: &Path) -> Result<()> {
    let paths = data.resolve()?;
    let mut inputs: Vec<&Path> = paths.all().to_vec();
    if let Some(m) = matches {
        inputs.push(m);
    }
    let mut stage = Stage::begin("stats", out, cfg, &inputs)?;
    let (pair, outcomes) = match matches {
        Some(m) => {
            if let Ok(man) = RunManifest::load(&parent_dir(m)) {
                let cut = man.stages.get("match").and_then(|s| s.config.get("top_k")).cloned();
                if cut.as_deref().is_some_and(|k| k != "all") {
                    log::warn!("{} was produced with a top_k cut; P_s will be biased", m.display());
                }
            }
            let pair = paths.load(cfg.window)?;
            let outcomes = read_matches(open_file(m)?, &m.display().to_string(), &pair.transport, &pair.comm)?;
            (pair, outcomes)
        }
        None => {
            let cache = cache.map_or_else(|| out.to_path_buf(), Path::to_path_buf);
            let (pair, params, _) = load_matching(data, cfg, &cache)?;
            let run = run_matching(&pair, &params, None);
            (pair, run.outcomes)
        }
    };
    let st = compute_stats(&pair.transport.trajectories, &pair.comm.trajectories, &outcomes, cfg)?;
    write_histograms(create_file(&stage.path("pt.csv"))?, st.pt.values(), &cfg.bins, "any")?;
    write_histograms(create_file(&stage.path("ps.csv"))?, st.ps.by_group.values(), &cfg.bins, "any")?;
    write_histograms(create_file(&stage.path("ps_any.csv"))?, st.ps.by_t_bin.values(), &cfg.bins, "any")?;
    write_histograms(
        create_file(&stage.path("ps_best.csv"))?,
        st.ps.best.per_t_bin.values(),
        &cfg.bins,
        "best",
    )?;
    write_populations(create_file(&stage.path("populations.csv"))?, &st.pops, &cfg.bins)?;
    stage.finish()
}

#[allow(clippy::too_many_arguments)]
fn cmd_unicity(
    tag: DatasetTag,
    records: &Path,
    locations: &Path,
    cfg: &Config,
    ps: &[usize],
    ds: &[f64],
    taus: &[i64],
    trials: usize,
    out: &Path,
) -> Result<()> {
    let dir = parent_dir(out);
    let mut stage = Stage::begin("unicity", &dir, cfg, &[records, locations])?;
    let raw = read_locations_file(locations)?;
    let origin = centroid(raw.iter().map(|(_, g)| g)).ok_or(Error::NoSites)?;
    let proj = LocalProjection::new(origin)?;
    let table = crate::ingest::project_locations(&raw, tag, &proj)?;
    let (trajs, _) = read_records(open_file(records)?, &records.display().to_string(), tag, &table, cfg.window)?;
    let idx = SpatioTemporalIndex::build(&trajs, table.len());
    let tess = match tag {
        DatasetTag::Communication => Some(crate::pipeline::tessellate(&table, &table, cfg.clip_margin)?),
        DatasetTag::Transport => None,
    };
    let mut rows = Vec::new();
    for &d in ds {
        let prox = match &tess {
            Some(t) => Proximity::voronoi(table.points(), t, d),
            None => Proximity::within_distance(table.points(), d),
        };
        for &tau in taus {
            for &p in ps {
                let q = UnicityQuery {
                    p,
                    tau,
                    n_trials: trials,
                    seed: cfg.seed,
                };
                let e = unicity(&trajs, &idx, &prox, &q, None)?;
                rows.push(vec![
                    e.p.to_string(),
                    e.d.to_string(),
                    e.tau.to_string(),
                    e.unicity.to_string(),
                    e.stderr.to_string(),
                    e.n_trials.to_string(),
                ]);
            }
        }
    }
    let name = out.file_name().map_or_else(|| "unicity.csv".into(), |n| n.to_string_lossy().into_owned());
    write_csv_rows(
        create_file(&stage.path(&name))?,
        &["p", "d", "tau", "unicity", "stderr", "n_trials"],
        rows,
    )?;
    stage.finish()
}

struct StatsFiles {
    pt: BTreeMap<(usize, usize), MatchCountHistogram>,
    ps: Vec<MatchCountHistogram>,
    ps_any: BTreeMap<usize, MatchCountHistogram>,
    ps_best: Vec<MatchCountHistogram>,
    pops: Populations,
}

fn stats_inputs(dir: &Path) -> Vec<PathBuf> {
    ["pt.csv", "ps.csv", "ps_any.csv", "ps_best.csv", "populations.csv"]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

fn read_stats(dir: &Path, cfg: &Config) -> Result<StatsFiles> {
    let read = |name: &str| {
        let p = dir.join(name);
        read_histograms(open_file(&p)?, &p.display().to_string(), &cfg.bins)
    };
    let pt = read("pt.csv")?
        .into_iter()
        .filter_map(|h| h.c_bin.map(|c| ((h.t_bin, c), h)))
        .collect();
    let ps_any = read("ps_any.csv")?.into_iter().map(|h| (h.t_bin, h)).collect();
    let pop_path = dir.join("populations.csv");
    Ok(StatsFiles {
        pt,
        ps: read("ps.csv")?,
        ps_any,
        ps_best: read("ps_best.csv")?,
        pops: read_populations(open_file(&pop_path)?, &pop_path.display().to_string(), &cfg.bins)?,
    })
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn cmd_estimate(stats: &Path, cfg: &Config, out: &Path) -> Result<()> {
    let inputs = stats_inputs(stats);
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let mut stage = Stage::begin("estimate", out, cfg, &refs)?;
    let s = read_stats(stats, cfg)?;
    let rep = estimate(&s.pt, &s.ps_any, &s.pops, cfg)?;
    let mut w = create_file(&stage.path("matchability.json"))?;
    serde_json::to_writer_pretty(&mut w, &rep)?;
    writeln!(w).map_err(|e| Error::io(out, e))?;
    drop(w);
    write_weeks(create_file(&stage.path("success_by_weeks.csv"))?, &rep)?;
    stage.finish()
}

fn write_weeks<W: Write>(w: W, rep: &MatchabilityReport) -> Result<()> {
    let rows = rep.extrapolation.iter().map(|r| {
        let a = &r.averages;
        vec![
            r.weeks.to_string(),
            opt_num(a.all),
            opt_num(a.active),
            opt_num(a.t30_49),
            opt_num(a.t30_49_active),
        ]
    });
    write_csv_rows(w, &["weeks", "avg_all", "avg_active", "avg_t30_49", "avg_t30_49_active"], rows)
}

fn cmd_report(stats: &Path, estimate_dir: &Path, data: &DataArgs, cfg: &Config, out: &Path) -> Result<()> {
    let mut inputs = stats_inputs(stats);
    inputs.push(estimate_dir.join("matchability.json"));
    let paths = if data.is_empty() { None } else { Some(data.resolve()?) };
    if let Some(p) = &paths {
        inputs.extend(p.all().iter().map(|x| x.to_path_buf()));
    }
    let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let mut stage = Stage::begin("report", out, cfg, &refs)?;

    let s = read_stats(stats, cfg)?;
    let rep_path = estimate_dir.join("matchability.json");
    let text = std::fs::read_to_string(&rep_path).map_err(|e| Error::io(&rep_path, e))?;
    let rep: MatchabilityReport = serde_json::from_str(&text)?;
    let bins = &cfg.bins;
    let lt = |b: usize| bins.label(DatasetTag::Transport, b);
    let lc = |b: usize| bins.label(DatasetTag::Communication, b);

    write_weeks(create_file(&stage.path("success_by_weeks.csv"))?, &rep)?;

    let rows = rep.groups.iter().map(|g| {
        vec![
            g.t_label.clone(),
            g.c_label.clone(),
            g.mbar.to_string(),
            g.p_x.to_string(),
            rep.fit.eval(g.mbar).to_string(),
        ]
    });
    write_csv_rows(
        create_file(&stage.path("success_by_group.csv"))?,
        &["group_t", "group_c", "mbar", "p_x", "curve"],
        rows,
    )?;

    let max_mbar = rep.groups.iter().map(|g| g.mbar).fold(1.0, f64::max) * cfg.weeks.max(1) as f64;
    let rows = (1..=200).map(|i| {
        let m = max_mbar * i as f64 / 200.0;
        vec![m.to_string(), rep.fit.eval(m).to_string()]
    });
    write_csv_rows(create_file(&stage.path("success_curve.csv"))?, &["mbar", "p_x"], rows)?;

    // Temporal and spatial distributions side by side, per group.
    let ps_by_group: HashMap<(usize, usize), &MatchCountHistogram> =
        s.ps.iter().filter_map(|h| h.c_bin.map(|c| ((h.t_bin, c), h))).collect();
    let mut rows = Vec::new();
    for (&(a, b), pt) in &s.pt {
        let ps = ps_by_group.get(&(a, b));
        let top = pt.max_m().unwrap_or(0).max(ps.and_then(|h| h.max_m()).unwrap_or(0));
        for m in 0..=top {
            rows.push(vec![
                lt(a),
                lc(b),
                m.to_string(),
                pt.probability(m).to_string(),
                ps.map_or(0.0, |h| h.probability(m)).to_string(),
            ]);
        }
    }
    write_csv_rows(
        create_file(&stage.path("match_distributions.csv"))?,
        &["group_t", "group_c", "m", "p_t", "p_s"],
        rows,
    )?;

    let wc = Populations::marginals(&s.pops.c_sizes);
    let wt = Populations::marginals(&s.pops.t_sizes);
    let mut rows = Vec::new();
    for g in &rep.gamma {
        let pt_any = pooled_distribution(
            s.pt.iter().filter(|(k, _)| k.0 == g.t_bin).map(|(k, h)| (*k, h)),
            |(_, b)| wc.get(b).copied().unwrap_or(0.0),
        )
        .ok();
        let ps_any = s.ps_any.get(&g.t_bin);
        for (m, gamma) in g.gamma.iter().enumerate() {
            rows.push(vec![
                g.label.clone(),
                m.to_string(),
                pt_any.as_ref().map_or(0.0, |d| d.get(m)).to_string(),
                ps_any.map_or(0.0, |h| h.probability(m as u32)).to_string(),
                gamma.to_string(),
            ]);
        }
    }
    write_csv_rows(
        create_file(&stage.path("gamma.csv"))?,
        &["group_t", "m", "p_t_any", "p_s_any", "gamma"],
        rows,
    )?;

    let pooled_ps = crate::stats::pool(s.ps.iter(), 0, None);
    let rows = pooled_ps
        .counts()
        .keys()
        .map(|&m| vec![m.to_string(), pooled_ps.probability(m).to_string()]);
    write_csv_rows(
        create_file(&stage.path("spatial_matches_any_pair.csv"))?,
        &["m", "probability"],
        rows,
    )?;

    let mut rows = Vec::new();
    for h in &s.ps_best {
        for &m in h.counts().keys() {
            rows.push(vec![lt(h.t_bin), m.to_string(), h.probability(m).to_string()]);
        }
    }
    write_csv_rows(
        create_file(&stage.path("best_match_by_group.csv"))?,
        &["group_t", "m", "probability"],
        rows,
    )?;

    let weight = |(a, b): (usize, usize)| {
        wt.get(a).copied().unwrap_or(0.0) * wc.get(b).copied().unwrap_or(0.0)
    };
    let pt_all = pooled_distribution(s.pt.iter().map(|(k, h)| (*k, h)), weight);
    let ps_all = pooled_distribution(
        s.ps.iter().filter_map(|h| h.c_bin.map(|c| ((h.t_bin, c), h))),
        weight,
    );
    let mut rows = Vec::new();
    if let (Ok(pt), Ok(ps)) = (pt_all, ps_all) {
        if let Ok(series) = ps_pt_ratio(&pt, &ps, (cfg.ratio_m_min, cfg.ratio_m_max)) {
            for (m, r) in series.points {
                let fit = series
                    .fit
                    .filter(|_| m > 0)
                    .map(|f| f.coefficient * (m as f64).powf(f.exponent));
                rows.push(vec![m.to_string(), r.to_string(), opt_num(fit)]);
            }
        }
    }
    write_csv_rows(create_file(&stage.path("ps_pt_ratio.csv"))?, &["m", "ratio", "fit"], rows)?;

    if let Some(paths) = paths {
        let pair = paths.load(cfg.window)?;
        // Monday 1969-12-29 00:00 UTC, so slot 0 is Monday midnight.
        let week_origin = -3 * 86_400;
        for (ds, suffix) in [(&pair.transport, "transport"), (&pair.comm, "comm")] {
            let prof = profile(ds, bins, &ProfileOptions::for_dataset(ds.tag, week_origin));
            let rows = prof
                .records_per_user
                .iter()
                .map(|(lo, n)| vec![lo.to_string(), n.to_string()]);
            write_csv_rows(
                create_file(&stage.path(&format!("records_per_user_{suffix}.csv")))?,
                &["records_lower", "users"],
                rows,
            )?;
            let mut rows = Vec::with_capacity(prof.time_of_week.len() * SLOTS_PER_WEEK);
            for c in &prof.time_of_week {
                let total: u64 = c.counts.iter().sum();
                for (slot, &n) in c.counts.iter().enumerate() {
                    let frac = if total == 0 { 0.0 } else { n as f64 / total as f64 };
                    rows.push(vec![c.label.clone(), slot.to_string(), n.to_string(), frac.to_string()]);
                }
            }
            write_csv_rows(
                create_file(&stage.path(&format!("time_of_week_{suffix}.csv")))?,
                &["group", "slot", "records", "fraction"],
                rows,
            )?;
            if let Some(sp) = prof.speeds {
                let rows = sp.histogram.iter().map(|(lo, n)| {
                    let frac = if sp.trips == 0 { 0.0 } else { *n as f64 / sp.trips as f64 };
                    vec![lo.to_string(), n.to_string(), frac.to_string()]
                });
                write_csv_rows(
                    create_file(&stage.path("trip_speeds.csv"))?,
                    &["speed_kmh_lower", "trips", "fraction"],
                    rows,
                )?;
                let rows = [
                    vec!["trips".to_string(), sp.trips.to_string()],
                    vec!["orphan_starts".into(), sp.orphan_starts.to_string()],
                    vec!["orphan_ends".into(), sp.orphan_ends.to_string()],
                    vec!["zero_duration".into(), sp.zero_duration.to_string()],
                ];
                write_csv_rows(
                    create_file(&stage.path("trip_speed_diagnostics.csv"))?,
                    &["counter", "value"],
                    rows,
                )?;
            }
        }
    }
    stage.finish()
}

/// Executes an already parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { data, cfg, out } => cmd_ingest(data, &cfg.load()?, out),
        Command::Synth { cfg, out } => cmd_synth(&cfg.load()?, out),
        Command::Precompute { data, cfg, out } => cmd_precompute(data, &cfg.load()?, out),
        Command::Match {
            data,
            cfg,
            top_k,
            cache,
            out,
        } => {
            let mut c = cfg.load()?;
            if let Some(k) = top_k {
                c.apply_override(&format!("top_k={k}"))?;
            }
            cmd_match(data, &c, cache.as_deref(), out)
        }
        Command::Stats {
            data,
            cfg,
            matches,
            cache,
            out,
        } => cmd_stats(data, &cfg.load()?, matches.as_deref(), cache.as_deref(), out),
        Command::Unicity {
            dataset,
            records,
            locations,
            cfg,
            p,
            d,
            tau,
            trials,
            out,
        } => cmd_unicity(*dataset, records, locations, &cfg.load()?, p, d, tau, *trials, out),
        Command::Estimate { stats, cfg, out } => cmd_estimate(stats, &cfg.load()?, out),
        Command::Report {
            stats,
            estimate,
            data,
            cfg,
            out,
        } => cmd_report(stats, estimate, data, &cfg.load()?, out),
    }
}

fn thread_count(flag: Option<usize>) -> Option<usize> {
    flag.or_else(|| std::env::var(THREADS_ENV).ok()?.trim().parse().ok())
        .filter(|&n| n > 0)
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 1 on usage errors, 2 on data errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli.threads) {
        pool = pool.num_threads(n);
    }
    let result = match pool.build() {
        Ok(p) => p.install(|| execute(&cli)),
        Err(e) => Err(Error::Config(format!("cannot start worker threads: {e}"))),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                2
            } else {
                1
            }
        }
    }
}
