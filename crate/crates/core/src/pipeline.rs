//! Glue between the building blocks: loading both datasets, cached
//! compatibility maps, match-count statistics and their CSV form.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bins::ActivityBins;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::geometry::{build_compatibility, build_voronoi, input_fingerprint, ClipRect, CompatibilityMap, Tessellation};
use crate::ingest::{ingest_pair, DatasetFiles, LoadedPair};
use crate::matchability::{build_report, MatchabilityReport, ReportOptions};
use crate::matcher::{MatchOutcome, MatchParams, Pairing, Thresholds};
use crate::records::{DatasetTag, LocationTable, TimeWindow, Trajectory};
use crate::stats::{estimate_ps, estimate_pt, GroupKey, MatchCountHistogram, Populations, PsEstimate};

pub const COMPAT_WALK_FILE: &str = "compat_walk.csv";
pub const COMPAT_TRANSIT_FILE: &str = "compat_transit.csv";

/// Record and location files of both datasets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DataPaths {
    pub transport: PathBuf,
    pub stops: PathBuf,
    pub comm: PathBuf,
    pub antennas: PathBuf,
}

impl DataPaths {
    /// The file names written by the `synth` and `ingest` commands.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            transport: dir.join("transport.csv"),
            stops: dir.join("stops.csv"),
            comm: dir.join("comm.csv"),
            antennas: dir.join("antennas.csv"),
        }
    }

    pub fn all(&self) -> [&Path; 4] {
        [&self.transport, &self.stops, &self.comm, &self.antennas]
    }

    pub fn load(&self, window: TimeWindow) -> Result<LoadedPair> {
        ingest_pair(
            DatasetFiles {
                records: &self.transport,
                locations: &self.stops,
            },
            DatasetFiles {
                records: &self.comm,
                locations: &self.antennas,
            },
            window,
        )
    }
}

/// Bounding rectangle of stops and antennas, widened by `margin`.
pub fn clip_rect(stops: &LocationTable, antennas: &LocationTable, margin: f64) -> Result<ClipRect> {
    ClipRect::around(stops.points().iter().chain(antennas.points()).copied(), margin).ok_or(Error::NoSites)
}

pub fn tessellate(stops: &LocationTable, antennas: &LocationTable, margin: f64) -> Result<Tessellation> {
    build_voronoi(antennas.points(), clip_rect(stops, antennas, margin)?)
}

pub fn build_params(
    stops: &LocationTable,
    antennas: &LocationTable,
    thresholds: Thresholds,
    margin: f64,
) -> Result<MatchParams> {
    let tess = tessellate(stops, antennas, margin)?;
    MatchParams::build(thresholds, stops, &tess)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheState {
    Fresh,
    Missing,
    Stale,
}

#[derive(Debug, Clone)]
pub struct CachedParams {
    pub params: MatchParams,
    pub walk: CacheState,
    pub transit: CacheState,
}

fn read_cached(
    path: &Path,
    stops: &LocationTable,
    antennas: &LocationTable,
    fingerprint: &str,
) -> (Option<CompatibilityMap>, CacheState) {
    let Ok(f) = File::open(path) else {
        return (None, CacheState::Missing);
    };
    match CompatibilityMap::read_csv(BufReader::new(f), stops, antennas) {
        Ok((map, fp)) if fp == fingerprint => (Some(map), CacheState::Fresh),
        _ => (None, CacheState::Stale),
    }
}

/// Writes through a temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Match parameters whose compatibility maps come from `dir` when the
/// cached files were built from the same locations, margin and radius, and
/// are rebuilt (and rewritten) otherwise.
pub fn params_with_cache(
    stops: &LocationTable,
    antennas: &LocationTable,
    thresholds: Thresholds,
    margin: f64,
    dir: &Path,
) -> Result<CachedParams> {
    thresholds.validate()?;
    let specs = [
        (COMPAT_WALK_FILE, thresholds.d_w),
        (COMPAT_TRANSIT_FILE, thresholds.d_t),
    ];
    let mut maps = Vec::new();
    let mut states = Vec::new();
    let mut tess: Option<Tessellation> = None;
    for (name, radius) in specs {
        let path = dir.join(name);
        let fp = input_fingerprint(stops, antennas, margin, radius);
        let (map, state) = read_cached(&path, stops, antennas, &fp);
        let map = match map {
            Some(m) => m,
            None => {
                if state == CacheState::Stale {
                    log::warn!("{} was built from different inputs; rebuilding it", path.display());
                }
                if tess.is_none() {
                    tess = Some(tessellate(stops, antennas, margin)?);
                }
                let m = build_compatibility(stops.points(), tess.as_ref().expect("built above"), radius);
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                write_atomic(&path, |w| m.write_csv(w, stops, antennas, &fp))?;
                m
            }
        };
        maps.push(map);
        states.push(state);
    }
    let transit = maps.pop().expect("two maps");
    let walk = maps.pop().expect("two maps");
    Ok(CachedParams {
        params: MatchParams::new(thresholds, walk, transit)?,
        walk: states[0],
        transit: states[1],
    })
}

/// P_t per group and P_s from a full matching run.
#[derive(Debug, Clone)]
pub struct StatsOutput {
    pub pt: BTreeMap<GroupKey, MatchCountHistogram>,
    pub ps: PsEstimate,
    pub pops: Populations,
}

/// `outcomes` must come from a run without a `top_k` cut.
pub fn compute_stats(
    transport: &[Trajectory],
    comm: &[Trajectory],
    outcomes: &[MatchOutcome],
    cfg: &Config,
) -> Result<StatsOutput> {
    let pops = Populations::from_trajectories(transport, comm, &cfg.bins);
    let pt = estimate_pt(transport, comm, &cfg.bins, &cfg.thresholds, cfg.sample_pairs, cfg.seed)?;
    let ps = estimate_ps(outcomes, &pops)?;
    Ok(StatsOutput { pt, ps, pops })
}

/// Competing population: the configured override or every phone user.
pub fn competing_population(cfg: &Config, pops: &Populations) -> u64 {
    cfg.n_c.unwrap_or_else(|| pops.c_sizes.iter().sum())
}

pub fn estimate(
    pt: &BTreeMap<GroupKey, MatchCountHistogram>,
    ps_by_t_bin: &BTreeMap<usize, MatchCountHistogram>,
    pops: &Populations,
    cfg: &Config,
) -> Result<MatchabilityReport> {
    let opts = ReportOptions {
        n_c: competing_population(cfg, pops),
        weeks: cfg.weeks,
        fit: cfg.fit_options(),
        curve: cfg.curve,
    };
    build_report(pt, ps_by_t_bin, pops, &cfg.bins, &opts)
}

/// Fraction of ground-truth pairs whose transport user is uniquely paired
/// with the right phone user. Ties count as failures.
pub fn success_rate(pairings: &[Pairing], truth: &[(u32, u32)]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = truth
        .iter()
        .filter(|&&(t, c)| pairings.get(t as usize).and_then(Pairing::unique) == Some(c))
        .count();
    hits as f64 / truth.len() as f64
}

fn labels(bins: &ActivityBins, tag: DatasetTag) -> HashMap<String, usize> {
    (0..bins.n_bins(tag)).map(|b| (bins.label(tag, b), b)).collect()
}

/// Writes `group_t,group_c,m,probability,pair_count`. Histograms without a
/// phone bin are labelled `c_label`.
pub fn write_histograms<'a, W: Write>(
    w: W,
    hists: impl IntoIterator<Item = &'a MatchCountHistogram>,
    bins: &ActivityBins,
    c_label: &str,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["group_t", "group_c", "m", "probability", "pair_count"])?;
    for h in hists {
        let gt = bins.label(DatasetTag::Transport, h.t_bin);
        let gc = h
            .c_bin
            .map_or_else(|| c_label.to_string(), |b| bins.label(DatasetTag::Communication, b));
        for (&m, &n) in h.counts() {
            if n == 0 {
                continue;
            }
            wtr.write_record([
                gt.as_str(),
                gc.as_str(),
                &m.to_string(),
                &h.probability(m).to_string(),
                &n.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("histograms", e))?;
    Ok(())
}

/// Reads histograms written by [`write_histograms`]. Rows whose `group_c`
/// is not a phone bin label become histograms without a phone bin.
pub fn read_histograms<R: Read>(r: R, source_name: &str, bins: &ActivityBins) -> Result<Vec<MatchCountHistogram>> {
    let lt = labels(bins, DatasetTag::Transport);
    let lc = labels(bins, DatasetTag::Communication);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out: BTreeMap<(usize, Option<usize>), MatchCountHistogram> = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i as u64 + 2;
        let err = |msg: String| Error::Parse {
            source_name: source_name.into(),
            line,
            msg,
        };
        if row.len() != 5 {
            return Err(err(format!("expected 5 columns, found {}", row.len())));
        }
        let t = *lt
            .get(&row[0])
            .ok_or_else(|| err(format!("unknown transport group `{}`", &row[0])))?;
        let c = lc.get(&row[1]).copied();
        let m: u32 = row[2].parse().map_err(|_| err(format!("bad m `{}`", &row[2])))?;
        let n: u64 = row[4]
            .parse()
            .map_err(|_| err(format!("bad pair_count `{}`", &row[4])))?;
        out.entry((t, c))
            .or_insert_with(|| MatchCountHistogram::new(t, c))
            .add_n(m, n);
    }
    Ok(out.into_values().collect())
}

/// Writes `dataset,group,users`.
pub fn write_populations<W: Write>(w: W, pops: &Populations, bins: &ActivityBins) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["dataset", "group", "users"])?;
    for (tag, sizes) in [(DatasetTag::Transport, &pops.t_sizes), (DatasetTag::Communication, &pops.c_sizes)] {
        for (b, n) in sizes.iter().enumerate() {
            wtr.write_record([tag.short(), &bins.label(tag, b), &n.to_string()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("populations", e))?;
    Ok(())
}

/// Bin sizes only; per-user memberships are not stored.
pub fn read_populations<R: Read>(r: R, source_name: &str, bins: &ActivityBins) -> Result<Populations> {
    let mut pops = Populations {
        t_bin_of: Vec::new(),
        c_bin_of: Vec::new(),
        t_sizes: vec![0; bins.n_bins(DatasetTag::Transport)],
        c_sizes: vec![0; bins.n_bins(DatasetTag::Communication)],
    };
    let lt = labels(bins, DatasetTag::Transport);
    let lc = labels(bins, DatasetTag::Communication);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let err = |msg: String| Error::Parse {
            source_name: source_name.into(),
            line: i as u64 + 2,
            msg,
        };
        if row.len() != 3 {
            return Err(err("expected 3 columns".into()));
        }
        let tag: DatasetTag = row[0].parse().map_err(|_| err(format!("bad dataset `{}`", &row[0])))?;
        let (map, sizes) = match tag {
            DatasetTag::Transport => (&lt, &mut pops.t_sizes),
            DatasetTag::Communication => (&lc, &mut pops.c_sizes),
        };
        let b = *map.get(&row[1]).ok_or_else(|| err(format!("unknown group `{}`", &row[1])))?;
        sizes[b] = row[2].parse().map_err(|_| err(format!("bad user count `{}`", &row[2])))?;
    }
    Ok(pops)
}

pub fn open_file(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}
