use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trace_matcher::cli::RunManifest;

const BIN: &str = env!("CARGO_BIN_EXE_trace-matcher");

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("TRACE_MATCHER_THREADS").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");

    let unknown = run(&["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    assert_eq!(run(&["match", "--help"]).status.code(), Some(0));

    assert_eq!(run(&["synth", "--set", "d_w=abc", "--out", s(&out)]).status.code(), Some(1));
    assert_eq!(run(&["synth", "--set", "d_w=3000", "--out", s(&out)]).status.code(), Some(1));
    assert_eq!(run(&["precompute", "--out", s(&out)]).status.code(), Some(1));

    let missing = dir.path().join("nowhere");
    assert_eq!(run(&["precompute", "--data", s(&missing), "--out", s(&out)]).status.code(), Some(2));

    let bad = dir.path().join("bad");
    fs::create_dir_all(&bad).unwrap();
    for f in ["stops.csv", "antennas.csv"] {
        fs::write(bad.join(f), "location_id,lon,lat\na,103.8,1.35\n").unwrap();
    }
    fs::write(bad.join("transport.csv"), "user_id,timestamp,location_id,trip_flag\nu,100,zzz,S\n").unwrap();
    fs::write(bad.join("comm.csv"), "user_id,timestamp,location_id,trip_flag\nv,100,a,\n").unwrap();
    let r = run(&["ingest", "--data", s(&bad), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("zzz"));
}

fn file_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    v.sort();
    v
}

fn compare_with_golden(produced: &Path, golden: &Path) {
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden).unwrap();
        for name in file_names(produced) {
            fs::copy(produced.join(&name), golden.join(&name)).unwrap();
        }
        return;
    }
    assert_eq!(file_names(produced), file_names(golden), "{}", golden.display());
    for name in file_names(golden) {
        let a = fs::read(produced.join(&name)).unwrap();
        let b = fs::read(golden.join(&name)).unwrap();
        assert!(a == b, "{name} differs from its golden copy (rerun with UPDATE_GOLDEN=1 after checking)");
    }
}

#[test]
fn tiny_fixture_matches_golden_files() {
    let conf = fixtures().join("tiny.conf");
    let data = fixtures().join("tiny");
    let golden = fixtures().join("golden");
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path();

    // The bundled data is exactly what `synth` produces for the config.
    let regenerated = work.join("data");
    ok(&["synth", "--config", s(&conf), "--out", s(&regenerated)]);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(&data).unwrap();
        for name in file_names(&regenerated) {
            fs::copy(regenerated.join(&name), data.join(&name)).unwrap();
        }
    }
    compare_with_golden(&regenerated, &data);

    let stats = work.join("stats");
    let est = work.join("estimate");
    let report = work.join("report");
    ok(&["stats", "--config", s(&conf), "--data", s(&data), "--out", s(&stats)]);
    ok(&["estimate", "--config", s(&conf), "--stats", s(&stats), "--out", s(&est)]);
    ok(&[
        "report", "--config", s(&conf), "--stats", s(&stats), "--estimate", s(&est), "--data", s(&data), "--out",
        s(&report),
    ]);
    compare_with_golden(&stats, &golden.join("stats"));
    compare_with_golden(&est, &golden.join("estimate"));
    compare_with_golden(&report, &golden.join("report"));

    // Deleting an intermediate and re-running its stage reproduces it.
    let pt = fs::read(stats.join("pt.csv")).unwrap();
    fs::remove_file(stats.join("pt.csv")).unwrap();
    ok(&["--threads", "2", "stats", "--config", s(&conf), "--data", s(&data), "--out", s(&stats)]);
    assert_eq!(fs::read(stats.join("pt.csv")).unwrap(), pt);

    let manifest = RunManifest::load(&report).unwrap();
    let stage = &manifest.stages["report"];
    assert_eq!(stage.config["weeks"], "3");
    assert!(stage.inputs.values().all(|h| h.len() == 64));
    assert!(stage.outputs.iter().any(|o| o == "success_by_weeks.csv"));
}

#[test]
fn stale_compatibility_cache_is_rebuilt_with_a_notice() {
    let conf = fixtures().join("tiny.conf");
    let data = fixtures().join("tiny");
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    ok(&["precompute", "--config", s(&conf), "--data", s(&data), "--out", s(&cache)]);
    let walk = fs::read(cache.join("compat_walk.csv")).unwrap();

    let again = ok(&["precompute", "--config", s(&conf), "--data", s(&data), "--out", s(&cache)]);
    assert!(!String::from_utf8_lossy(&again.stderr).contains("stale"));

    let out = ok(&[
        "precompute", "--config", s(&conf), "--set", "d_w=400", "--data", s(&data), "--out", s(&cache),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("stale"));
    assert_ne!(fs::read(cache.join("compat_walk.csv")).unwrap(), walk);
}

#[test]
fn match_and_unicity_outputs_have_the_documented_columns() {
    let conf = fixtures().join("tiny.conf");
    let data = fixtures().join("tiny");
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m/matches.csv");
    ok(&["match", "--config", s(&conf), "--data", s(&data), "--top-k", "1", "--out", s(&m)]);
    let text = fs::read_to_string(&m).unwrap();
    assert!(text.starts_with("t_user,c_user,m,alibi_flag,tie_flag\n"));
    assert!(text.lines().count() > 1);

    // Matches cut by --top-k still load, with a warning.
    let st = ok(&[
        "stats", "--config", s(&conf), "--data", s(&data), "--matches", s(&m), "--out", s(&tmp.path().join("st")),
    ]);
    assert!(String::from_utf8_lossy(&st.stderr).contains("top_k"));

    let u = tmp.path().join("u/unicity.csv");
    ok(&[
        "unicity", "--dataset", "comm", "--records", s(&data.join("comm.csv")), "--locations",
        s(&data.join("antennas.csv")), "--p", "1,2", "--trials", "50", "--out", s(&u),
    ]);
    let text = fs::read_to_string(&u).unwrap();
    assert!(text.starts_with("p,d,tau,unicity,stderr,n_trials\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn full_pipeline_on_ten_thousand_users_records_every_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    ok(&["synth", "--set", "synth.n_paired=10000", "--set", "synth.days=7", "--out", s(&data)]);
    let conf = ["--set", "sample_pairs=20000"];
    let with = |extra: &[&str]| {
        let mut v: Vec<String> = extra.iter().map(|x| x.to_string()).collect();
        v.extend(conf.iter().map(|x| x.to_string()));
        v
    };
    let go = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs);
    };
    let ingest = s(&run_dir).to_string();
    go(with(&["ingest", "--data", s(&data), "--out", &ingest]));
    go(with(&["precompute", "--data", &ingest, "--out", &ingest]));
    let matches = run_dir.join("matches.csv");
    go(with(&["match", "--data", &ingest, "--out", s(&matches)]));
    go(with(&["stats", "--data", &ingest, "--matches", s(&matches), "--out", &ingest]));
    go(with(&["estimate", "--stats", &ingest, "--out", &ingest]));

    let manifest = RunManifest::load(&run_dir).unwrap();
    let stages: Vec<&str> = manifest.stages.keys().map(String::as_str).collect();
    assert_eq!(stages, ["estimate", "ingest", "match", "precompute", "stats"]);
    let weeks = fs::read_to_string(run_dir.join("success_by_weeks.csv")).unwrap();
    assert_eq!(weeks.lines().count(), 5);
}
