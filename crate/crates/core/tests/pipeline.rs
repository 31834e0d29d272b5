use std::fs;
use std::path::Path;

use macrotok::io_config::{CorpusFormat, RunConfig};
use macrotok::pipeline::{
    forecast, report, simulate, tokenize, train_all, sha256_file, write_toy_inputs, Layout, Manifest, RunContext,
};
use macrotok::trainer::load_checkpoint;
use macrotok::ErrorKind;

fn config(dir: &Path, vars: &[&str]) -> RunConfig {
    let names: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
    let (real, draws) = write_toy_inputs(&dir.join("data"), &names, 4, 5).unwrap();
    RunConfig {
        n_vars: names.len(),
        embed_dim: 8 * names.len(),
        variables: names,
        real_data: real,
        posterior_draws: draws,
        output_dir: dir.join("out"),
        n_trajectories: 10,
        traj_len: 60,
        burn_in: 20,
        batch_size: 16,
        max_steps: 20,
        eval_interval: 10,
        seed: 4,
        ..RunConfig::default()
    }
}

fn ctx(cfg: &RunConfig) -> RunContext {
    RunContext::new(cfg.clone(), Vec::new())
}

#[test]
fn two_variable_run_yields_two_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["gdp", "rate"]);
    let c = ctx(&cfg);
    simulate(&c).unwrap();
    tokenize(&c).unwrap();
    let trained = train_all(&c).unwrap();
    assert_eq!(trained.failures().count(), 0);
    let layout = Layout::new(&cfg.output_dir);
    let ckpts: Vec<_> = fs::read_dir(layout.checkpoints_dir())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ckpt"))
        .collect();
    assert_eq!(ckpts.len(), 2);
    for (k, var) in cfg.variables.iter().enumerate() {
        let ck = load_checkpoint(&layout.checkpoint(var)).unwrap();
        assert_eq!(&ck.target_name, var);
        assert_eq!(ck.params.config().target_var, k);
        assert_eq!(ck.params.config().n_vars, 2);
        assert_eq!(ck.lineage_value("base_seed"), Some("4"));
        let sha = sha256_file(&layout.tokenize_manifest()).unwrap();
        assert_eq!(ck.lineage_value("tokenize_manifest_sha256"), Some(sha.as_str()));
    }

    let summary = forecast(&c).unwrap();
    assert_eq!(summary.report.variables.len(), 2);
    assert!(summary.report.missing.is_empty());
    let m = Manifest::read(&summary.manifest).unwrap();
    assert_eq!(m.get_all("input.checkpoint").count(), 2);
}

#[test]
fn tokenize_without_corpus_points_to_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["a", "b"]);
    let err = tokenize(&ctx(&cfg)).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data);
    assert!(err.to_string().contains("simulate"), "{err}");

    // real-only training needs no corpus
    let real_only = RunConfig { alpha: 1.0, ..cfg };
    let s = tokenize(&ctx(&real_only)).unwrap();
    assert_eq!(s.synthetic_panels, 0);
    assert_eq!(s.real_rows, 231);
}

#[test]
fn missing_checkpoint_becomes_a_gap_notice() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["a", "b", "c"]);
    let c = ctx(&cfg);
    simulate(&c).unwrap();
    tokenize(&c).unwrap();
    train_all(&c).unwrap();
    let layout = Layout::new(&cfg.output_dir);
    forecast(&c).unwrap();
    assert!(layout.heatmap_csv("b").exists());

    fs::remove_file(layout.checkpoint("b")).unwrap();
    let summary = forecast(&c).unwrap();
    let names: Vec<&str> = summary.report.variables.iter().map(|v| v.variable.as_str()).collect();
    assert_eq!(names, ["a", "c"]);
    assert_eq!(summary.report.missing, ["b"]);
    assert!(!layout.heatmap_csv("b").exists(), "stale heatmap left behind");
    let text = fs::read_to_string(layout.report_txt()).unwrap();
    assert!(text.lines().any(|l| l.starts_with('b') && l.contains("no checkpoint")), "{text}");

    let rebuilt = report(&c).unwrap();
    assert_eq!(rebuilt.report, summary.report);

    for var in ["a", "c"] {
        fs::remove_file(layout.checkpoint(var)).unwrap();
    }
    let err = forecast(&c).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Data);
    assert!(err.to_string().contains("train"), "{err}");
}

#[test]
fn trajectories_shorter_than_a_window_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { traj_len: 4, ..config(dir.path(), &["a", "b"]) };
    let err = simulate(&ctx(&cfg)).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Config);
    assert!(!Layout::new(&cfg.output_dir).corpus_dir().exists());
}

#[test]
fn small_corpus_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), &["a", "b", "c"]);
    cfg.n_trajectories = 10;
    cfg.traj_len = 100;
    cfg.corpus_format = CorpusFormat::Directory;
    let s = simulate(&ctx(&cfg)).unwrap();
    assert_eq!((s.panels, s.rows, s.rejected), (10, 1000, 0));
    let layout = Layout::new(&cfg.output_dir);
    let files = fs::read_dir(layout.corpus_path(CorpusFormat::Directory)).unwrap().count();
    assert_eq!(files, 10);
    let m = Manifest::read(&s.manifest).unwrap();
    assert_eq!(m.get("draws.rejected"), Some("0"));
    assert_eq!(m.get_all("output.corpus").count(), 10);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["a", "b"]);
    let c = ctx(&cfg);
    let layout = Layout::new(&cfg.output_dir);
    let run = || {
        simulate(&c).unwrap();
        tokenize(&c).unwrap();
        train_all(&c).unwrap();
        forecast(&c).unwrap();
        [
            layout.simulate_manifest(),
            layout.tokenize_manifest(),
            layout.train_manifest(),
            layout.forecast_manifest(),
            layout.checkpoint("a"),
            layout.checkpoint("b"),
            layout.report_csv(),
            layout.heatmap_svg("b"),
        ]
        .map(|p| fs::read(p).unwrap())
    };
    let first = run();
    assert_eq!(run(), first);
}

#[test]
fn overrides_are_recorded_in_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &["a", "b"]);
    let c = RunContext::new(cfg, vec![("seed".into(), "4".into())]);
    let s = simulate(&c).unwrap();
    let m = Manifest::read(&s.manifest).unwrap();
    assert_eq!(m.get("override"), Some("seed=4"));
    assert_eq!(m.get("config.seed"), Some("4"));
    assert!(m.get("input.posterior_draws").unwrap().contains("sha256="));
}
