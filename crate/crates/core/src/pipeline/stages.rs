use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::error::{data_err, Error, Result};
use crate::forecast::{export_heatmap, parse_heatmap_csv, rolling_forecast, score, AccuracyReport, ForecastTable};
use crate::io_config::{
    apply_standardization, fit_standardization, load_real_panel, partition_panel, CorpusFormat, Panel, RunConfig,
};
use crate::simulator::{generate_corpus, load_posterior_draws, read_corpus, write_corpus, SimulationPlan};
use crate::tokenizer::{encode, fit_tokenizer, TokenPanel, TokenizerSpec};
use crate::trainer::{save_checkpoint, load_checkpoint, train, write_loss_trace, Checkpoint, TrainConfig, WindowStore};
use crate::transformer::ModelConfig;

use super::files::{
    parse_token_panel_csv, read_synthetic_tokens, stats_from_text, stats_to_text, token_panel_csv,
    write_synthetic_tokens,
};
use super::manifest::{sha256_file, Manifest};

/// File locations under the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn corpus_path(&self, format: CorpusFormat) -> PathBuf {
        match format {
            CorpusFormat::Single => self.corpus_dir().join("synthetic.csv"),
            CorpusFormat::Directory => self.corpus_dir().join("panels"),
        }
    }

    pub fn simulate_manifest(&self) -> PathBuf {
        self.corpus_dir().join("manifest.txt")
    }

    pub fn tokens_dir(&self) -> PathBuf {
        self.root.join("tokens")
    }

    pub fn tokenizer_file(&self) -> PathBuf {
        self.tokens_dir().join("tokenizer.txt")
    }

    pub fn stats_file(&self) -> PathBuf {
        self.tokens_dir().join("standardization.txt")
    }

    pub fn real_tokens_file(&self) -> PathBuf {
        self.tokens_dir().join("real_training.csv")
    }

    pub fn synthetic_tokens_file(&self) -> PathBuf {
        self.tokens_dir().join("synthetic.bin")
    }

    pub fn tokenize_manifest(&self) -> PathBuf {
        self.tokens_dir().join("manifest.txt")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, var: &str) -> PathBuf {
        self.checkpoints_dir().join(format!("{var}.ckpt"))
    }

    pub fn loss_trace(&self, var: &str) -> PathBuf {
        self.checkpoints_dir().join(format!("{var}_loss.csv"))
    }

    pub fn train_manifest(&self) -> PathBuf {
        self.checkpoints_dir().join("manifest.txt")
    }

    pub fn forecast_dir(&self) -> PathBuf {
        self.root.join("forecast")
    }

    pub fn heatmap_csv(&self, var: &str) -> PathBuf {
        self.forecast_dir().join(format!("heatmap_{var}.csv"))
    }

    pub fn heatmap_svg(&self, var: &str) -> PathBuf {
        self.forecast_dir().join(format!("heatmap_{var}.svg"))
    }

    pub fn report_csv(&self) -> PathBuf {
        self.forecast_dir().join("report.csv")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.forecast_dir().join("report.txt")
    }

    pub fn forecast_manifest(&self) -> PathBuf {
        self.forecast_dir().join("manifest.txt")
    }

    pub fn report_manifest(&self) -> PathBuf {
        self.forecast_dir().join("report_manifest.txt")
    }
}

/// Effective configuration plus the command-line overrides that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunContext {
    pub config: RunConfig,
    pub overrides: Vec<(String, String)>,
}

impl RunContext {
    pub fn new(config: RunConfig, overrides: Vec<(String, String)>) -> Self {
        RunContext { config, overrides }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config.output_dir)
    }

    fn manifest(&self, command: &str) -> Manifest {
        let mut m = Manifest::new(command);
        for (k, v) in &self.overrides {
            m.push("override", format!("{k}={v}"));
        }
        for line in self.config.to_kv_text().lines() {
            if let Some((k, v)) = line.split_once(" = ") {
                m.push(format!("config.{k}"), v);
            }
        }
        m
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn remove_if_exists(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

pub fn simulation_plan(cfg: &RunConfig) -> SimulationPlan {
    SimulationPlan {
        n_trajectories: cfg.n_trajectories,
        traj_len: cfg.traj_len,
        burn_in: cfg.burn_in,
        base_seed: cfg.seed,
    }
}

/// Size bookkeeping recorded in the simulate manifest.
pub fn plan_entries(plan: &SimulationPlan, n_vars: usize) -> Vec<(String, String)> {
    let rows = plan.total_rows();
    vec![
        ("plan.n_trajectories".into(), plan.n_trajectories.to_string()),
        ("plan.traj_len".into(), plan.traj_len.to_string()),
        ("plan.burn_in".into(), plan.burn_in.to_string()),
        ("plan.observation_rows".into(), rows.to_string()),
        ("plan.values".into(), (rows * n_vars).to_string()),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub panels: usize,
    pub rows: usize,
    pub rejected: usize,
    pub manifest: PathBuf,
}

/// Draws the synthetic corpus and writes it with its manifest.
pub fn simulate(ctx: &RunContext) -> Result<SimulateSummary> {
    let cfg = &ctx.config;
    cfg.validate()?;
    let plan = simulation_plan(cfg);
    plan.validate(cfg.context_len)?;
    let layout = ctx.layout();

    let loaded = load_posterior_draws(&cfg.posterior_draws)?;
    let n_obs = loaded.draws[0].n_obs();
    if n_obs != cfg.n_vars {
        return Err(data_err!("posterior draws have {n_obs} observables, config lists {} variables", cfg.n_vars));
    }
    for (i, why) in &loaded.rejected {
        warn!("posterior draw {i} rejected: {why}");
    }
    info!("simulating {} trajectories of {} quarters", plan.n_trajectories, plan.traj_len);
    let corpus = generate_corpus(&loaded.draws, &plan, &cfg.variables)?;

    create_dir(&layout.corpus_dir())?;
    let target = layout.corpus_path(cfg.corpus_format);
    if cfg.corpus_format == CorpusFormat::Directory && target.exists() {
        fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
    }
    let files = write_corpus(&corpus, &target, cfg.corpus_format)?;

    let mut m = ctx.manifest("simulate");
    m.push_file("input.posterior_draws", &cfg.posterior_draws, &layout.root)?;
    m.push("seed", cfg.seed);
    for (k, v) in plan_entries(&plan, cfg.n_vars) {
        m.push(k, v);
    }
    m.push("draws.accepted", loaded.draws.len());
    m.push("draws.rejected", loaded.rejected.len());
    for (i, why) in &loaded.rejected {
        m.push("draws.rejected_index", format!("{i} {why}"));
    }
    m.push("corpus.rows", corpus.total_rows());
    for f in &files {
        m.push_file("output.corpus", f, &layout.root)?;
    }
    let manifest = m.write(&layout.simulate_manifest())?;
    Ok(SimulateSummary {
        panels: corpus.panels.len(),
        rows: corpus.total_rows(),
        rejected: loaded.rejected.len(),
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizeSummary {
    pub real_rows: usize,
    pub synthetic_panels: usize,
    pub manifest: PathBuf,
}

/// Standardizes with training-segment statistics, fits the tokenizer on the
/// pooled real-training and synthetic samples and writes token files.
pub fn tokenize(ctx: &RunContext) -> Result<TokenizeSummary> {
    let cfg = &ctx.config;
    cfg.validate()?;
    let layout = ctx.layout();
    let real = load_real_panel(&cfg.real_data, &cfg.variables)?;
    let (_, training, _) = partition_panel(&real, &cfg.partition())?;
    let stats = fit_standardization(&training)?;

    let corpus_path = layout.corpus_path(cfg.corpus_format);
    let synthetic = if corpus_path.exists() {
        read_corpus(&corpus_path, cfg.corpus_format, &cfg.variables)?
    } else if cfg.alpha < 1.0 {
        return Err(data_err!(
            "synthetic corpus {} not found; run `macrotok simulate` first",
            corpus_path.display()
        ));
    } else {
        Vec::new()
    };
    let z_train = apply_standardization(&training, &stats)?;
    let z_syn: Vec<Panel> = synthetic
        .into_iter()
        .map(|p| apply_standardization(&p, &stats))
        .collect::<Result<_>>()?;
    let pool: Vec<&Panel> = std::iter::once(&z_train).chain(&z_syn).collect();
    let spec = fit_tokenizer(&pool, cfg.n_bins)?;
    let real_tokens = encode(&z_train, &spec)?;
    let syn_tokens: Vec<TokenPanel> = z_syn.iter().map(|p| encode(p, &spec)).collect::<Result<_>>()?;

    let dir = layout.tokens_dir();
    create_dir(&dir)?;
    let write = |path: PathBuf, text: String| fs::write(&path, text).map_err(|e| Error::io(&path, e));
    write(layout.tokenizer_file(), spec.to_text())?;
    write(layout.stats_file(), stats_to_text(&stats))?;
    write(layout.real_tokens_file(), token_panel_csv(&real_tokens, &cfg.variables)?)?;
    write_synthetic_tokens(&syn_tokens, cfg.n_vars, &layout.synthetic_tokens_file())?;

    let mut m = ctx.manifest("tokenize");
    m.push_file("input.real_data", &cfg.real_data, &layout.root)?;
    if layout.simulate_manifest().exists() {
        m.push_file("input.simulate_manifest", &layout.simulate_manifest(), &layout.root)?;
    }
    m.push("real.training_rows", real_tokens.n_rows());
    m.push("synthetic.panels", syn_tokens.len());
    for p in [layout.tokenizer_file(), layout.stats_file(), layout.real_tokens_file(), layout.synthetic_tokens_file()] {
        m.push_file("output.file", &p, &layout.root)?;
    }
    let manifest = m.write(&layout.tokenize_manifest())?;
    Ok(TokenizeSummary {
        real_rows: real_tokens.n_rows(),
        synthetic_panels: syn_tokens.len(),
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRunInfo {
    pub checkpoint: PathBuf,
    pub best_val_loss: Option<f64>,
    pub steps_run: usize,
    pub stopped_early: bool,
}

#[derive(Debug)]
pub struct VariableRun {
    pub variable: String,
    pub result: Result<TrainRunInfo>,
}

#[derive(Debug)]
pub struct TrainSummary {
    pub runs: Vec<VariableRun>,
    pub manifest: PathBuf,
}

impl TrainSummary {
    pub fn failures(&self) -> impl Iterator<Item = (&str, &Error)> {
        self.runs
            .iter()
            .filter_map(|r| r.result.as_ref().err().map(|e| (r.variable.as_str(), e)))
    }
}

pub fn model_config(cfg: &RunConfig, target_var: usize) -> ModelConfig {
    ModelConfig {
        n_vars: cfg.n_vars,
        n_bins: cfg.n_bins,
        var_dim: cfg.per_var_dim(),
        n_layers: cfg.n_layers,
        n_heads: cfg.n_heads,
        context_len: cfg.context_len,
        target_var,
        mlp_factor: cfg.mlp_factor,
    }
}

struct TokenInputs {
    spec: TokenizerSpec,
    stats: crate::io_config::StandardizationStats,
    real: TokenPanel,
    synthetic: Vec<TokenPanel>,
    manifest_sha: String,
}

fn load_token_inputs(ctx: &RunContext) -> Result<TokenInputs> {
    let cfg = &ctx.config;
    let layout = ctx.layout();
    let manifest = layout.tokenize_manifest();
    if !manifest.exists() {
        return Err(data_err!(
            "no tokenized data under {}; run `macrotok tokenize` first",
            layout.tokens_dir().display()
        ));
    }
    let read = |p: PathBuf| fs::read_to_string(&p).map_err(|e| Error::io(&p, e));
    let spec = TokenizerSpec::from_text(&read(layout.tokenizer_file())?)?;
    let stats = stats_from_text(&read(layout.stats_file())?)?;
    if spec.var_names() != cfg.variables.as_slice() || spec.n_bins() != cfg.n_bins {
        return Err(data_err!("tokenized data were built for a different variable list or bin count; rerun `macrotok tokenize`"));
    }
    let real = parse_token_panel_csv(&read(layout.real_tokens_file())?, &cfg.variables)?;
    let synthetic = read_synthetic_tokens(&layout.synthetic_tokens_file())?;
    if cfg.alpha < 1.0 && synthetic.is_empty() {
        return Err(data_err!(
            "alpha = {} needs synthetic data but the corpus is empty; run `macrotok simulate` then `macrotok tokenize`",
            cfg.alpha
        ));
    }
    Ok(TokenInputs { spec, stats, real, synthetic, manifest_sha: sha256_file(&manifest)? })
}

/// Trains one model per configured variable. A failing variable is recorded
/// and the others still run.
pub fn train_all(ctx: &RunContext) -> Result<TrainSummary> {
    let cfg = &ctx.config;
    cfg.validate()?;
    let layout = ctx.layout();
    let inputs = load_token_inputs(ctx)?;
    let store = WindowStore::new(
        vec![inputs.real.clone()],
        inputs.synthetic.clone(),
        cfg.context_len,
        cfg.validation_fraction,
    )?;
    store.audit_periods(&cfg.test_range)?;
    info!(
        "{} real training windows, {} validation, {} synthetic",
        store.real_train().len(),
        store.real_validation().len(),
        store.n_synthetic()
    );
    create_dir(&layout.checkpoints_dir())?;
    let tcfg = TrainConfig::from_run(cfg);

    let runs: Vec<VariableRun> = cfg
        .variables
        .par_iter()
        .enumerate()
        .map(|(k, var)| VariableRun {
            variable: var.clone(),
            result: train_variable(ctx, &store, &inputs, &tcfg, k),
        })
        .collect();

    let mut m = ctx.manifest("train");
    m.push_file("input.tokenize_manifest", &layout.tokenize_manifest(), &layout.root)?;
    m.push("windows.real_train", store.real_train().len());
    m.push("windows.real_validation", store.real_validation().len());
    m.push("windows.synthetic", store.n_synthetic());
    for run in &runs {
        match &run.result {
            Ok(info) => {
                let best = info.best_val_loss.map(|v| v.to_string()).unwrap_or_else(|| "none".into());
                m.push(
                    format!("result.{}", run.variable),
                    format!("ok steps={} best_val_loss={best} early_stop={}", info.steps_run, info.stopped_early),
                );
                m.push_file("output.checkpoint", &info.checkpoint, &layout.root)?;
                m.push_file("output.loss_trace", &layout.loss_trace(&run.variable), &layout.root)?;
            }
            Err(e) => {
                warn!("training {} failed: {e}", run.variable);
                m.push(format!("result.{}", run.variable), format!("failed: {e}"));
            }
        }
    }
    let manifest = m.write(&layout.train_manifest())?;
    Ok(TrainSummary { runs, manifest })
}

fn train_variable(
    ctx: &RunContext,
    store: &WindowStore,
    inputs: &TokenInputs,
    tcfg: &TrainConfig,
    k: usize,
) -> Result<TrainRunInfo> {
    let cfg = &ctx.config;
    let layout = ctx.layout();
    let var = &cfg.variables[k];
    let ckpt_path = layout.checkpoint(var);
    remove_if_exists(&ckpt_path)?;
    remove_if_exists(&layout.loss_trace(var))?;

    info!("training {var}");
    let outcome = train(store, &model_config(cfg, k), tcfg)?;
    let ck = Checkpoint {
        target_name: var.clone(),
        params: outcome.params,
        tokenizer: inputs.spec.clone(),
        stats: inputs.stats.clone(),
        train: *tcfg,
        initial_loss: outcome.initial_loss,
        final_train_loss: outcome.final_train_loss,
        best_val_loss: outcome.best_val_loss,
        steps_run: outcome.steps_run as u64,
        lineage: vec![
            ("base_seed".into(), cfg.seed.to_string()),
            ("init_seed".into(), outcome.init_seed.to_string()),
            ("batch_seed".into(), outcome.batch_seed.to_string()),
            ("tokenize_manifest_sha256".into(), inputs.manifest_sha.clone()),
        ],
    };
    write_loss_trace(&outcome.trace, &layout.loss_trace(var))?;
    save_checkpoint(&ck, &ckpt_path)?;
    Ok(TrainRunInfo {
        checkpoint: ckpt_path,
        best_val_loss: outcome.best_val_loss,
        steps_run: outcome.steps_run,
        stopped_early: outcome.stopped_early,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSummary {
    pub report: AccuracyReport,
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

fn write_report(layout: &Layout, report: &AccuracyReport) -> Result<Vec<PathBuf>> {
    let (csv, txt) = (layout.report_csv(), layout.report_txt());
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;
    fs::write(&txt, report.summary()).map_err(|e| Error::io(&txt, e))?;
    Ok(vec![csv, txt])
}

/// Rolling one-step-ahead forecasts for every variable with a checkpoint,
/// heatmap exports and the accuracy report. Variables without a checkpoint
/// are listed in the report rather than failing the run.
pub fn forecast(ctx: &RunContext) -> Result<ForecastSummary> {
    let cfg = &ctx.config;
    cfg.validate()?;
    let layout = ctx.layout();
    let real = load_real_panel(&cfg.real_data, &cfg.variables)?;
    let part = cfg.partition();
    partition_panel(&real, &part)?;
    create_dir(&layout.forecast_dir())?;

    let mut report = AccuracyReport::default();
    let mut files = Vec::new();
    let mut inputs = Vec::new();
    for var in &cfg.variables {
        let path = layout.checkpoint(var);
        if !path.exists() {
            warn!("no checkpoint for {var} at {}; skipped", path.display());
            remove_if_exists(&layout.heatmap_csv(var))?;
            remove_if_exists(&layout.heatmap_svg(var))?;
            report.missing.push(var.clone());
            continue;
        }
        let ck = load_checkpoint(&path)?;
        if &ck.target_name != var {
            return Err(data_err!("{} holds a model for {:?}, expected {var:?}", path.display(), ck.target_name));
        }
        let table = rolling_forecast(&ck, &real, &part)?;
        files.extend(export_heatmap(&table, &layout.forecast_dir())?);
        report.variables.push(score(&table));
        inputs.push(path);
    }
    if report.variables.is_empty() {
        return Err(data_err!(
            "no checkpoints under {}; run `macrotok train` first",
            layout.checkpoints_dir().display()
        ));
    }
    files.extend(write_report(&layout, &report)?);

    let mut m = ctx.manifest("forecast");
    m.push_file("input.real_data", &cfg.real_data, &layout.root)?;
    for p in &inputs {
        m.push_file("input.checkpoint", p, &layout.root)?;
    }
    for v in &report.missing {
        m.push("missing_checkpoint", v);
    }
    for f in &files {
        m.push_file("output.file", f, &layout.root)?;
    }
    let manifest = m.write(&layout.forecast_manifest())?;
    Ok(ForecastSummary { report, files, manifest })
}

/// Rebuilds the accuracy report from the heatmap CSVs already on disk.
pub fn report(ctx: &RunContext) -> Result<ForecastSummary> {
    let cfg = &ctx.config;
    let layout = ctx.layout();
    let mut report = AccuracyReport::default();
    let mut inputs = Vec::new();
    for var in &cfg.variables {
        let path = layout.heatmap_csv(var);
        if !path.exists() {
            report.missing.push(var.clone());
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (name, rows) = parse_heatmap_csv(&text)?;
        let n_bins = rows.first().map_or(cfg.n_bins, |r| r.probs.len());
        report.variables.push(score(&ForecastTable { target_name: name, n_bins, edges: Vec::new(), rows }));
        inputs.push(path);
    }
    if report.variables.is_empty() {
        return Err(data_err!(
            "no forecast tables under {}; run `macrotok forecast` first",
            layout.forecast_dir().display()
        ));
    }
    let files = write_report(&layout, &report)?;
    let mut m = ctx.manifest("report");
    for p in &inputs {
        m.push_file("input.heatmap", p, &layout.root)?;
    }
    for v in &report.missing {
        m.push("missing_forecast", v);
    }
    for f in &files {
        m.push_file("output.file", f, &layout.root)?;
    }
    let manifest = m.write(&layout.report_manifest())?;
    Ok(ForecastSummary { report, files, manifest })
}

/// Writes a 312-quarter toy "real" panel starting 1947Q3 and `n_draws` toy
/// posterior draws into `dir`. Returns `(real_data, posterior_draws)`.
pub fn write_toy_inputs(dir: &Path, var_names: &[String], n_draws: usize, seed: u64) -> Result<(PathBuf, PathBuf)> {
    use crate::io_config::{write_real_panel, Quarter};
    use crate::simulator::{toy, write_posterior_draws};

    create_dir(dir)?;
    let start = Quarter::new(1947, 3)?;
    let panel = toy::toy_real_panel(var_names, 312, start, seed)?;
    let real = dir.join("real.csv");
    write_real_panel(&panel, &real)?;
    let draws = dir.join("posterior_draws.txt");
    write_posterior_draws(&toy::toy_draws(n_draws, var_names.len(), seed), &draws)?;
    Ok((real, draws))
}
