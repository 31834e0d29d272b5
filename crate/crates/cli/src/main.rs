use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;

use macrotok::io_config::RunConfig;
use macrotok::pipeline::{self, RunContext};
use macrotok::tensor::Fault;
use macrotok::{Error, ErrorKind};

/// Token-level transformer forecasting of quarterly macro panels.
#[derive(Debug, Parser)]
#[command(name = "macrotok", version)]
struct Cli {
    /// Run configuration (`key = value` lines). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override one config key; repeatable. Recorded in every manifest.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,

    /// Output directory (same as `--set output_dir=DIR`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the synthetic corpus from the posterior draws.
    Simulate,
    /// Standardize, fit the tokenizer and write token files.
    Tokenize,
    /// Train one model per variable.
    Train,
    /// Rolling one-step-ahead forecasts, heatmaps and the accuracy report.
    Forecast,
    /// Rebuild the accuracy report from existing forecast tables.
    Report,
    /// Run simulate, tokenize, train and forecast in order.
    Run,
    /// Write a toy real panel and toy posterior draws for a trial run.
    ToyData {
        /// Destination directory.
        #[arg(long, value_name = "DIR", default_value = "data")]
        dir: PathBuf,
        /// Number of posterior draws.
        #[arg(long, default_value_t = 20)]
        draws: usize,
    },
    /// Run the built-in property checks.
    Selftest {
        /// Corrupt a backward pass to confirm the checks catch it.
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultArg {
    Softmax,
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
        ErrorKind::Io => 1,
    }
}

fn load_context(cli: &Cli) -> Result<RunContext, Error> {
    let cwd = std::env::current_dir().map_err(|e| Error::Config(format!("cannot read working directory: {e}")))?;
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut overrides = cli.overrides.clone();
    if let Some(out) = &cli.out {
        overrides.push(("output_dir".into(), out.display().to_string()));
    }
    config.apply_overrides(&overrides, &cwd)?;
    Ok(RunContext::new(config, overrides))
}

fn run_stage(cli: &Cli, ctx: &RunContext) -> Result<(), Error> {
    match cli.command {
        Command::Simulate => simulate(ctx),
        Command::Tokenize => tokenize(ctx),
        Command::Train => train(ctx),
        Command::Forecast => forecast(ctx),
        Command::Report => {
            let s = pipeline::report(ctx)?;
            print!("{}", s.report.summary());
            Ok(())
        }
        Command::Run => {
            simulate(ctx)?;
            tokenize(ctx)?;
            train(ctx)?;
            forecast(ctx)
        }
        Command::ToyData { ref dir, draws } => {
            let (real, post) = pipeline::write_toy_inputs(dir, &ctx.config.variables, draws, ctx.config.seed)?;
            println!("wrote {} and {}", real.display(), post.display());
            Ok(())
        }
        Command::Selftest { .. } => unreachable!("handled before config loading"),
    }
}

fn simulate(ctx: &RunContext) -> Result<(), Error> {
    let s = pipeline::simulate(ctx)?;
    println!(
        "simulated {} panels ({} rows); {} draws rejected; manifest {}",
        s.panels,
        s.rows,
        s.rejected,
        s.manifest.display()
    );
    Ok(())
}

fn tokenize(ctx: &RunContext) -> Result<(), Error> {
    let s = pipeline::tokenize(ctx)?;
    println!(
        "tokenized {} real training rows and {} synthetic panels; manifest {}",
        s.real_rows,
        s.synthetic_panels,
        s.manifest.display()
    );
    Ok(())
}

fn train(ctx: &RunContext) -> Result<(), Error> {
    let s = pipeline::train_all(ctx)?;
    for run in &s.runs {
        match &run.result {
            Ok(info) => println!(
                "{}: {} steps, best validation loss {}",
                run.variable,
                info.steps_run,
                info.best_val_loss.map_or("n/a".to_string(), |v| format!("{v:.4}"))
            ),
            Err(e) => println!("{}: FAILED {e}", run.variable),
        }
    }
    println!("manifest {}", s.manifest.display());
    let first = s.failures().next().map(|(var, e)| (var.to_string(), e.kind()));
    match first {
        Some((var, kind)) => Err(match kind {
            ErrorKind::Numerical => Error::Numerical(format!("training {var} failed")),
            ErrorKind::Config => Error::Config(format!("training {var} failed")),
            _ => Error::Data(format!("training {var} failed")),
        }),
        None => Ok(()),
    }
}

fn forecast(ctx: &RunContext) -> Result<(), Error> {
    let s = pipeline::forecast(ctx)?;
    print!("{}", s.report.summary());
    println!("manifest {}", s.manifest.display());
    Ok(())
}

fn selftest(fault: Option<FaultArg>) -> ExitCode {
    let fault = fault.map(|FaultArg::Softmax| Fault::SoftmaxBackward);
    let checks = pipeline::run_selftest(fault);
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("{} checks, {failed} failed", checks.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Command::Selftest { inject_fault } = cli.command {
        return selftest(inject_fault);
    }
    match load_context(&cli).and_then(|ctx| run_stage(&cli, &ctx)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
