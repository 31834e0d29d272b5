//! Stage orchestration behind the command-line tool: simulate, tokenize,
//! train, forecast and report, each writing a checksummed manifest.

mod files;
mod manifest;
mod selftest;
mod stages;

pub use files::{
    parse_token_panel_csv, read_synthetic_tokens, stats_from_text, stats_to_text, token_panel_csv,
    write_synthetic_tokens,
};
pub use manifest::{display_path, sha256_bytes, sha256_file, Manifest};
pub use selftest::{run_selftest, SelfCheck};
pub use stages::{
    forecast, model_config, plan_entries, report, simulate, simulation_plan, tokenize, train_all, ForecastSummary,
    Layout, RunContext, SimulateSummary, TokenizeSummary, TrainRunInfo, TrainSummary, VariableRun, write_toy_inputs,
};
