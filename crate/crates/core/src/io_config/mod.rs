//! Real-data ingestion, sample partitioning, training-only standardization
//! and run configuration.

mod config;
mod panel;
mod partition;
mod quarter;
mod standardize;

pub use config::{CorpusFormat, RunConfig, CONFIG_KEYS, DEFAULT_VARIABLES};
pub use panel::{load_real_panel, parse_real_panel, write_real_panel, Panel};
pub use partition::{partition_panel, PartitionSpec};
pub use quarter::{Quarter, QuarterRange};
pub use standardize::{
    apply_standardization, fit_standardization, invert_standardization, StandardizationStats,
};
