//! Posterior-predictive simulation of the synthetic training corpus.

mod corpus;
mod draw;
mod format;
mod simulate;
pub mod toy;

pub use corpus::{
    generate_corpus, panel_file_name, read_corpus, write_corpus, SimulationPlan, SyntheticCorpus,
};
pub use draw::{spectral_radius, validate_draw, PosteriorDraw, Rejection, SvParams};
pub use format::{
    filter_draws, format_posterior_draws, load_posterior_draws, parse_posterior_draws,
    write_posterior_draws, LoadedDraws,
};
pub use simulate::{draw_innovation, simulate_trajectory, simulate_with_log_variance, UnitStudentT};
