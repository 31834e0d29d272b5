//! Rolling one-step-ahead evaluation over the test segment, accuracy
//! metrics and heatmap export.

mod heatmap;
mod rolling;
mod score;

pub use heatmap::{cell_shade, export_heatmap, heatmap_csv, heatmap_svg, parse_heatmap_csv};
pub use rolling::{rolling_forecast, rolling_forecast_with, ForecastRow, ForecastTable, Predictor, UniformPredictor};
pub use score::{score, AccuracyReport, VariableAccuracy};
