//! Simulated optimization runs and the studies built from them.

mod config;
mod run;
mod study;

pub use config::{GammaMode, RunConfig, ScalePreset};
pub use run::{run_once, CurvePoint, IterationRecord, RunResult};
pub use study::{
    cost_study_configs, curve_rows, format_summary, gamma_sweep_configs, read_rows, run_all,
    run_cost_study, run_file_name, run_gamma_sweep, summarize, write_results, CurveRow, MeanSe,
    SummaryRow,
};
