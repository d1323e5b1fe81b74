//! Experiment runner: configuration, the defense x attack x recommender
//! grid, category selection and report files.

pub mod config;
pub mod pipeline;
pub mod plan;
pub mod report;

pub use config::ExperimentConfig;
pub use pipeline::run_experiment;
pub use plan::{select_categories, CategoryPlan};
pub use report::{emit_report, ExperimentResults};
