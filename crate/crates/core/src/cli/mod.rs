//! Orchestration of the gen, pretrain, train, eval, bench and ablate steps.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{
    baseline_accuracy, benchmark, cmd_ablate, cmd_bench, cmd_eval, cmd_gen, cmd_pretrain, cmd_train, pretrain_model,
    racc_accuracy, toggle_grid, train_racc, BenchReport, Models, TaskData, Toggle,
};
pub use config::{Paths, RunConfig};
pub use report::{ablation_table, mean_vqa_accuracy, sample_curve, vqa_accuracy, AblationRow, LatencyReport, MetricsReport};
