//! Experiment plumbing behind the command-line tool: configuration files,
//! single runs, the ablation grid, checkpoints, embedding export and the
//! gradient check.

mod ablation;
mod checkpoint;
mod config;
mod embeddings;
mod gradcheck;
mod run;

pub use ablation::{run_ablation, AblationCell, AblationReport, VariantSummary, ABLATION_FILE, SUMMARY_FILE};
pub use checkpoint::Checkpoint;
pub use config::{DatasetSpec, ExperimentConfig, OutputConfig};
pub use embeddings::{export_embeddings, pca};
pub use gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport, LossCheck, LossKind};
pub use run::{
    prepare, run_experiment, run_on, write_final, write_metrics, PreparedData, RunOutput, CHECKPOINT_FILE,
    EMBEDDINGS_FILE, FINAL_FILE, METRICS_FILE,
};
