use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::{DatasetSpec, ExperimentConfig};
use super::embeddings::export_embeddings;
use crate::data::{standardize, Dataset, StandardizationStats, TargetTruth};
use crate::error::{Error, Result};
use crate::models::ModelTriple;
use crate::trainer::{train, EpochMetrics, FinalSummary, IterationMetrics, RunRecord, TrainConfig};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_FILE: &str = "final.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Standardized domains ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub source: Dataset,
    pub target: Dataset,
    pub truth: TargetTruth,
    pub stats: StandardizationStats,
}

pub fn prepare(spec: &DatasetSpec) -> Result<PreparedData> {
    let (s, t, truth) = spec.materialize()?;
    let (source, target, stats) = standardize(&s, &t)?;
    Ok(PreparedData {
        source,
        target,
        truth,
        stats,
    })
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum MetricsLine<'a> {
    Iteration(&'a IterationMetrics),
    Epoch(&'a EpochMetrics),
}

/// One JSON object per line: each epoch's iteration records followed by
/// that epoch's evaluation record.
pub fn write_metrics(record: &RunRecord, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = |m: MetricsLine<'_>| -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &m)?;
        w.write_all(b"\n")
    };
    let mut write = || -> std::io::Result<()> {
        let mut iters = record.iterations.iter().peekable();
        for epoch in &record.epochs {
            while let Some(it) = iters.next_if(|it| it.epoch == epoch.epoch) {
                line(MetricsLine::Iteration(it))?;
            }
            line(MetricsLine::Epoch(epoch))?;
        }
        Ok(())
    };
    write().map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_final(summary: &FinalSummary, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary).expect("summaries always serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub model: ModelTriple,
    pub record: RunRecord,
    pub summary: FinalSummary,
}

/// Trains on prepared data; with `dir`, writes `metrics.jsonl` and
/// `final.json` there.
pub fn run_on(cfg: &TrainConfig, data: &PreparedData, dir: Option<&Path>) -> Result<RunOutput> {
    let (model, record) = train(cfg, &data.source, &data.target, &data.truth)?;
    let summary = record.summary();
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_metrics(&record, &dir.join(METRICS_FILE))?;
        write_final(&summary, &dir.join(FINAL_FILE))?;
    }
    Ok(RunOutput { model, record, summary })
}

/// The `run` command: one training run plus the optional exports.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.train.validate()?;
    let data = prepare(&cfg.dataset)?;
    let dir = &cfg.output.dir;
    let out = run_on(&cfg.train, &data, Some(dir))?;
    if cfg.output.embeddings {
        export_embeddings(&out.model, &data.source, &data.target, &data.truth, dir.join(EMBEDDINGS_FILE))?;
    }
    if cfg.output.checkpoint {
        Checkpoint {
            model: out.model.clone(),
            standardization: data.stats.clone(),
        }
        .save(dir.join(CHECKPOINT_FILE))?;
    }
    Ok(out)
}
