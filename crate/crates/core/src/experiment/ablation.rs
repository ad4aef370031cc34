use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::{prepare, run_on};
use crate::error::{Error, Result};
use crate::trainer::{FinalSummary, Variant};

pub const ABLATION_FILE: &str = "ablation.csv";
pub const SUMMARY_FILE: &str = "ablation_summary.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub variant: Variant,
    pub seed: u64,
    /// The run summary, or the reason the run aborted.
    pub outcome: std::result::Result<FinalSummary, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub completed: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl AblationReport {
    /// Final target accuracies of the completed runs of one variant, in seed order.
    pub fn accuracies(&self, variant: Variant) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.variant == variant)
            .filter_map(|c| c.outcome.as_ref().ok().map(|s| s.target_acc))
            .collect()
    }

    /// Median and quartiles of target accuracy per variant; NaN when no run
    /// of that variant completed.
    pub fn summaries(&self) -> Vec<VariantSummary> {
        self.variants
            .iter()
            .map(|&variant| {
                let mut acc = self.accuracies(variant);
                acc.sort_by(f64::total_cmp);
                let stat = |q| if acc.is_empty() { f64::NAN } else { quantile(&acc, q) };
                let (q1, median, q3) = (stat(0.25), stat(0.5), stat(0.75));
                VariantSummary {
                    variant,
                    completed: acc.len(),
                    median,
                    q1,
                    q3,
                    iqr: q3 - q1,
                }
            })
            .collect()
    }

    pub fn median(&self, variant: Variant) -> Option<f64> {
        self.summaries()
            .into_iter()
            .find(|s| s.variant == variant && s.completed > 0)
            .map(|s| s.median)
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from("variant,seed,status,target_acc,source_acc,pseudo_label_acc,target_acc_f1,target_acc_f2,error\n");
        for c in &self.cells {
            match &c.outcome {
                Ok(s) => writeln!(
                    out,
                    "{},{},ok,{},{},{},{},{},",
                    c.variant, c.seed, s.target_acc, s.source_acc, s.pseudo_label_acc, s.target_acc_f1, s.target_acc_f2
                ),
                Err(e) => writeln!(out, "{},{},failed,,,,,,\"{}\"", c.variant, c.seed, e.replace('"', "'")),
            }
            .expect("writing to a String");
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("variant,completed,median,q1,q3,iqr\n");
        for s in self.summaries() {
            writeln!(out, "{},{},{},{},{},{}", s.variant, s.completed, s.median, s.q1, s.q3, s.iqr)
                .expect("writing to a String");
        }
        out
    }
}

/// Runs every (variant, seed) cell on one shared dataset. Each cell trains
/// `cfg.train` restricted to the variant with the seed replaced; numerical
/// aborts mark the cell failed without stopping the grid. With `out_dir`,
/// every cell writes its own run directory under `cells/` and the two CSV
/// reports are written at the end.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("an ablation needs at least one variant and one seed"));
    }
    let data = prepare(&cfg.dataset)?;
    let grid: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let cells = grid
        .into_par_iter()
        .map(|(variant, seed)| {
            let mut train = cfg.train.for_variant(variant);
            train.seed = seed;
            let dir = out_dir.map(|d| d.join("cells").join(format!("{variant}_seed{seed}")));
            let outcome = match run_on(&train, &data, dir.as_deref()) {
                Ok(out) => Ok(out.summary),
                Err(e) if e.is_numerical() => Err(e.to_string()),
                Err(e) => return Err(e),
            };
            Ok(AblationCell { variant, seed, outcome })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = AblationReport {
        variants: variants.to_vec(),
        seeds: seeds.to_vec(),
        cells,
    };
    if let Some(dir) = out_dir {
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write(ABLATION_FILE, report.cells_csv())?;
        write(SUMMARY_FILE, report.summary_csv())?;
    }
    Ok(report)
}
