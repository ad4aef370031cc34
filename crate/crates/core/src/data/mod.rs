//! Datasets, synthetic domain-shift generators, CSV I/O, standardization and
//! minibatch samplers.
//!
//! Target ground truth never lives inside a [`Dataset`]: generators return it
//! as a separate [`TargetTruth`] and the training path only ever consumes
//! [`UnlabeledBatch`]es drawn from the target domain.

mod csv_io;
mod generators;
mod sampler;

pub use csv_io::{load_csv, load_labels, save_csv, save_labels};
pub use generators::{gen_gaussian_blobs_shift, gen_two_moons, gen_two_moons_shift};
pub use sampler::{ClassAwareSampler, LabeledBatch, UniformSampler, UnlabeledBatch};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Sample-size floor used when standardizing constant features.
pub const SD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Option<Vec<usize>>,
    domain: Domain,
    num_classes: usize,
    standardized: bool,
}

impl Dataset {
    /// Labeled source-domain data.
    pub fn source(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: inputs.shape().to_vec(),
                reason: "inputs must be an N x d matrix".into(),
            });
        }
        if labels.len() != inputs.rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} samples",
                labels.len(),
                inputs.rows()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Self {
            inputs,
            labels: Some(labels),
            domain: Domain::Source,
            num_classes,
            standardized: false,
        })
    }

    /// Unlabeled target-domain data.
    pub fn target(inputs: Tensor, num_classes: usize) -> Result<Self> {
        if inputs.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: inputs.shape().to_vec(),
                reason: "inputs must be an N x d matrix".into(),
            });
        }
        Ok(Self {
            inputs,
            labels: None,
            domain: Domain::Target,
            num_classes,
            standardized: false,
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn with_num_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Row indices grouped by class (source only).
    pub fn class_indices(&self) -> Option<Vec<Vec<usize>>> {
        let labels = self.labels.as_ref()?;
        let mut pools = vec![Vec::new(); self.num_classes];
        for (i, &y) in labels.iter().enumerate() {
            pools[y].push(i);
        }
        Some(pools)
    }
}

/// Ground-truth target labels, used for evaluation only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetTruth(Vec<usize>);

impl TargetTruth {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-feature source mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl StandardizationStats {
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyBatch("standardization source"));
        }
        let (n, d) = (ds.len() as f64, ds.dim());
        let mut mean = vec![0.0; d];
        for i in 0..ds.len() {
            for (m, v) in mean.iter_mut().zip(ds.inputs.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..ds.len() {
            for ((s, v), m) in var.iter_mut().zip(ds.inputs.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var.iter().map(|s| (s / n).sqrt().max(SD_FLOOR)).collect();
        Ok(Self { mean, sd })
    }

    /// Applies the z-score transform. Each dataset can be standardized once;
    /// a second application is rejected because it would not be the identity.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.standardized {
            return Err(Error::invalid("dataset is already standardized"));
        }
        if ds.dim() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                op: "standardize",
                lhs: vec![self.mean.len()],
                rhs: ds.inputs.shape().to_vec(),
            });
        }
        let mut out = ds.clone();
        let d = ds.dim();
        for (k, v) in out.inputs.data_mut().iter_mut().enumerate() {
            let j = k % d;
            *v = (*v - self.mean[j]) / self.sd[j];
        }
        out.standardized = true;
        Ok(out)
    }
}

/// Z-scores both domains with statistics fitted on the source.
pub fn standardize(source: &Dataset, target: &Dataset) -> Result<(Dataset, Dataset, StandardizationStats)> {
    let stats = StandardizationStats::fit(source)?;
    Ok((stats.apply(source)?, stats.apply(target)?, stats))
}
