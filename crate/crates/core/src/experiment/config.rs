use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    gen_gaussian_blobs_shift, gen_two_moons_shift, load_csv, load_labels, Dataset, Domain, TargetTruth,
};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// Where the two domains come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    TwoMoons {
        n_per_domain: usize,
        rotation_deg: f64,
        noise_sd: f64,
        seed: u64,
    },
    Blobs {
        num_classes: usize,
        n_per_class: usize,
        mean_shift: Vec<f64>,
        scale: f64,
        seed: u64,
    },
    /// Relative paths are resolved against the config file's directory.
    Csv {
        source: PathBuf,
        target: PathBuf,
        target_labels: PathBuf,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::TwoMoons {
            n_per_domain: 1000,
            rotation_deg: 35.0,
            noise_sd: 0.1,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    /// Raw (unstandardized) source, target and held-out target truth.
    pub fn materialize(&self) -> Result<(Dataset, Dataset, TargetTruth)> {
        match self {
            DatasetSpec::TwoMoons {
                n_per_domain,
                rotation_deg,
                noise_sd,
                seed,
            } => gen_two_moons_shift(*n_per_domain, *rotation_deg, *noise_sd, *seed),
            DatasetSpec::Blobs {
                num_classes,
                n_per_class,
                mean_shift,
                scale,
                seed,
            } => gen_gaussian_blobs_shift(*num_classes, *n_per_class, mean_shift, *scale, *seed),
            DatasetSpec::Csv {
                source,
                target,
                target_labels,
            } => {
                let source = load_csv(source)?;
                if source.domain() != Domain::Source {
                    return Err(Error::invalid("source CSV needs a label column"));
                }
                let k = source.num_classes();
                let target = load_csv(target)?;
                if target.domain() != Domain::Target {
                    return Err(Error::invalid("target CSV must not carry labels"));
                }
                let truth = load_labels(target_labels)?;
                if let Some(&label) = truth.iter().find(|&&y| y >= k) {
                    return Err(Error::LabelOutOfRange { label, num_classes: k });
                }
                Ok((source, target.with_num_classes(k), TargetTruth::new(truth)))
            }
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSpec::Csv {
            source,
            target,
            target_labels,
        } = self
        {
            for p in [source, target, target_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("dataset specs always serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut spec: Self = parse_file(path)?;
        spec.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths are resolved against the config file's directory.
    pub dir: PathBuf,
    pub embeddings: bool,
    pub checkpoint: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            embeddings: false,
            checkpoint: false,
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Canonical serialization: every field spelled out in a fixed order.
    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: Self = parse_file(path)?;
        cfg.train.validate().map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset.resolve_paths(base);
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        Ok(cfg)
    }
}

fn parse_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let config_err = |message: String| Error::Config {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| config_err(e.to_string()))?;
    toml::from_str(&text).map_err(|e| config_err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Variant;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn canonical_round_trip() {
        let text = r#"
[dataset]
kind = "blobs"
num_classes = 3
n_per_class = 50
mean_shift = [1.0, -0.5]
scale = 1.2
seed = 4

[train]
variant = "mcd_mmd"
lambda3 = 0.0
seed = 9

[train.mmd_kernel]
type = "rbf_mean"
sigma = 2.0

[output]
dir = "runs/a"
embeddings = true
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.train.variant, Variant::McdMmd);
        let canonical = cfg.to_canonical();
        let again = ExperimentConfig::from_toml(&canonical).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_canonical(), canonical);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[train]\nlamda1 = 0.1\n").is_err());
        assert!(ExperimentConfig::from_toml("[output]\nplots = true\n").is_err());
        assert!(ExperimentConfig::from_toml("extra = 1\n").is_err());
        let moons = "[dataset]\nkind = \"two_moons\"\nn_per_domain = 10\nrotation_deg = 1.0\nnoise_sd = 0.1\nseed = 0\nwidth = 3\n";
        assert!(ExperimentConfig::from_toml(moons).is_err());
    }

    #[test]
    fn dataset_spec_stands_alone() {
        let spec = DatasetSpec::Csv {
            source: "s.csv".into(),
            target: "t.csv".into(),
            target_labels: "y.csv".into(),
        };
        let text = spec.to_toml();
        assert!(text.starts_with("kind = \"csv\""));
        assert_eq!(toml::from_str::<DatasetSpec>(&text).unwrap(), spec);
    }

    #[test]
    fn missing_file_names_path() {
        let err = ExperimentConfig::load("/nonexistent/cfg.toml").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(err.to_string().contains("/nonexistent/cfg.toml"));
    }

    #[test]
    fn invalid_train_section_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\nvariant = \"mcd\"\n").unwrap();
        assert!(matches!(ExperimentConfig::load(&p), Err(Error::Config { .. })));
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "[dataset]\nkind = \"csv\"\nsource = \"s.csv\"\ntarget = \"t.csv\"\ntarget_labels = \"y.csv\"\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::load(&p).unwrap();
        assert_eq!(cfg.output.dir, dir.path().join("out"));
        match cfg.dataset {
            DatasetSpec::Csv { source, .. } => assert_eq!(source, dir.path().join("s.csv")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
