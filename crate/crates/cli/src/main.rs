use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cosca::data::{save_csv, save_labels};
use cosca::experiment::{
    export_embeddings, run_ablation, run_experiment, run_gradcheck, Checkpoint, DatasetSpec, ExperimentConfig,
    GradcheckOptions, LossKind, FINAL_FILE,
};
use cosca::trainer::Variant;
use cosca::Error;

#[derive(Parser)]
#[command(name = "cosca", version, about = "Contrastively smoothed class alignment for domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once as described by a config file.
    Run { config: PathBuf },
    /// Train every variant x seed combination on one dataset.
    Ablation {
        config: PathBuf,
        /// Comma-separated variant names (default: all five).
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0, 1, 2, 3, 4])]
        seeds: Vec<u64>,
        /// Output directory (default: the config's output dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Materialize a dataset spec as CSV files.
    GenData {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every loss gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Write features, pseudo-labels and a PCA view for a dataset.
    ExportEmbeddings {
        checkpoint: PathBuf,
        /// Dataset spec file (same format as for gen-data).
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Core(Error),
    Usage(String),
    Gradcheck,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_numerical() => 3,
        Error::Io { .. } => 4,
        Error::Config { .. } | Error::Parse { .. } | Error::InvalidArgument(_) | Error::LabelOutOfRange { .. } => 2,
        _ => 1,
    }
}

fn cmd_run(config: &Path) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let out = run_experiment(&cfg)?;
    let s = &out.summary;
    println!(
        "{} seed {}: target_acc {:.4} source_acc {:.4} pseudo_label_acc {:.4}",
        s.variant, s.seed, s.target_acc, s.source_acc, s.pseudo_label_acc
    );
    println!("wrote {}", cfg.output.dir.join(FINAL_FILE).display());
    Ok(())
}

fn cmd_ablation(config: &Path, variants: &[String], seeds: &[u64], out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let variants = if variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        variants
            .iter()
            .map(|v| Variant::from_name(v).ok_or_else(|| Failure::Usage(format!("unknown variant `{v}`"))))
            .collect::<Result<Vec<_>, _>>()?
    };
    let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let report = run_ablation(&cfg, &variants, seeds, Some(&dir))?;
    for c in &report.cells {
        if let Err(e) = &c.outcome {
            eprintln!("{} seed {} failed: {e}", c.variant, c.seed);
        }
    }
    print!("{}", report.summary_csv());
    Ok(())
}

fn cmd_gen_data(spec: &Path, out: &Path) -> Result<(), Failure> {
    let spec = DatasetSpec::load(spec)?;
    let (source, target, truth) = spec.materialize()?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    save_csv(&source, out.join("source.csv"))?;
    save_csv(&target, out.join("target.csv"))?;
    save_labels(truth.labels(), out.join("target_labels.csv"))?;
    let csv_spec = DatasetSpec::Csv {
        source: "source.csv".into(),
        target: "target.csv".into(),
        target_labels: "target_labels.csv".into(),
    };
    let p = out.join("dataset.toml");
    std::fs::write(&p, csv_spec.to_toml()).map_err(|e| Error::Io { path: p, source: e })?;
    println!("wrote {} source and {} target samples to {}", source.len(), target.len(), out.display());
    Ok(())
}

fn cmd_gradcheck(instances: usize, seed: u64, corrupt: Option<String>) -> Result<(), Failure> {
    let corrupt = corrupt
        .map(|name| LossKind::from_name(&name).ok_or_else(|| Failure::Usage(format!("unknown loss `{name}`"))))
        .transpose()?;
    let report = run_gradcheck(&GradcheckOptions {
        instances,
        seed,
        corrupt,
        ..Default::default()
    })?;
    for c in &report.checks {
        println!(
            "{:<14} {} instances, {} gradients, worst relative error {:.3e} {}",
            c.loss.name(),
            c.instances,
            c.parameters_checked,
            c.worst_relative_error,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failing().iter().map(|k| k.name()).collect();
        eprintln!("gradient check failed for: {}", names.join(", "));
        Err(Failure::Gradcheck)
    }
}

fn cmd_export(checkpoint: &Path, data: &Path, out: &Path) -> Result<(), Failure> {
    let ck = Checkpoint::load(checkpoint)?;
    let spec = DatasetSpec::load(data)?;
    let (source, target, truth) = spec.materialize()?;
    if source.num_classes() > ck.model.num_classes() {
        return Err(Failure::Usage(format!(
            "dataset has {} classes but the checkpoint predicts {}",
            source.num_classes(),
            ck.model.num_classes()
        )));
    }
    let source = ck.standardization.apply(&source)?;
    let target = ck.standardization.apply(&target)?;
    export_embeddings(&ck.model, &source, &target, &truth, out)?;
    println!("wrote {} rows to {}", source.len() + target.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => cmd_run(&config),
        Command::Ablation {
            config,
            variants,
            seeds,
            out,
        } => cmd_ablation(&config, &variants, &seeds, out),
        Command::GenData { spec, out } => cmd_gen_data(&spec, &out),
        Command::Gradcheck {
            instances,
            seed,
            corrupt,
        } => cmd_gradcheck(instances, seed, corrupt),
        Command::ExportEmbeddings { checkpoint, data, out } => cmd_export(&checkpoint, &data, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Gradcheck) => ExitCode::from(1),
    }
}
