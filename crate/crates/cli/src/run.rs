//! Builds a federation from a config, runs it and writes the artifacts:
//! `metrics.csv`, `summary.json` and, optionally, one coefficient CSV per
//! round under `coefficients/`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ktpfl_core::data::{load_idx, partition, synth_gen};
use ktpfl_core::fedsim::{write_metrics_csv, ByteTotals};
use ktpfl_core::{Dataset, Federation, PublicSet, SynthParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DatasetSource, ExperimentConfig, PublicSource};
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COEFFICIENT_DIR: &str = "coefficients";

/// End-of-run record, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub seed: u64,
    /// SHA-256 over the loaded dataset, for checking that compared runs saw
    /// the same data.
    pub dataset_fingerprint: String,
    pub rounds: usize,
    pub final_avg_accuracy: f64,
    pub best_avg_accuracy: f64,
    pub best_round: usize,
    pub avg_accuracy_by_round: Vec<f64>,
    pub bytes: ByteTotals,
    /// The full effective configuration.
    pub config: ExperimentConfig,
}

/// Hex SHA-256 of a dataset's shape, labels and inputs.
pub fn fingerprint(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for v in [ds.len(), ds.input_dim(), ds.num_classes] {
        h.update((v as u64).to_le_bytes());
    }
    for &y in &ds.labels {
        h.update((y as u64).to_le_bytes());
    }
    for v in ds.inputs.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_main(config: &ExperimentConfig, base: &Path) -> Result<Dataset, CliError> {
    Ok(match &config.dataset {
        DatasetSource::Synthetic {
            num_classes,
            samples_per_class,
            input_dim,
            spread,
            seed,
        } => synth_gen(&SynthParams {
            num_classes: *num_classes,
            samples_per_class: *samples_per_class,
            input_dim: *input_dim,
            spread: *spread,
            seed: *seed,
        })?,
        DatasetSource::Idx { images, labels } => {
            load_idx(resolve(base, images), resolve(base, labels))?
        }
    })
}

/// Runs one experiment. Relative data paths resolve against `base`, usually
/// the config file's directory. Returns the summary and the directory the
/// artifacts were written to.
pub fn run_experiment(config: &ExperimentConfig, base: &Path) -> Result<(Summary, PathBuf), CliError> {
    let dataset = load_main(config, base)?;
    let (holdout, public_source) = match &config.public.source {
        PublicSource::ReuseMain { holdout } => (holdout.unwrap_or(config.public.size), None),
        PublicSource::Synthetic {
            samples_per_class,
            spread,
            seed,
        } => {
            let ds = synth_gen(&SynthParams {
                num_classes: dataset.num_classes,
                samples_per_class: *samples_per_class,
                input_dim: dataset.input_dim(),
                spread: *spread,
                seed: *seed,
            })?;
            (0, Some(ds.to_public(true)))
        }
        PublicSource::Idx { images, labels } => {
            let ds = load_idx(resolve(base, images), resolve(base, labels))?;
            (0, Some(ds.to_public(true)))
        }
    };
    let part = partition(
        &dataset,
        config.clients,
        config.partition.into(),
        holdout,
        config.seed,
    )?;
    let public: PublicSet =
        public_source.unwrap_or_else(|| dataset.subset(&part.public_indices).to_public(true));
    let archs = config.architectures(dataset.input_dim(), dataset.num_classes);
    log::info!(
        "{} clients, {} private samples, public pool {}, algorithm {}",
        config.clients,
        part.total_private(),
        public.len(),
        config.algorithm
    );

    let mut fed = Federation::new(config.sim_config(), &dataset, &part, public, &archs)?;
    let out_dir = config.output_dir.clone();
    fs::create_dir_all(&out_dir)?;
    if config.flags.snapshot_coefficients {
        fs::create_dir_all(out_dir.join(COEFFICIENT_DIR))?;
    }
    for _ in 0..config.training.rounds {
        let m = fed.run_round()?;
        log::info!("round {:>3}: avg test acc {:.4}", m.round, m.avg_accuracy);
        if config.flags.snapshot_coefficients {
            let path = out_dir
                .join(COEFFICIENT_DIR)
                .join(format!("round_{:04}.csv", m.round));
            fs::write(path, fed.coefficients().to_csv())?;
        }
    }

    let mut csv = BufWriter::new(File::create(out_dir.join(METRICS_FILE))?);
    write_metrics_csv(&mut csv, fed.history())?;
    drop(csv);

    let outcome = fed.outcome();
    let summary = Summary {
        algorithm: config.algorithm.name().to_string(),
        seed: config.seed,
        dataset_fingerprint: fingerprint(&dataset),
        rounds: outcome.rounds,
        final_avg_accuracy: outcome.final_avg_accuracy,
        best_avg_accuracy: outcome.best_avg_accuracy,
        best_round: outcome.best_round,
        avg_accuracy_by_round: fed.history().iter().map(|m| m.avg_accuracy).collect(),
        bytes: outcome.bytes,
        config: config.clone(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(out_dir.join(SUMMARY_FILE), json + "\n")?;
    Ok((summary, out_dir))
}
