//! Experiment configuration: one TOML file per run.
//!
//! Every section except `dataset`, `partition` and `model_groups` is
//! optional; missing keys take the defaults below. Unknown keys are rejected.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ktpfl_core::{Algorithm, KnowledgeHyper, PartitionScheme, SimConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    /// N
    pub clients: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_threads")]
    pub threads: usize,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub public: PublicConfig,
    pub partition: PartitionConfig,
    pub model_groups: Vec<ModelGroup>,
    #[serde(default)]
    pub training: Training,
    #[serde(default)]
    pub flags: Flags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        num_classes: usize,
        samples_per_class: usize,
        input_dim: usize,
        spread: f64,
        /// Data seed, independent of the run seed so that seeds of one
        /// experiment share a dataset.
        #[serde(default)]
        seed: u64,
    },
    /// IDX image and label files; relative paths resolve against the
    /// config file's directory.
    Idx { images: PathBuf, labels: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublicConfig {
    #[serde(default)]
    pub source: PublicSource,
    /// |D_r|
    #[serde(default = "default_public_size")]
    pub size: usize,
    #[serde(default = "default_true")]
    pub labeled: bool,
}

impl Default for PublicConfig {
    fn default() -> Self {
        Self {
            source: PublicSource::default(),
            size: default_public_size(),
            labeled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PublicSource {
    /// Withhold `holdout` samples of the main dataset from the clients
    /// (default: `public.size`) and draw D_r from them.
    ReuseMain {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        holdout: Option<usize>,
    },
    /// A separate synthetic draw with the main dataset's width and classes.
    Synthetic {
        samples_per_class: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    Idx { images: PathBuf, labels: PathBuf },
}

impl Default for PublicSource {
    fn default() -> Self {
        PublicSource::ReuseMain { holdout: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionConfig {
    LabelSkew { labels_per_client: usize },
    Dirichlet { alpha: f64 },
}

impl From<PartitionConfig> for PartitionScheme {
    fn from(p: PartitionConfig) -> Self {
        match p {
            PartitionConfig::LabelSkew { labels_per_client } => {
                PartitionScheme::LabelSkew { labels_per_client }
            }
            PartitionConfig::Dirichlet { alpha } => PartitionScheme::Dirichlet { alpha },
        }
    }
}

/// `count` clients sharing one architecture; `hidden` lists the hidden
/// layer widths between the input and the class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelGroup {
    pub count: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub rounds: usize,
    /// E
    pub local_epochs: usize,
    /// R
    pub distill_steps: usize,
    pub private_batch_size: usize,
    pub public_batch_size: usize,
    /// η1
    pub lr_local: f64,
    /// η2
    pub lr_distill: f64,
    /// η3
    pub coeff_lr: f64,
    /// T
    pub temperature: f64,
    /// λ
    pub lambda: f64,
    /// ρ
    pub rho: f64,
    /// K for top-K teachers.
    pub top_k: usize,
    /// q
    pub sample_rate: f64,
    /// Local epochs after the last round of pFedDF.
    pub finetune_epochs: usize,
}

impl Default for Training {
    fn default() -> Self {
        let sim = SimConfig::default();
        let k = KnowledgeHyper::default();
        Self {
            rounds: sim.rounds,
            local_epochs: sim.local_epochs,
            distill_steps: sim.distill_steps,
            private_batch_size: sim.private_batch_size,
            public_batch_size: sim.public_batch_size,
            lr_local: sim.lr_local,
            lr_distill: sim.lr_distill,
            coeff_lr: k.coeff_lr,
            temperature: k.temperature,
            lambda: k.lambda,
            rho: k.rho,
            top_k: k.top_k,
            sample_rate: sim.sample_rate,
            finetune_epochs: sim.finetune_epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    pub normalize_coefficients: bool,
    pub public_resample_each_round: bool,
    /// Write the coefficient matrix after every round.
    pub snapshot_coefficients: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Self {
            normalize_coefficients: true,
            public_resample_each_round: false,
            snapshot_coefficients: false,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_threads() -> usize {
    1
}

fn default_public_size() -> usize {
    SimConfig::default().public_size
}

fn default_true() -> bool {
    true
}

/// A rejected configuration, pointing at the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.key.is_empty(), self.line) {
            (false, Some(line)) => write!(f, "`{}` (line {line}): {}", self.key, self.message),
            (false, None) => write!(f, "`{}`: {}", self.key, self.message),
            (true, Some(line)) => write!(f, "line {line}: {}", self.message),
            (true, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    /// Parses and validates TOML text.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let mut line = e.span().map(|s| line_of_offset(text, s.start));
            // Tagged sections report the table's span; find the key itself.
            if let (Some(from), Some(name)) = (line, quoted_field(e.message())) {
                line = find_key_after(text, from, name).or(line);
            }
            let key = line
                .and_then(|l| text.lines().nth(l - 1))
                .and_then(|l| l.split_once('='))
                .map(|(k, _)| k.trim().to_string())
                .unwrap_or_default();
            ConfigError {
                key,
                line,
                message: e.message().trim().to_string(),
            }
        })?;
        config.validate().map_err(|(key, message)| ConfigError {
            line: key_line(text, &key),
            key,
            message,
        })?;
        Ok(config)
    }

    /// The effective configuration as TOML, with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Constraint checks that the type system does not cover. Errors carry
    /// the dotted key they concern.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let err = |key: &str, msg: String| Err((key.to_string(), msg));
        let t = &self.training;
        if self.clients == 0 {
            return err("clients", "at least one client is required".into());
        }
        if self.model_groups.is_empty() {
            return err("model_groups", "at least one model group is required".into());
        }
        let total: usize = self.model_groups.iter().map(|g| g.count).sum();
        if total != self.clients {
            return err(
                "model_groups",
                format!("group counts sum to {total}, but clients = {}", self.clients),
            );
        }
        for (i, g) in self.model_groups.iter().enumerate() {
            if g.count == 0 {
                return err("model_groups.count", format!("group {i} has count 0"));
            }
            if g.hidden.contains(&0) {
                return err("model_groups.hidden", format!("group {i} has a zero-width layer"));
            }
        }
        if self.algorithm.requires_homogeneous() {
            let first = &self.model_groups[0].hidden;
            if self.model_groups.iter().any(|g| &g.hidden != first) {
                return err(
                    "algorithm",
                    format!("{} needs a single model architecture", self.algorithm),
                );
            }
        }
        match &self.dataset {
            DatasetSource::Synthetic {
                num_classes,
                samples_per_class,
                input_dim,
                spread,
                ..
            } => {
                if *num_classes < 2 {
                    return err("dataset.num_classes", format!("must be >= 2, got {num_classes}"));
                }
                if *samples_per_class == 0 {
                    return err("dataset.samples_per_class", "must be >= 1".into());
                }
                if *input_dim == 0 {
                    return err("dataset.input_dim", "must be >= 1".into());
                }
                if !(*spread >= 0.0) {
                    return err("dataset.spread", format!("must be >= 0, got {spread}"));
                }
            }
            DatasetSource::Idx { .. } => {}
        }
        if let PublicSource::Synthetic {
            samples_per_class,
            spread,
            ..
        } = &self.public.source
        {
            if *samples_per_class == 0 {
                return err("public.source.samples_per_class", "must be >= 1".into());
            }
            if !(*spread >= 0.0) {
                return err("public.source.spread", format!("must be >= 0, got {spread}"));
            }
        }
        if let PublicSource::ReuseMain { holdout: Some(h) } = self.public.source {
            if h < self.public.size {
                return err(
                    "public.source.holdout",
                    format!("holdout {h} is smaller than public.size {}", self.public.size),
                );
            }
        }
        match self.partition {
            PartitionConfig::LabelSkew { labels_per_client: 0 } => {
                return err("partition.labels_per_client", "must be >= 1".into());
            }
            PartitionConfig::Dirichlet { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                return err("partition.alpha", format!("must be larger than 0, got {alpha}"));
            }
            _ => {}
        }
        if self.threads == 0 {
            return err("threads", "must be >= 1".into());
        }
        let positive_int = [
            ("training.rounds", t.rounds),
            ("training.local_epochs", t.local_epochs),
            ("training.private_batch_size", t.private_batch_size),
            ("training.public_batch_size", t.public_batch_size),
        ];
        for (key, v) in positive_int {
            if v == 0 {
                return err(key, "must be >= 1".into());
            }
        }
        let positive = [
            ("training.lr_local", t.lr_local),
            ("training.lr_distill", t.lr_distill),
            ("training.temperature", t.temperature),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return err(key, format!("must be larger than 0, got {v}"));
            }
        }
        let non_negative = [
            ("training.coeff_lr", t.coeff_lr),
            ("training.lambda", t.lambda),
            ("training.rho", t.rho),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return err(key, format!("must not be negative, got {v}"));
            }
        }
        if !(t.sample_rate > 0.0 && t.sample_rate <= 1.0) {
            return err("training.sample_rate", format!("must be in (0, 1], got {}", t.sample_rate));
        }
        if self.algorithm == Algorithm::Topkpfl && !(1..=self.clients).contains(&t.top_k) {
            return err(
                "training.top_k",
                format!("must be in [1, {}], got {}", self.clients, t.top_k),
            );
        }
        Ok(())
    }

    /// Layer widths for every client, in client order.
    pub fn architectures(&self, input_dim: usize, num_classes: usize) -> Vec<Vec<usize>> {
        self.model_groups
            .iter()
            .flat_map(|g| {
                let mut dims = vec![input_dim];
                dims.extend(&g.hidden);
                dims.push(num_classes);
                std::iter::repeat_n(dims, g.count)
            })
            .collect()
    }

    pub fn sim_config(&self) -> SimConfig {
        let t = &self.training;
        SimConfig {
            algorithm: self.algorithm,
            rounds: t.rounds,
            local_epochs: t.local_epochs,
            distill_steps: t.distill_steps,
            private_batch_size: t.private_batch_size,
            public_batch_size: t.public_batch_size,
            public_size: self.public.size,
            public_labeled: self.public.labeled,
            lr_local: t.lr_local,
            lr_distill: t.lr_distill,
            knowledge: KnowledgeHyper {
                lambda: t.lambda,
                rho: t.rho,
                temperature: t.temperature,
                coeff_lr: t.coeff_lr,
                top_k: t.top_k,
                ..KnowledgeHyper::default()
            },
            sample_rate: t.sample_rate,
            finetune_epochs: t.finetune_epochs,
            normalize_coefficients: self.flags.normalize_coefficients,
            public_resample_each_round: self.flags.public_resample_each_round,
            threads: self.threads,
            seed: self.seed,
        }
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        key: String::new(),
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    ExperimentConfig::from_toml(&text)
}

/// The field named in messages such as "unknown field `x`, expected ...".
fn quoted_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

fn find_key_after(text: &str, from: usize, name: &str) -> Option<usize> {
    text.lines()
        .enumerate()
        .skip(from.saturating_sub(1))
        .find(|(_, l)| {
            l.trim()
                .strip_prefix(name)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|(i, _)| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line where a dotted key is set, falling back to its closest
/// parent that appears in the file.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let mut parts: Vec<&str> = key.split('.').collect();
    while !parts.is_empty() {
        let (table, name) = parts.split_at(parts.len() - 1);
        let table = table.join(".");
        if let Some(line) = find_assignment(text, &table, name[0]) {
            return Some(line);
        }
        let whole = parts.join(".");
        if let Some(line) = find_header(text, &whole) {
            return Some(line);
        }
        parts.pop();
    }
    None
}

fn find_header(text: &str, table: &str) -> Option<usize> {
    text.lines()
        .position(|l| header_name(l.trim()).is_some_and(|h| h == table))
        .map(|i| i + 1)
}

fn header_name(line: &str) -> Option<&str> {
    let line = line.split('#').next()?.trim();
    let inner = line.strip_prefix("[[").and_then(|l| l.strip_suffix("]]"));
    inner
        .or_else(|| line.strip_prefix('[').and_then(|l| l.strip_suffix(']')))
        .map(str::trim)
}

fn find_assignment(text: &str, table: &str, name: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = header_name(line) {
            current = h.to_string();
            continue;
        }
        if current != table {
            continue;
        }
        if let Some(rest) = line.strip_prefix(name) {
            if rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    None
}
