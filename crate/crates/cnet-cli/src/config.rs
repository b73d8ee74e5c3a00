//! Experiment configuration: one JSON file describing the whole pipeline,
//! with defaults for every field and command-line overrides applied on top.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cnet::datapipe::{GroupOrder, Relevancy, SplitPart, SplitSpec};
use cnet::growth::GrowthConfig;
use cnet::netgraph::InitPolicy;
use cnet::numerics::Activation;
use cnet::traincore::TrainConfig;
use cnet::{Error, Result};

/// Environment variable naming the default config file when `--config` is
/// not given.
pub const CONFIG_ENV: &str = "CNET_CONFIG";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Raw CSV with header row, a binary label column and a time column.
    pub raw_csv: PathBuf,
    pub label_column: String,
    pub time_column: String,
    /// Columns dropped on load (besides the label).
    pub drop_columns: Vec<String>,
    /// Rows with time < boundary form chunk 1, the rest chunk 2.
    pub chunk_boundary: f64,
    /// Split parts per chunk; the first part is the training part.
    pub split: Vec<SplitPart>,
    pub stratified: bool,
    /// Minority/majority ratio SMOTE rebalances training parts to.
    pub smote_ratio: f64,
    pub smote_k: usize,
    /// Feature range after normalization; fitted on chunk 1's training part.
    pub normalize_lo: f64,
    pub normalize_hi: f64,
    /// Feature grouping for grow-groups.
    pub n_groups: usize,
    pub group_order: GroupOrder,
    pub relevancy: Relevancy,
    /// Hidden layer widths of the initial network.
    pub layer_widths: Vec<usize>,
    pub train: TrainConfig,
    /// Growth knobs (the growth loop reuses `train` for each round).
    pub initial_units: usize,
    pub max_units: usize,
    pub hidden_init: InitPolicy,
    pub output_init: InitPolicy,
    pub activation: Activation,
    pub output_activation: Activation,
    /// Runs averaged per experiment; seeds default to 0..n_runs.
    pub n_runs: usize,
    pub seeds: Option<Vec<u64>>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            raw_csv: PathBuf::from("data/creditcard.csv"),
            label_column: "Class".into(),
            time_column: "Time".into(),
            drop_columns: Vec::new(),
            chunk_boundary: 86_400.0,
            split: vec![
                SplitPart { name: "train".into(), fraction: 0.70 },
                SplitPart { name: "valid".into(), fraction: 0.15 },
                SplitPart { name: "test".into(), fraction: 0.15 },
            ],
            stratified: true,
            smote_ratio: 0.33,
            smote_k: 5,
            normalize_lo: -5.0,
            normalize_hi: 5.0,
            n_groups: 3,
            group_order: GroupOrder::Descending,
            relevancy: Relevancy::PearsonAbs,
            layer_widths: vec![128, 16],
            train: TrainConfig::default(),
            initial_units: 2,
            max_units: 256,
            hidden_init: InitPolicy::default_hidden(),
            output_init: InitPolicy::Zeros,
            activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
            n_runs: 10,
            seeds: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub n_runs: Option<usize>,
    pub max_epochs: Option<usize>,
    pub learning_rate: Option<f64>,
}

impl ExperimentConfig {
    /// Loads the config from `--config`, then `$CNET_CONFIG`, then built-in
    /// defaults, and applies flag overrides on top.
    pub fn resolve(explicit: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| env::var_os(CONFIG_ENV).map(PathBuf::from));
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(&p)
                    .map_err(|e| Error::io(p.display().to_string(), e))?;
                serde_json::from_str(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(dir) = &overrides.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(n) = overrides.n_runs {
            cfg.n_runs = n;
            cfg.seeds = None; // regenerate 0..n
        }
        if let Some(e) = overrides.max_epochs {
            cfg.train.max_epochs = e;
        }
        if let Some(lr) = overrides.learning_rate {
            cfg.train.learning_rate = lr;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.split_spec(0)?;
        self.growth_config(0).validate()?;
        if !(0.0..1.0).contains(&self.smote_ratio) || self.smote_ratio == 0.0 {
            return Err(Error::InvalidArgument("smote_ratio must be in (0, 1)".into()));
        }
        if self.smote_k == 0 {
            return Err(Error::InvalidArgument("smote_k must be >= 1".into()));
        }
        if self.normalize_hi <= self.normalize_lo {
            return Err(Error::InvalidArgument(format!(
                "invalid normalization range [{}, {}]",
                self.normalize_lo, self.normalize_hi
            )));
        }
        if !self.chunk_boundary.is_finite() {
            return Err(Error::InvalidArgument("chunk_boundary must be finite".into()));
        }
        if self.n_groups == 0 {
            return Err(Error::InvalidArgument("n_groups must be >= 1".into()));
        }
        if self.layer_widths.is_empty() || self.layer_widths.contains(&0) {
            return Err(Error::InvalidArgument("layer_widths must be non-empty and >= 1".into()));
        }
        if self.seeds().is_empty() {
            return Err(Error::InvalidArgument("need n_runs >= 1 or a non-empty seeds list".into()));
        }
        Ok(())
    }

    /// The run seeds: explicit list, else 0..n_runs.
    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.n_runs as u64).collect(),
        }
    }

    pub fn split_spec(&self, seed: u64) -> Result<SplitSpec> {
        let spec = SplitSpec { parts: self.split.clone(), stratified: self.stratified, seed };
        spec.validate()?;
        Ok(spec)
    }

    /// Growth configuration for one seeded run.
    pub fn growth_config(&self, seed: u64) -> GrowthConfig {
        let mut train = self.train.clone();
        train.seed = seed;
        GrowthConfig {
            train,
            initial_units: self.initial_units,
            max_units: self.max_units,
            hidden_init: self.hidden_init,
            output_init: self.output_init,
            activation: self.activation,
            output_activation: self.output_activation,
        }
    }

    /// Training configuration for one seeded run.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut train = self.train.clone();
        train.seed = seed;
        train
    }

    /// Prepared dataset path for a chunk part, e.g. `out/chunk1_train.json`.
    pub fn chunk_path(&self, chunk: usize, part: &str) -> PathBuf {
        self.output_dir.join(format!("chunk{chunk}_{part}.json"))
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    /// Name of the first (training) split part.
    pub fn train_part(&self) -> &str {
        &self.split[0].name
    }
}
