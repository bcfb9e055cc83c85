//! Experiment configuration (TOML, or JSON for resolved configs).
//!
//! Every field except `dataset`, `method` and `optim` has a default; the
//! resolved configuration written next to each run has all of them filled in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::BlobSpec;
use crate::error::{Error, Result};
use crate::model::{Activation, ModelConfig};
use crate::noise::{NoiseKind, NoisePlan};
use crate::train::{MethodConfig, OptimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    /// A `f_0,...,f_{d-1},clean` file; its last `n_test` rows form the test set.
    CsvPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_dataset_kind")]
    pub kind: DatasetKind,
    /// Training rows (blobs only).
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_spread")]
    pub cluster_spread: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn default_dataset_kind() -> DatasetKind {
    DatasetKind::Blobs
}
fn default_n() -> usize {
    2000
}
fn default_n_test() -> usize {
    2000
}
fn default_dim() -> usize {
    10
}
fn default_classes() -> usize {
    5
}
fn default_spread() -> f64 {
    1.0
}
fn default_separation() -> f64 {
    2.0
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Blobs,
            n: default_n(),
            n_test: default_n_test(),
            dim: default_dim(),
            classes: default_classes(),
            cluster_spread: default_spread(),
            separation: default_separation(),
            seed: 0,
            path: None,
        }
    }
}

impl DatasetConfig {
    pub fn blob_spec(&self) -> BlobSpec {
        BlobSpec {
            dim: self.dim,
            classes: self.classes,
            spread: self.cluster_spread,
            separation: self.separation,
            seed: self.seed,
        }
    }
}

/// Network shape; input width and class count come from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_init_scale")]
    pub weight_init_scale: f64,
}

fn default_hidden() -> usize {
    32
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_init_scale() -> f64 {
    1.0
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            hidden_dim: default_hidden(),
            activation: default_activation(),
            weight_init_scale: default_init_scale(),
        }
    }
}

/// `B × T` grid for `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_grid_b")]
    pub growth: Vec<f64>,
    #[serde(default = "default_grid_t")]
    pub temperature: Vec<f64>,
}

fn default_grid_b() -> Vec<f64> {
    vec![20.0, 16.0, 12.0, 8.0]
}
fn default_grid_t() -> Vec<f64> {
    vec![1.0, 0.8, 0.6, 0.4]
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            growth: default_grid_b(),
            temperature: default_grid_t(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Trust of the constant (Boot-soft) scheme.
    #[serde(default = "default_constant_trust")]
    pub constant_trust: f64,
}

fn default_constant_trust() -> f64 {
    0.5
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            constant_trust: default_constant_trust(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds weight initialisation and minibatch shuffling.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub noise: NoisePlan,
    pub method: MethodConfig,
    #[serde(default)]
    pub model: ModelSection,
    pub optim: OptimConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}
fn default_snapshot_every() -> u64 {
    50
}

impl ExperimentConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.dataset.dim,
            hidden_dim: self.model.hidden_dim,
            classes: self.dataset.classes,
            weight_init_scale: self.model.weight_init_scale,
            activation: self.model.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.dim == 0 {
            return Err(Error::config("dataset.dim", "must be >= 1"));
        }
        if d.classes < 2 {
            return Err(Error::config("dataset.classes", "must be >= 2"));
        }
        if d.n_test == 0 {
            return Err(Error::config("dataset.n_test", "must be >= 1"));
        }
        match d.kind {
            DatasetKind::Blobs => {
                if d.n == 0 {
                    return Err(Error::config("dataset.n", "must be >= 1"));
                }
                if !(d.cluster_spread.is_finite() && d.cluster_spread >= 0.0) {
                    return Err(Error::config("dataset.cluster_spread", "must be >= 0"));
                }
                if !d.separation.is_finite() {
                    return Err(Error::config("dataset.separation", "must be finite"));
                }
            }
            DatasetKind::CsvPath => {
                if d.path.is_none() {
                    return Err(Error::config("dataset.path", "required for csv_path datasets"));
                }
            }
        }
        let n = &self.noise;
        if !(0.0..=1.0).contains(&n.rate) {
            return Err(Error::config("noise.rate", "must lie in [0, 1]"));
        }
        if n.kind == NoiseKind::Asymmetric && n.pairs.is_empty() && n.rate > 0.0 {
            return Err(Error::config("noise.pairs", "asymmetric noise needs at least one pair"));
        }
        if !(self.model.weight_init_scale.is_finite() && self.model.weight_init_scale >= 0.0) {
            return Err(Error::config("model.weight_init_scale", "must be >= 0"));
        }
        self.optim.validate()?;
        self.method.validate(self.optim.total_iters)?;
        if self.sweep.growth.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::config("sweep.growth", "entries must be > 0"));
        }
        if self
            .sweep
            .temperature
            .iter()
            .any(|t| !(*t > 0.0 && *t <= 1.0))
        {
            return Err(Error::config("sweep.temperature", "entries must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.compare.constant_trust) {
            return Err(Error::config("compare.constant_trust", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Parse TOML text, reporting the dotted path of the offending field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(field, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(field, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load `.json` files as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to TOML")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises to JSON")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{LocalTrust, LossName};

    const MINIMAL: &str = r#"
[method]
kind = "proselflc"
at = true
temperature = 0.5

[optim]
lr0 = 0.1
batch_size = 64
total_iters = 1000
lr_decay_iters = [500, 750]
"#;

    #[test]
    fn defaults_are_materialised() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.method.kind, LossName::Proselflc);
        assert_eq!(cfg.method.inflection, 0.5);
        assert_eq!(cfg.method.local_trust, LocalTrust::ConfAll);
        assert_eq!(cfg.optim.momentum, 0.9);
        assert_eq!(cfg.optim.lr_decay_factor, 10.0);
        assert_eq!(cfg.snapshot_every, 50);
        assert_eq!(cfg.model.hidden_dim, 32);
        assert_eq!(cfg.sweep.temperature, vec![1.0, 0.8, 0.6, 0.4]);
    }

    #[test]
    fn round_trips_through_both_formats() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.noise.pairs = vec![(0, 1), (2, 3)];
        cfg.dataset.path = Some("x.csv".into());
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("batch_size = 64", "batch_size = \"many\"");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "optim.batch_size"),
            other => panic!("unexpected {other:?}"),
        }
        let unknown = format!("{MINIMAL}\n[model]\nwidth = 3\n");
        match ExperimentConfig::from_toml(&unknown) {
            Err(Error::Config { field, message }) => {
                assert!(field.starts_with("model"), "{field}");
                assert!(message.contains("width"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let range = MINIMAL.replace("temperature = 0.5", "temperature = 1.5");
        match ExperimentConfig::from_toml(&range) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "method.temperature"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_required_section() {
        let err = ExperimentConfig::from_toml("[method]\nkind = \"cce\"\n").unwrap_err();
        assert!(err.is_config());
    }
}
