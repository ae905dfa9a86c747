//! Run configuration: every hyperparameter of a training run, serializable to
//! TOML and addressable by dotted key (`gan.hidden`, `mining.r`, ...).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::AugmentSpec;
use crate::eval::ProbeConfig;
use crate::gan::GanConfig;
use crate::mining::MiningConfig;
use crate::nn::{Activation, LrSchedule};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// `two_moons`, `concentric_circles`, `swiss_roll` or `cifar10`.
    pub kind: String,
    pub n_per_class: usize,
    pub noise: f64,
    /// Size of the generated held-out split, per class.
    pub test_n_per_class: usize,
    /// Directory holding the CIFAR-10 binary batches.
    pub cifar_dir: Option<PathBuf>,
    /// Keep only the first `n` CIFAR training (and `n / 5` test) images.
    pub cifar_limit: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: "two_moons".into(),
            n_per_class: 1000,
            noise: 0.08,
            test_n_per_class: 500,
            cifar_dir: None,
            cifar_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub feature_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            feature_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Neighbors for weighted kNN; `min(200, N/10)` when unset.
    pub knn_k: Option<usize>,
    pub knn_tau: f64,
    /// Neighborhood size of the Euclidean precision baseline.
    pub baseline_k: usize,
    pub linear_probe: bool,
    pub probe: ProbeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            knn_k: None,
            knn_tau: 0.07,
            baseline_k: 10,
            linear_probe: true,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub encoder: EncoderConfig,
    pub rounds: usize,
    pub epochs_per_round: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    /// Clear the encoder's momentum buffer at the start of every round.
    pub reset_optimizer_each_round: bool,
    pub tau: f64,
    pub lambda: f64,
    pub eta: f64,
    pub hpe_enabled: bool,
    pub renorm_bank: bool,
    /// Start every round from identity positive sets instead of accumulating.
    pub reset_positives_each_round: bool,
    pub augment: AugmentSpec,
    pub gan: GanConfig,
    pub mining: MiningConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            encoder: EncoderConfig::default(),
            rounds: 4,
            epochs_per_round: 50,
            batch_size: 128,
            lr: LrSchedule::default(),
            momentum: 0.9,
            reset_optimizer_each_round: false,
            tau: 0.07,
            lambda: 0.5,
            eta: 0.5,
            hpe_enabled: true,
            renorm_bank: true,
            reset_positives_each_round: false,
            augment: AugmentSpec::default(),
            gan: GanConfig { hidden: 64, ..GanConfig::default() },
            mining: MiningConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Full-width networks and 128-d features.
    pub fn paper_scale() -> Self {
        let mut c = Self::default();
        c.encoder = EncoderConfig { hidden: vec![512, 256], feature_dim: 128, ..EncoderConfig::default() };
        c.gan.hidden = 256;
        c.epochs_per_round = 200;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.encoder.feature_dim == 0 || self.encoder.hidden.contains(&0) {
            return bad("encoder widths must be positive".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.dataset.n_per_class == 0 {
            return bad("dataset.n_per_class must be positive".into());
        }
        if self.dataset.noise < 0.0 {
            return bad("dataset.noise must be >= 0".into());
        }
        if !(self.eval.knn_tau > 0.0) || self.eval.baseline_k == 0 {
            return bad("eval.knn_tau and eval.baseline_k must be positive".into());
        }
        self.lr.validate()?;
        self.gan.validate()?;
        self.mining.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the TOML
    /// form; values are TOML literals, with bare words taken as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Table::try_from(self).map_err(|e| Error::Serde(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_path(&mut root, key.trim(), parse_value(raw.trim()))?;
        }
        root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Shorthand for a single override.
    pub fn with(&self, key: &str, value: impl std::fmt::Display) -> Result<Self> {
        self.with_overrides(&[format!("{key}={value}")])
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty override key `{key}`")))?;
    let mut table = root;
    for p in parts {
        table = match table.get_mut(p) {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(Error::Config(format!("unknown config section `{p}` in `{key}`"))),
        };
    }
    // Unset Option fields are absent from the table; unknown leaves are
    // rejected later by deserialization.
    let value = match (table.get(last), value) {
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    table.insert(last.to_string(), value);
    Ok(())
}
