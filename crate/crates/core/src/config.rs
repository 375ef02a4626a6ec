//! Training configuration and ablation modes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::nets::ModelDims;

/// Which terms of the objective are trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Softmax head on source data only.
    #[serde(rename = "NO_DA")]
    NoDa,
    /// Softmax head plus the adversarial term.
    #[serde(rename = "GAN_ONLY")]
    GanOnly,
    /// Kernel hinge objective on source data.
    #[serde(rename = "KERNEL_S")]
    KernelS,
    /// Source hinges plus the target hinge.
    #[serde(rename = "KERNEL_ST")]
    KernelSt,
    /// Source and target hinges plus the adversarial term.
    #[serde(rename = "FULL")]
    Full,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::NoDa, Mode::GanOnly, Mode::KernelS, Mode::KernelSt, Mode::Full];

    pub fn name(self) -> &'static str {
        match self {
            Mode::NoDa => "NO_DA",
            Mode::GanOnly => "GAN_ONLY",
            Mode::KernelS => "KERNEL_S",
            Mode::KernelSt => "KERNEL_ST",
            Mode::Full => "FULL",
        }
    }

    /// Kernel classifier rather than the softmax head.
    pub fn uses_kernel(self) -> bool {
        matches!(self, Mode::KernelS | Mode::KernelSt | Mode::Full)
    }

    pub fn uses_target_hinge(self) -> bool {
        matches!(self, Mode::KernelSt | Mode::Full)
    }

    pub fn uses_adversary(self) -> bool {
        matches!(self, Mode::GanOnly | Mode::Full)
    }

    /// Whether a training step needs target latents at all.
    pub fn uses_target(self) -> bool {
        self.uses_target_hinge() || self.uses_adversary()
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s) || m.name().replace('_', "-").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown mode {s:?}")))
    }
}

/// Decision threshold on `w·φ − ρ` (or on the head's logit difference).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    /// The F1-maximizing threshold on the source validation split.
    Calibrated,
}

const CALIBRATED: &str = "calibrated";

impl Threshold {
    pub fn fixed(self) -> Option<f64> {
        match self {
            Threshold::Fixed(t) => Some(t),
            Threshold::Calibrated => None,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Fixed(t) => write!(f, "{t}"),
            Threshold::Calibrated => f.write_str(CALIBRATED),
        }
    }
}

impl FromStr for Threshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case(CALIBRATED) {
            return Ok(Threshold::Calibrated);
        }
        match t.to_ascii_lowercase().as_str() {
            "-inf" | "-infinity" => Ok(Threshold::Fixed(f64::NEG_INFINITY)),
            "inf" | "+inf" | "infinity" => Ok(Threshold::Fixed(f64::INFINITY)),
            _ => t
                .parse::<f64>()
                .ok()
                .filter(|v| !v.is_nan())
                .map(Threshold::Fixed)
                .ok_or_else(|| Error::Validation(format!("threshold must be a number or \"{CALIBRATED}\", got {s:?}"))),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Fixed(t) if t.is_finite() => s.serialize_f64(*t),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(Threshold::Fixed(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Every knob of a training run. Serialized field names are the config-file
/// keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// LSTM hidden size per direction.
    pub hidden: usize,
    /// Statement embedding size.
    pub embed: usize,
    /// Statements kept per function.
    pub max_len: usize,
    /// Latent size produced by the generator.
    pub latent: usize,
    /// Random Fourier frequencies; the feature dimension is twice this.
    pub rff_features: usize,
    /// Weight of the target hinge.
    pub lambda: f64,
    /// Weight of the adversarial term.
    pub alpha: f64,
    pub lr: f64,
    /// Functions per domain in each step.
    pub batch: usize,
    pub clip_norm: f64,
    pub epochs: usize,
    pub n_runs: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Kernel width; chosen by the median heuristic when absent.
    pub gamma: Option<f64>,
    pub threshold: Threshold,
    /// Width of the discriminator and softmax-head hidden layers.
    pub mlp_hidden: usize,
    /// Vocabulary frequency cutoff.
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 128,
            embed: 150,
            max_len: 100,
            latent: 128,
            rff_features: 512,
            lambda: 1e-2,
            alpha: 1e-1,
            lr: 1e-3,
            batch: 100,
            clip_norm: 5.0,
            epochs: 20,
            n_runs: 5,
            seed: 0,
            mode: Mode::Full,
            gamma: None,
            threshold: Threshold::Calibrated,
            mlp_hidden: 300,
            min_count: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("max_len", self.max_len),
            ("latent", self.latent),
            ("rff_features", self.rff_features),
            ("batch", self.batch),
            ("epochs", self.epochs),
            ("n_runs", self.n_runs),
            ("mlp_hidden", self.mlp_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [("lr", self.lr), ("clip_norm", self.clip_norm)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda", self.lambda), ("alpha", self.alpha)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.mode.uses_target_hinge() && self.lambda <= 0.0 {
            return Err(Error::Validation(format!("mode {} needs lambda > 0", self.mode)));
        }
        if self.mode.uses_adversary() && self.alpha <= 0.0 {
            return Err(Error::Validation(format!("mode {} needs alpha > 0", self.mode)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Validation(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }

    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            vocab,
            embed: self.embed,
            hidden: self.hidden,
            latent: self.latent,
            mlp_hidden: self.mlp_hidden,
        }
    }
}
