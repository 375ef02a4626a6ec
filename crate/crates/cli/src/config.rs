//! Run configuration: a JSON document holding every training knob plus file
//! paths. Command-line flags override the file; the file overrides defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use dam2p::config::{Mode, Threshold, TrainConfig};
use dam2p::trainer::SweepGrid;
use dam2p::{Error, Result};
use serde::Serialize;
use serde_json::Value;

/// Environment variable that redirects all outputs.
pub const OUTPUT_DIR_ENV: &str = "DAM2P_OUTPUT_DIR";

const PATH_KEYS: [&str; 5] = ["source", "target", "vocab", "checkpoint", "output_dir"];
const GRID_KEY: &str = "grid";

/// Everything a command needs, after merging file, environment and flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Config {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<SweepGrid>,
}

impl Config {
    /// Parses a config document. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let Value::Object(mut map) = value else {
            return Err(Error::Validation("config must be a JSON object".into()));
        };
        let mut take_path = |key: &str| -> Result<Option<PathBuf>> {
            match map.remove(key) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
                Some(other) => Err(Error::Validation(format!("config key {key} must be a string, got {other}"))),
            }
        };
        let [source, target, vocab, checkpoint, output_dir] = PATH_KEYS.map(&mut take_path);
        let grid = match map.remove(GRID_KEY) {
            None | Some(Value::Null) => None,
            Some(v) => Some(serde_json::from_value(v)?),
        };
        let train: TrainConfig = serde_json::from_value(Value::Object(map))?;
        Ok(Config {
            train,
            source: source?,
            target: target?,
            vocab: vocab?,
            checkpoint: checkpoint?,
            output_dir: output_dir?,
            grid,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_owned(), source: e })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// The single-line form echoed at the top of output files.
    pub fn header(&self) -> String {
        format!("# config: {}", self.to_json())
    }
}

/// Training flags shared by `train`, `ablate` and `sweep`. Each one overrides
/// the same key of the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct TrainFlags {
    /// JSON config file; flags given on the command line win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labeled source-domain dataset (raw or preprocessed JSONL).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target-domain dataset; labels are only used for the held-out test split.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Vocabulary file to use instead of building one from the training splits.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// LSTM hidden size per direction [default: 128].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Statement embedding size [default: 150].
    #[arg(long)]
    pub embed: Option<usize>,
    /// Statements kept per function [default: 100].
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Latent size [default: 128].
    #[arg(long)]
    pub latent: Option<usize>,
    /// Random Fourier frequencies K; features are 2K wide [default: 512].
    #[arg(long)]
    pub rff_features: Option<usize>,
    /// Target hinge weight [default: 0.01].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Adversarial term weight [default: 0.1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Functions per domain in each step [default: 100].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Global gradient-norm clip [default: 5.0].
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Passes over the larger domain [default: 20].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Independent runs per experiment [default: 5].
    #[arg(long)]
    pub n_runs: Option<usize>,
    /// Base random seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// NO_DA, GAN_ONLY, KERNEL_S, KERNEL_ST or FULL [default: FULL].
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Kernel width; median heuristic when unset [default: unset].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Decision threshold: a number, -inf, or "calibrated" [default: calibrated].
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<Threshold>,
    /// Hidden width of the discriminator and softmax head [default: 300].
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    /// Minimum token count for the vocabulary [default: 1].
    #[arg(long)]
    pub min_count: Option<usize>,
}

impl TrainFlags {
    /// Defaults, then the config file, then the environment, then flags.
    pub fn resolve(&self, output_dir_flag: Option<&Path>) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.output_dir = Some(PathBuf::from(dir));
            }
        }
        if let Some(dir) = output_dir_flag {
            cfg.output_dir = Some(dir.to_owned());
        }
        let set = |dst: &mut Option<PathBuf>, src: &Option<PathBuf>| {
            if src.is_some() {
                dst.clone_from(src);
            }
        };
        set(&mut cfg.source, &self.source);
        set(&mut cfg.target, &self.target);
        set(&mut cfg.vocab, &self.vocab);

        let t = &mut cfg.train;
        macro_rules! apply {
            ($($field:ident),*) => { $( if let Some(v) = self.$field.clone() { t.$field = v; } )* };
        }
        apply!(
            hidden, embed, max_len, latent, rff_features, lambda, alpha, lr, batch, clip_norm, epochs, n_runs, seed,
            mode, threshold, mlp_hidden, min_count
        );
        if self.gamma.is_some() {
            t.gamma = self.gamma;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

/// Output directory after all overrides, defaulting to the working directory.
pub fn output_dir(cfg: &Config) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

/// Resolves the output directory for commands without a config file.
pub fn output_dir_from(flag: Option<&Path>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_owned();
    }
    match std::env::var(OUTPUT_DIR_ENV) {
        Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from("."),
    }
}
