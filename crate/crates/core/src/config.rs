//! Run configuration: a TOML file carrying per-dataset settings
//! (topology, activation, learning_rate, lambda1, lambda2, mu1, mu2,
//! epochs, ...), merged with CLI flag overrides into a `TrainConfig`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{AnnClassifierConfig, ProtocolOptions, DEFAULT_H_GRID};
use crate::network::Topology;
use crate::objective::LossConfig;
use crate::trainer::{Mode, PhaseEpochs, TrainConfig};

/// Raw file contents. Every field optional; resolution applies defaults and
/// reports missing required keys by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Hidden-layer chain like "d-100-d" or "d-500-2-500-d".
    pub topology: Option<String>,
    /// Hidden activation; only "tanh" is supported.
    pub activation: Option<String>,
    pub learning_rate: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    /// Total epochs; main phase = epochs − pretrain − warmup.
    pub epochs: Option<usize>,
    pub pretrain_epochs: Option<usize>,
    pub warmup_epochs: Option<usize>,
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<usize>,
    pub freeze_dense_in_warmup: Option<bool>,
    /// Classifier settings for evaluation commands.
    pub h_grid: Option<Vec<usize>>,
    pub ann_learning_rate: Option<f64>,
    pub ann_epochs: Option<usize>,
}

pub fn load_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Parses a topology chain such as "d-100-d", "d->250->d", or
/// "d-500-2-500-d" into the interior hidden widths.
pub fn parse_topology_chain(s: &str) -> Result<Vec<usize>> {
    let tokens: Vec<&str> = s
        .split(|c: char| c == '-' || c == '>' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.len() < 3 || !tokens.first().unwrap().eq_ignore_ascii_case("d")
        || !tokens.last().unwrap().eq_ignore_ascii_case("d")
    {
        return Err(Error::Config(format!(
            "topology '{s}' must look like d-<width>-...-d"
        )));
    }
    tokens[1..tokens.len() - 1]
        .iter()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Config(format!("topology width '{t}' is not a positive integer")))
        })
        .collect()
}

/// CLI-level overrides that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
}

/// Fully resolved run settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub train: TrainConfig,
    pub hidden_chain: Vec<usize>,
    pub h_grid: Vec<usize>,
    pub ann: AnnClassifierConfig,
}

impl ResolvedConfig {
    pub fn protocol_options(&self) -> ProtocolOptions {
        ProtocolOptions {
            h_grid: self.h_grid.clone(),
            ann: self.ann,
            validation_carve: 0.2,
        }
    }
}

fn require<T>(value: Option<T>, key: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("missing config key: {key}")))
}

/// Merges file and overrides against the defaults (μ₁=0.6, μ₂=0.1,
/// λ₁=λ₂=0.001, lr=0.001, phases 10/10/1000, mode sabce, seed 0).
/// `input_dim` comes from the loaded dataset. `topology` is required.
pub fn resolve(file: &FileConfig, overrides: &Overrides, input_dim: usize) -> Result<ResolvedConfig> {
    if let Some(act) = &file.activation {
        if !act.eq_ignore_ascii_case("tanh") {
            return Err(Error::Config(format!(
                "unsupported activation '{act}' (only tanh)"
            )));
        }
    }
    let hidden_chain = parse_topology_chain(&require(file.topology.clone(), "topology")?)?;
    let mode = match (&overrides.mode, &file.mode) {
        (Some(m), _) => *m,
        (None, Some(s)) => Mode::parse(s)?,
        (None, None) => Mode::Sabce,
    };
    let pretrain = file.pretrain_epochs.unwrap_or(10);
    let warmup = file.warmup_epochs.unwrap_or(10);
    let main = match file.epochs {
        Some(total) => {
            if total < pretrain + warmup {
                return Err(Error::Config(format!(
                    "epochs {total} smaller than pretrain {pretrain} + warmup {warmup}"
                )));
            }
            total - pretrain - warmup
        }
        None => 1000,
    };
    let topology = Topology::from_hidden_chain(input_dim, &hidden_chain, mode != Mode::Bce)?;
    let loss = LossConfig {
        mu1: overrides.mu1.or(file.mu1).unwrap_or(0.6),
        mu2: overrides.mu2.or(file.mu2).unwrap_or(0.1),
        lambda1: overrides.lambda1.or(file.lambda1).unwrap_or(0.001),
        lambda2: overrides.lambda2.or(file.lambda2).unwrap_or(0.001),
        penalty_active: true,
    };
    let train = TrainConfig {
        topology,
        loss,
        learning_rate: file.learning_rate.unwrap_or(0.001),
        phase_epochs: PhaseEpochs {
            pretrain,
            spl_warmup: warmup,
            main,
        },
        mode,
        seed: overrides.seed.or(file.seed).unwrap_or(0),
        checkpoint_every: file.checkpoint_every.unwrap_or(0),
        freeze_dense_in_warmup: file.freeze_dense_in_warmup.unwrap_or(false),
    };
    train.validate()?;
    let ann = AnnClassifierConfig {
        learning_rate: file.ann_learning_rate.unwrap_or(0.01),
        epochs: file.ann_epochs.unwrap_or(300),
        ..Default::default()
    };
    Ok(ResolvedConfig {
        train,
        hidden_chain,
        h_grid: file.h_grid.clone().unwrap_or_else(|| DEFAULT_H_GRID.to_vec()),
        ann,
    })
}
