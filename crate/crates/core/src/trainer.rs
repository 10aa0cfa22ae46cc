//! The three-phase training schedule with per-epoch adaptive centroid
//! sparsification, plus BCE/SBCE modes for ablation.
//!
//! Phase 1 (pretrain): SPL weights frozen at 1, no penalty.
//! Phase 2 (warmup): SPL trains too (all parameters by default), no penalty.
//! Phase 3 (main): elastic-net penalty on; in adaptive mode the centroid
//! targets are re-sparsified from the current SPL weights at the start of
//! every epoch. One full-batch Adam step per epoch throughout.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{compute_centroids, CentroidSet, Dataset};
use crate::error::{Error, Result};
use crate::network::{init_params, ModelParams, Topology};
use crate::numerics::{Rng, RngState};
use crate::objective::{loss_and_grad, LossBreakdown, LossConfig};
use crate::optimizer::{adam_step, AdamState};

/// Which member of the model family to train.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Bce,
    Sbce,
    Sabce,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(Mode::Bce),
            "sbce" => Ok(Mode::Sbce),
            "sabce" => Ok(Mode::Sabce),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected bce, sbce, or sabce)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Bce => write!(f, "bce"),
            Mode::Sbce => write!(f, "sbce"),
            Mode::Sabce => write!(f, "sabce"),
        }
    }
}

/// Epochs per phase. The defaults follow the published schedule:
/// 10 pretrain, 10 SPL warmup, 1000 main.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseEpochs {
    pub pretrain: usize,
    pub spl_warmup: usize,
    pub main: usize,
}

impl Default for PhaseEpochs {
    fn default() -> Self {
        PhaseEpochs {
            pretrain: 10,
            spl_warmup: 10,
            main: 1000,
        }
    }
}

impl PhaseEpochs {
    pub fn total(&self) -> usize {
        self.pretrain + self.spl_warmup + self.main
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Pretrain,
    Warmup,
    Main,
}

impl PhaseEpochs {
    fn phase_of(&self, epoch: usize) -> Phase {
        if epoch < self.pretrain {
            Phase::Pretrain
        } else if epoch < self.pretrain + self.spl_warmup {
            Phase::Warmup
        } else {
            Phase::Main
        }
    }
}

/// Full training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub topology: Topology,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub phase_epochs: PhaseEpochs,
    pub mode: Mode,
    pub seed: u64,
    /// Snapshot interval for divergence rescue and resume; 0 disables.
    pub checkpoint_every: usize,
    /// Train only the SPL during phase 2 instead of all parameters.
    pub freeze_dense_in_warmup: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        match self.mode {
            Mode::Bce if self.topology.spl_enabled => Err(Error::Config(
                "bce mode requires a topology without the sparse layer".into(),
            )),
            Mode::Sbce | Mode::Sabce if !self.topology.spl_enabled => Err(Error::Config(
                "sbce/sabce modes require the sparse layer enabled".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Resumable training state, embedded in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub next_epoch: usize,
    pub params: ModelParams,
    pub adam: AdamState,
    pub rng: RngState,
}

/// Outcome of a run: per-epoch loss history over the epochs executed in this
/// call, final parameters and centroids, wall clock, and a config echo.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<LossBreakdown>,
    pub params: ModelParams,
    pub centroids: CentroidSet,
    pub state: TrainState,
    pub wall_seconds: f64,
    pub mode: Mode,
    pub config: TrainConfig,
}

/// Trains from a fresh initialization.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    train_from(ds, cfg, None)
}

/// Trains, optionally resuming from a saved state. Resumed runs replay the
/// remaining epochs exactly as the uninterrupted run would have executed
/// them.
pub fn train_from(ds: &Dataset, cfg: &TrainConfig, start: Option<TrainState>) -> Result<TrainReport> {
    cfg.validate()?;
    if ds.d() != cfg.topology.input_dim {
        return Err(Error::Shape(format!(
            "dataset has {} features, topology expects {}",
            ds.d(),
            cfg.topology.input_dim
        )));
    }
    let wall = Instant::now();
    let mut centroids = compute_centroids(ds);
    let (mut params, mut adam, rng, start_epoch) = match start {
        Some(state) => {
            if !state.params.matches(&cfg.topology) {
                return Err(Error::Shape("resume state does not match topology".into()));
            }
            let rng = Rng::restore(&state.rng);
            (state.params, state.adam, rng, state.next_epoch)
        }
        None => {
            let mut rng = Rng::new(cfg.seed);
            let params = init_params(&cfg.topology, &mut rng);
            let adam = AdamState::new(cfg.learning_rate, &params);
            (params, adam, rng, 0)
        }
    };

    let total = cfg.phase_epochs.total();
    let mut history = Vec::with_capacity(total.saturating_sub(start_epoch));
    let mut last_snapshot: Option<Box<TrainState>> = None;

    for epoch in start_epoch..total {
        let phase = cfg.phase_epochs.phase_of(epoch);
        // Adaptive centroid update: at the start of every main-phase epoch
        // the targets become base ⊙ θ_spl using the weights reached by the
        // previous epoch's step. Recomputed on resume, so no drift.
        if cfg.mode == Mode::Sabce && phase == Phase::Main {
            let spl = params.spl.clone();
            centroids.readapt(&spl, epoch);
        }
        let penalty_on = phase == Phase::Main && cfg.mode != Mode::Bce;
        let eff_cfg = cfg.loss.with_penalty(penalty_on);
        let spl_trainable = cfg.mode != Mode::Bce && phase != Phase::Pretrain;

        let (breakdown, mut gradient) =
            match loss_and_grad(&cfg.topology, &params, ds, &centroids, &eff_cfg) {
                Ok(ok) => ok,
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        epoch,
                        last_state: last_snapshot,
                    })
                }
                Err(other) => return Err(other),
            };
        if !breakdown.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_state: last_snapshot,
            });
        }
        if !spl_trainable {
            for g in &mut gradient.spl {
                *g = 0.0;
            }
        }
        if cfg.freeze_dense_in_warmup && phase == Phase::Warmup {
            for layer in &mut gradient.layers {
                for g in layer.w.data_mut() {
                    *g = 0.0;
                }
                for g in &mut layer.b {
                    *g = 0.0;
                }
            }
        }
        if let Err(e) = adam_step(&mut params, &gradient, &mut adam) {
            return match e {
                Error::NonFinite(_) => Err(Error::Diverged {
                    epoch,
                    last_state: last_snapshot,
                }),
                other => Err(other),
            };
        }
        if !params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_state: last_snapshot,
            });
        }
        history.push(breakdown);

        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
            last_snapshot = Some(Box::new(TrainState {
                next_epoch: epoch + 1,
                params: params.clone(),
                adam: adam.clone(),
                rng: rng.state(),
            }));
        }
    }

    // Final adapted centroids reflect the final weights in adaptive mode.
    if cfg.mode == Mode::Sabce && cfg.phase_epochs.main > 0 {
        let spl = params.spl.clone();
        centroids.readapt(&spl, total);
    }

    let state = TrainState {
        next_epoch: total,
        params: params.clone(),
        adam,
        rng: rng.state(),
    };
    Ok(TrainReport {
        history,
        params,
        centroids,
        state,
        wall_seconds: wall.elapsed().as_secs_f64(),
        mode: cfg.mode,
        config: cfg.clone(),
    })
}

/// Writes the per-epoch loss history CSV:
/// epoch, reconstruction, bottleneck_pull, centroid_repulsion, l1, l2, total.
pub fn write_history_csv(history: &[LossBreakdown], start_epoch: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "reconstruction",
        "bottleneck_pull",
        "centroid_repulsion",
        "l1_penalty",
        "l2_penalty",
        "total",
    ])?;
    for (i, b) in history.iter().enumerate() {
        w.write_record([
            (start_epoch + i).to_string(),
            b.reconstruction.to_string(),
            b.bottleneck_pull.to_string(),
            b.centroid_repulsion.to_string(),
            b.l1_penalty.to_string(),
            b.l2_penalty.to_string(),
            b.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
