//! Versioned JSON checkpoint: topology, parameters, optimizer state, epoch
//! counter, rng state, and the metadata needed to rank and resume without
//! the original invocation. Floats serialize with the shortest
//! round-tripping representation, so save/load is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Topology;
use crate::numerics::Standardizer;
use crate::objective::LossConfig;
use crate::trainer::{Mode, PhaseEpochs, TrainState};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub topology: Topology,
    pub mode: Mode,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub phase_epochs: PhaseEpochs,
    pub seed: u64,
    pub state: TrainState,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Standardization record fitted on the training data, when used.
    pub standardizer: Option<Standardizer>,
}

impl Checkpoint {
    fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} unsupported (expected {})",
                self.version, CHECKPOINT_VERSION
            )));
        }
        if !self.state.params.matches(&self.topology) {
            return Err(Error::Data(
                "corrupt checkpoint: parameters do not match topology".into(),
            ));
        }
        if !self.state.params.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        if self.feature_names.len() != self.topology.input_dim {
            return Err(Error::Data(format!(
                "corrupt checkpoint: {} feature names for input dimension {}",
                self.feature_names.len(),
                self.topology.input_dim
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    serde_json::to_writer(BufWriter::new(file), checkpoint)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)?;
    let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Data(format!("corrupt checkpoint {}: {e}", path.display())))?;
    checkpoint.validate()?;
    Ok(checkpoint)
}
