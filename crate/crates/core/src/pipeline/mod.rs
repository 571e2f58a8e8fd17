//! Model variants M1-M5 and the student, their training schedules, teacher
//! annotation, and the mini-training-set experiment grid.

mod annotate;
mod bundle;
mod config;
mod grid;
mod train;

pub use annotate::{annotate, assemble_training_union};
pub use bundle::{ModelBundle, ModelParams, StageHistory, Variant};
pub use config::{Hyperparameters, TrainConfig, PRESET_NAMES};
pub use grid::{cell_dir, run_experiment_grid, summarize, CellOutcome, ExperimentPlan, GridResult, FULL, GRID_VARIANTS};
pub use train::{cross_entropy, train_framewise, train_temporal, train_variant, training_loss};

use crate::crf::TagSequence;
use crate::error::Result;
use crate::numkernel::{argmax, Matrix};

/// Labels produced one frame at a time through [`ModelBundle::stream`].
pub fn predict_online(bundle: &ModelBundle, features: &Matrix) -> Result<TagSequence> {
    let mut stream = bundle.stream()?;
    features
        .iter_rows()
        .map(|frame| stream.push(frame).map(|logits| argmax(&logits)))
        .collect()
}
