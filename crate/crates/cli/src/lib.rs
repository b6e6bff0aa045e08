//! Command implementations behind the `locust` binary.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod render;
pub mod stitch;
pub mod synth;

use locust_core::models::ModelError;
use locust_core::training::TrainError;

/// Input or data problem.
pub const EXIT_DATA: i32 = 2;
/// Checkpoint missing, unreadable or incompatible.
pub const EXIT_CHECKPOINT: i32 = 3;
/// Non-finite loss or gradient during training.
pub const EXIT_DIVERGENCE: i32 = 4;

/// A checkpoint that cannot be used with the current data.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckpointMismatch(pub String);

fn model_code(e: &ModelError) -> Option<i32> {
    match e {
        ModelError::ShapeMismatch { .. }
        | ModelError::MissingTensor(_)
        | ModelError::Checkpoint(_)
        | ModelError::InputMismatch(_) => Some(EXIT_CHECKPOINT),
        _ => None,
    }
}

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<CheckpointMismatch>().is_some() {
            return EXIT_CHECKPOINT;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            match e {
                TrainError::Divergence { .. } => return EXIT_DIVERGENCE,
                TrainError::Model(m) => {
                    if let Some(c) = model_code(m) {
                        return c;
                    }
                }
                _ => {}
            }
        }
        if let Some(c) = cause.downcast_ref::<ModelError>().and_then(model_code) {
            return c;
        }
    }
    EXIT_DATA
}
