use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::scheduler::TrainerCheckpoint;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    generation: u64,
    batch_index: usize,
    step_within_batch: usize,
    accumulated_state: String,
}

pub fn encode_checkpoint(ckpt: &TrainerCheckpoint) -> String {
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        generation: ckpt.generation,
        batch_index: ckpt.batch_index,
        step_within_batch: ckpt.step_within_batch,
        accumulated_state: STANDARD.encode(&ckpt.accumulated_state),
    };
    serde_json::to_string_pretty(&file).expect("checkpoint header serializes")
}

pub fn decode_checkpoint(text: &str) -> Result<TrainerCheckpoint, TrainerError> {
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| TrainerError::BadCheckpoint(e.to_string()))?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(TrainerError::BadCheckpoint(format!("unsupported format_version {}", file.format_version)));
    }
    let state = STANDARD
        .decode(file.accumulated_state)
        .map_err(|e| TrainerError::BadCheckpoint(e.to_string()))?;
    Ok(TrainerCheckpoint {
        batch_index: file.batch_index,
        step_within_batch: file.step_within_batch,
        accumulated_state: state,
        generation: file.generation,
    })
}

pub fn write_checkpoint(ckpt: &TrainerCheckpoint, path: &Path) -> Result<(), TrainerError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode_checkpoint(ckpt))?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<TrainerCheckpoint, TrainerError> {
    decode_checkpoint(&fs::read_to_string(path)?)
}
