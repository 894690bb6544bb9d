//! The two training stages, their optimizer and schedules, batch sampling
//! and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod data;
mod domain;
mod schedule;
mod sr;

use std::path::{Path, PathBuf};

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_VERSION};
pub use config::{Stage, TrainConfig};
pub use data::{sample_domain_batch, sample_sr_batch, DomainBatch, SrBatch};
pub use domain::{generate_lr_dataset, train_domain, train_domain_with, DomainTraceRow, DomainTrainer};
pub use schedule::{lr_schedule_domain, lr_schedule_sr, SR_DECAY_STEPS};
pub use sr::{train_sr, train_sr_with, SrTraceRow, SrTrainer};

use crate::error::{Error, Result};

/// Where a run writes its side outputs.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Periodic checkpoints go here (created if missing); `None` disables them.
    pub checkpoint_dir: Option<PathBuf>,
    /// Loss trace CSV written at the end of the run.
    pub trace_path: Option<PathBuf>,
}

/// Saves `{dir}/{prefix}_{iteration:07}.ckpt` and deletes all but the newest `keep`.
fn save_rotating(c: &Checkpoint, dir: &Path, prefix: &str, keep: usize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{prefix}_{:07}.ckpt", c.iteration));
    c.save(&path)?;
    let mut existing: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&format!("{prefix}_")) && n.ends_with(".ckpt"))
        })
        .collect();
    existing.sort();
    let excess = existing.len().saturating_sub(keep.max(1));
    for old in &existing[..excess] {
        std::fs::remove_file(old).map_err(|e| Error::io(old, e))?;
    }
    Ok(path)
}

/// Saves the current (last good) state and builds the abort error.
fn abort(c: &Checkpoint, opts: &TrainOptions, reason: String) -> Error {
    let checkpoint = opts.checkpoint_dir.as_ref().and_then(|dir| {
        let path = dir.join("last_good.ckpt");
        std::fs::create_dir_all(dir).ok()?;
        c.save(&path).ok().map(|_| path)
    });
    Error::TrainingAborted {
        iteration: c.iteration,
        reason,
        checkpoint,
    }
}
