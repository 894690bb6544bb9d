use crate::error::{Error, Result};

/// Iterations after which the SR learning rate is halved.
pub const SR_DECAY_STEPS: [usize; 4] = [5_000, 10_000, 20_000, 30_000];

/// Step decay: `base_lr · 0.5^k` with `k` the number of milestones reached.
pub fn lr_schedule_sr(base_lr: f64, iteration: usize) -> f64 {
    let k = SR_DECAY_STEPS.iter().filter(|&&m| m <= iteration).count();
    base_lr * 0.5f64.powi(k as i32)
}

/// Constant for the first half of training, then linear decay to zero at `total`.
pub fn lr_schedule_domain(base_lr: f64, epoch: usize, total: usize) -> Result<f64> {
    if epoch > total {
        return Err(Error::invalid(format!(
            "epoch {epoch} is past the end of training ({total})"
        )));
    }
    let hold = total / 2;
    if epoch < hold {
        Ok(base_lr)
    } else {
        Ok(base_lr * (total - epoch) as f64 / (total - hold) as f64)
    }
}
