use super::TrainConfig;
use crate::{Error, Result};

/// Learning rate at `step`: linear ramp from 0 over the warmup, a constant
/// plateau, then a linear decay reaching `lr / lr_decay_steps` on the last step.
pub fn lr_at(step: usize, config: &TrainConfig) -> Result<f64> {
    let total = config.total_steps;
    if step >= total {
        return Err(Error::OutOfRange {
            what: "step",
            value: step,
            limit: total,
        });
    }
    let warmup = config.lr_warmup_steps;
    let decay = config.lr_decay_steps;
    let lr = config.lr;
    if step < warmup {
        return Ok(lr * (step as f64 / warmup as f64));
    }
    if decay > 0 && step >= total - decay {
        return Ok(lr * ((total - step) as f64 / decay as f64));
    }
    Ok(lr)
}
