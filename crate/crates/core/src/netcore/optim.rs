use super::params::{GradientStore, ModelParams, TrainableMask};
use crate::error::{Error, Result};

/// Outcome of one update, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    /// Factor applied to the gradient by norm clipping (1.0 when unclipped).
    pub clip_scale: f64,
}

/// Plain SGD with global-norm clipping, applied to trainable blocks only.
/// Frozen blocks are left untouched bit for bit.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &GradientStore,
    lr: f64,
    clip: f64,
    mask: &TrainableMask,
) -> Result<StepReport> {
    if !(lr > 0.0) || !(clip > 0.0) {
        return Err(Error::Config(format!("learning rate ({lr}) and clip ({clip}) must be positive")));
    }
    mask.check_congruent(params)?;
    if grads.params().architecture() != params.architecture() {
        return Err(Error::Shape("gradient store does not match model".into()));
    }
    let norm = grads.norm_sq(mask).sqrt();
    if !norm.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            step: 0,
            reason: format!("non-finite gradient norm {norm}"),
        });
    }
    let clip_scale = if norm > clip { clip / norm } else { 1.0 };
    let factor = lr * clip_scale;

    for ((id, values), (_, g)) in params.blocks_mut().into_iter().zip(grads.params().blocks()) {
        if !mask.is_trainable(id) {
            continue;
        }
        for (a, b) in values.into_iter().zip(g) {
            for (x, dx) in a.iter_mut().zip(b) {
                *x -= factor * dx;
            }
        }
    }
    Ok(StepReport {
        grad_norm: norm,
        clip_scale,
    })
}
