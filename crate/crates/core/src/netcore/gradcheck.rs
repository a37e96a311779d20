use super::extended::{reference_loss, DoubleDouble};
use super::network::{backward_bptt, sample_loss, Sample};
use super::params::{BlockId, ModelParams, TrainableMask};
use crate::error::Result;

/// How the loss is evaluated at the perturbed points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossEvaluator {
    /// Independent scalar forward pass in double-double arithmetic. The
    /// difference quotient is then limited by truncation error only.
    #[default]
    Reference,
    /// The model's own `f64` forward pass. Its rounding noise is about
    /// `ulp(loss) / 2h`, so gradients below ~1e-6 cannot be resolved.
    Native,
}

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Canonical index of the worst parameter.
    pub worst_index: usize,
    pub worst_block: BlockId,
    pub analytic: f64,
    pub numeric: f64,
    pub params_checked: usize,
}

/// Compares BPTT gradients of the sample's mean NLL against central finite
/// differences for every parameter, using the reference loss evaluator.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(params: &ModelParams, sample: &Sample, step: f64) -> Result<GradCheckReport> {
    grad_check_with(params, sample, step, LossEvaluator::Reference)
}

pub fn grad_check_with(
    params: &ModelParams,
    sample: &Sample,
    step: f64,
    evaluator: LossEvaluator,
) -> Result<GradCheckReport> {
    let mask = TrainableMask::all_trainable(params);
    let bptt_cap = sample.inputs.len().max(1);
    let (_, grads) = backward_bptt(params, sample, &mask, bptt_cap)?;
    let analytic = grads.params().flat_values();

    let block_of: Vec<BlockId> = params
        .blocks()
        .into_iter()
        .flat_map(|(id, arrays)| std::iter::repeat_n(id, arrays.iter().map(|a| a.len()).sum()))
        .collect();

    let loss_at = |p: &ModelParams| -> Result<DoubleDouble> {
        Ok(match evaluator {
            LossEvaluator::Reference => reference_loss(p, sample),
            LossEvaluator::Native => DoubleDouble::from_f64(sample_loss(p, sample)?),
        })
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        worst_block: BlockId::Embedding,
        analytic: 0.0,
        numeric: 0.0,
        params_checked: analytic.len(),
    };
    for (i, &a) in analytic.iter().enumerate() {
        let original = *probe.scalar_mut(i).expect("index within model");
        let up = original + step;
        let down = original - step;
        *probe.scalar_mut(i).expect("index within model") = up;
        let plus = loss_at(&probe)?;
        *probe.scalar_mut(i).expect("index within model") = down;
        let minus = loss_at(&probe)?;
        *probe.scalar_mut(i).expect("index within model") = original;

        // Divide by the step actually taken after rounding θ ± h.
        let width = DoubleDouble::from_f64(up) - DoubleDouble::from_f64(down);
        let numeric = ((plus - minus) / width).to_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_relative_error {
            report = GradCheckReport {
                max_relative_error: rel,
                worst_index: i,
                worst_block: block_of[i],
                analytic: a,
                numeric,
                ..report
            };
        }
    }
    Ok(report)
}
