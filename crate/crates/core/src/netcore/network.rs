//! Forward pass, loss and backpropagation through time for the full stack
//! embedding → LSTM layers → optional surplus → affine → softmax.

use super::lstm::{affine_rows, backward_layer, forward_layer, LayerTrace};
use super::matrix::{softmax_in_place, Matrix};
use super::params::{BlockId, GradientStore, LstmLayerParams, ModelParams, SurplusBlock, TrainableMask};
use crate::error::{Error, Result};

/// Hidden and cell vectors of every recurrent layer (LSTM stack, then an
/// LSTM surplus layer if present).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl LstmState {
    pub fn zeros(params: &ModelParams) -> Self {
        let n = recurrent_layers(params).len();
        let hidden = params.hidden();
        Self {
            h: vec![vec![0.0; hidden]; n],
            c: vec![vec![0.0; hidden]; n],
        }
    }

    /// Hidden state of the topmost recurrent layer.
    pub fn top_hidden(&self) -> &[f64] {
        self.h.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// One training example: `targets[t]` is predicted after reading
/// `inputs[..=t]`. Positions before `loss_from` are read but not scored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub loss_from: usize,
}

impl Sample {
    pub fn new(inputs: Vec<usize>, targets: Vec<usize>, loss_from: usize) -> Self {
        Self {
            inputs,
            targets,
            loss_from,
        }
    }

    /// Number of scored positions.
    pub fn scored(&self) -> usize {
        self.targets.len().saturating_sub(self.loss_from)
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.inputs.len() != self.targets.len() {
            return Err(Error::Shape(format!(
                "inputs ({}) and targets ({}) are not aligned",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        if self.loss_from >= self.targets.len() {
            return Err(Error::Input(format!(
                "sample scores no positions (loss_from {} of {})",
                self.loss_from,
                self.targets.len()
            )));
        }
        if let Some(id) = self.inputs.iter().chain(&self.targets).find(|&&id| id >= vocab_size) {
            return Err(Error::Input(format!("token id {id} out of range for vocabulary of size {vocab_size}")));
        }
        Ok(())
    }
}

pub(crate) fn recurrent_layers(params: &ModelParams) -> Vec<&LstmLayerParams> {
    let mut layers: Vec<&LstmLayerParams> = params.lstm_layers.iter().collect();
    if let Some(SurplusBlock::Lstm(l)) = &params.surplus {
        layers.push(l);
    }
    layers
}

fn check_ids(params: &ModelParams, ids: &[usize]) -> Result<()> {
    let v = params.vocab_size();
    match ids.iter().find(|&&id| id >= v) {
        Some(id) => Err(Error::Input(format!("token id {id} out of range for vocabulary of size {v}"))),
        None => Ok(()),
    }
}

fn check_state(params: &ModelParams, state: &LstmState) -> Result<()> {
    let n = recurrent_layers(params).len();
    let hidden = params.hidden();
    if state.h.len() != n
        || state.c.len() != n
        || state.h.iter().chain(&state.c).any(|v| v.len() != hidden)
    {
        return Err(Error::Shape(format!("state does not match a model with {n} recurrent layers of width {hidden}")));
    }
    Ok(())
}

struct Trace {
    embeds: Vec<f64>,
    layers: Vec<LayerTrace>,
    /// Input of the output projection, `T × H`.
    top: Vec<f64>,
    /// `T × V`
    probs: Vec<f64>,
}

impl Trace {
    fn final_state(&self) -> LstmState {
        LstmState {
            h: self.layers.iter().map(|l| l.final_h().to_vec()).collect(),
            c: self.layers.iter().map(|l| l.final_c().to_vec()).collect(),
        }
    }
}

fn forward_trace(params: &ModelParams, ids: &[usize], state: &LstmState) -> Trace {
    let d = params.embed_dim();
    let v = params.vocab_size();
    let mut embeds = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        embeds.extend_from_slice(params.embedding.row(id));
    }

    let mut layers: Vec<LayerTrace> = Vec::new();
    for (k, layer) in recurrent_layers(params).into_iter().enumerate() {
        let xs = match layers.last() {
            Some(prev) => prev.outputs(),
            None => &embeds,
        };
        let trace = forward_layer(layer, xs, &state.h[k], &state.c[k]);
        layers.push(trace);
    }

    let last = layers.last().expect("at least one recurrent layer").outputs();
    let top = match &params.surplus {
        Some(SurplusBlock::Affine { weight, bias }) => affine_rows(weight, bias, last),
        _ => last.to_vec(),
    };

    let mut probs = affine_rows(&params.w_out, &params.b_out, &top);
    for row in probs.chunks_exact_mut(v) {
        softmax_in_place(row);
    }
    Trace {
        embeds,
        layers,
        top,
        probs,
    }
}

/// Per-step next-token distributions `[T × V]` for a sequence read from a
/// zero state.
pub fn forward_lm(params: &ModelParams, inputs: &[usize]) -> Result<Matrix> {
    let (rows, _) = forward_from(params, inputs, &LstmState::zeros(params))?;
    Ok(rows)
}

/// Like [`forward_lm`] but starting from, and returning, an explicit state.
pub fn forward_from(params: &ModelParams, inputs: &[usize], state: &LstmState) -> Result<(Matrix, LstmState)> {
    check_ids(params, inputs)?;
    check_state(params, state)?;
    let trace = forward_trace(params, inputs, state);
    let next = trace.final_state();
    Ok((Matrix::from_vec(inputs.len(), params.vocab_size(), trace.probs), next))
}

/// Single incremental step; updates `state` and returns the distribution
/// over the next token.
pub fn step(params: &ModelParams, state: &mut LstmState, id: usize) -> Result<Vec<f64>> {
    let (rows, next) = forward_from(params, &[id], state)?;
    *state = next;
    Ok(rows.as_slice().to_vec())
}

/// Mean negative log likelihood in nats. A zero probability at a target
/// yields `+∞`.
pub fn nll_loss(prob_rows: &Matrix, targets: &[usize]) -> Result<f64> {
    if prob_rows.rows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} targets",
            prob_rows.rows(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (t, &y) in targets.iter().enumerate() {
        if y >= prob_rows.cols() {
            return Err(Error::Input(format!("target id {y} out of range")));
        }
        total -= prob_rows.get(t, y).ln();
    }
    Ok(total / targets.len() as f64)
}

/// Mean NLL over the scored positions of a sample, forward pass only.
pub fn sample_loss(params: &ModelParams, sample: &Sample) -> Result<f64> {
    sample.validate(params.vocab_size())?;
    let rows = forward_lm(params, &sample.inputs)?;
    let mut total = 0.0;
    for t in sample.loss_from..sample.targets.len() {
        total -= rows.get(t, sample.targets[t]).ln();
    }
    Ok(total / sample.scored() as f64)
}

/// Loss and gradients of the mean NLL of one sample.
///
/// Sequences longer than `bptt_cap` are processed in windows; the recurrent
/// state is carried across windows but gradients are not. Frozen blocks
/// receive exactly zero gradient.
pub fn backward_bptt(
    params: &ModelParams,
    sample: &Sample,
    mask: &TrainableMask,
    bptt_cap: usize,
) -> Result<(f64, GradientStore)> {
    let mut grads = GradientStore::zeros_like(params);
    let scored = sample.scored();
    let nll = accumulate_gradients(params, sample, mask, bptt_cap, 1.0 / scored.max(1) as f64, &mut grads)?;
    Ok((nll / scored as f64, grads))
}

/// Adds `loss_scale · ∇(summed NLL of the sample)` into `grads` and returns
/// the summed NLL.
pub fn accumulate_gradients(
    params: &ModelParams,
    sample: &Sample,
    mask: &TrainableMask,
    bptt_cap: usize,
    loss_scale: f64,
    grads: &mut GradientStore,
) -> Result<f64> {
    if bptt_cap == 0 {
        return Err(Error::Config("truncation length must be at least 1".into()));
    }
    sample.validate(params.vocab_size())?;
    mask.check_congruent(params)?;
    if grads.params().architecture() != params.architecture() {
        return Err(Error::Shape("gradient store does not match model".into()));
    }

    let mut state = LstmState::zeros(params);
    let mut total = 0.0;
    let len = sample.inputs.len();
    let mut start = 0;
    while start < len {
        let end = (start + bptt_cap).min(len);
        let trace = forward_trace(params, &sample.inputs[start..end], &state);
        let loss_from = sample.loss_from.saturating_sub(start).min(end - start);
        total += backward_chunk(
            params,
            &sample.inputs[start..end],
            &trace,
            &sample.targets[start..end],
            loss_from,
            loss_scale,
            mask,
            grads,
        );
        state = trace.final_state();
        start = end;
    }
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn backward_chunk(
    params: &ModelParams,
    ids: &[usize],
    trace: &Trace,
    targets: &[usize],
    loss_from: usize,
    loss_scale: f64,
    mask: &TrainableMask,
    grads: &mut GradientStore,
) -> f64 {
    let v = params.vocab_size();
    let h = params.hidden();
    let d = params.embed_dim();
    let steps = ids.len();
    let num_lstm = params.num_layers();
    let recurrent = recurrent_layers(params);
    let surplus_trainable = mask.is_trainable(BlockId::Surplus);

    // Bottom-up trainable flags of every block feeding the output projection.
    let mut below: Vec<bool> = Vec::with_capacity(recurrent.len() + 2);
    below.push(mask.embedding);
    below.extend(mask.lstm.iter().copied());
    if params.surplus.is_some() {
        below.push(surplus_trainable);
    }
    let trainable_below = |k: usize| below[..k].iter().any(|&b| b);

    let mut nll = 0.0;
    let mut dlogits = vec![0.0; steps * v];
    for t in loss_from..steps {
        let p = &trace.probs[t * v..(t + 1) * v];
        nll -= p[targets[t]].ln();
        let dl = &mut dlogits[t * v..(t + 1) * v];
        for (g, &pv) in dl.iter_mut().zip(p) {
            *g = pv * loss_scale;
        }
        dl[targets[t]] -= loss_scale;
    }

    let g = grads.params_mut();
    if mask.output {
        for t in loss_from..steps {
            let dl = &dlogits[t * v..(t + 1) * v];
            g.w_out.outer_acc(dl, &trace.top[t * h..(t + 1) * h]);
            for (b, x) in g.b_out.iter_mut().zip(dl) {
                *b += x;
            }
        }
    }
    if !trainable_below(below.len()) {
        return nll;
    }

    let mut dtop = vec![0.0; steps * h];
    for t in loss_from..steps {
        params
            .w_out
            .matvec_t_acc(&dlogits[t * v..(t + 1) * v], &mut dtop[t * h..(t + 1) * h]);
    }

    // Gradient w.r.t. the outputs of the top recurrent layer.
    let mut dh = match &params.surplus {
        Some(SurplusBlock::Affine { weight, .. }) => {
            let last = trace.layers.last().expect("recurrent layer").outputs();
            if surplus_trainable {
                if let Some(SurplusBlock::Affine { weight: gw, bias: gb }) = &mut g.surplus {
                    for t in 0..steps {
                        let dy = &dtop[t * h..(t + 1) * h];
                        gw.outer_acc(dy, &last[t * h..(t + 1) * h]);
                        for (b, x) in gb.iter_mut().zip(dy) {
                            *b += x;
                        }
                    }
                }
            }
            let surplus_index = num_lstm + 1;
            if !trainable_below(surplus_index) {
                return nll;
            }
            let mut dx = vec![0.0; steps * h];
            for t in 0..steps {
                weight.matvec_t_acc(&dtop[t * h..(t + 1) * h], &mut dx[t * h..(t + 1) * h]);
            }
            dx
        }
        _ => dtop,
    };

    for k in (0..recurrent.len()).rev() {
        let block_index = k + 1;
        let xs: &[f64] = if k == 0 { &trace.embeds } else { trace.layers[k - 1].outputs() };
        let layer_grads = if below[block_index] {
            if k < num_lstm {
                Some(&mut g.lstm_layers[k])
            } else if let Some(SurplusBlock::Lstm(l)) = &mut g.surplus {
                Some(l)
            } else {
                None
            }
        } else {
            None
        };
        let need_dx = trainable_below(block_index);
        let mut dx = need_dx.then(|| vec![0.0; xs.len()]);
        backward_layer(recurrent[k], xs, &trace.layers[k], &dh, layer_grads, dx.as_deref_mut());
        match dx {
            Some(dx) => dh = dx,
            None => return nll,
        }
    }

    if mask.embedding {
        for (t, &id) in ids.iter().enumerate() {
            let row = g.embedding.row_mut(id);
            for (e, x) in row.iter_mut().zip(&dh[t * d..(t + 1) * d]) {
                *e += x;
            }
        }
    }
    nll
}
