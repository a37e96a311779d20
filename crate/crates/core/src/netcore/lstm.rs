use super::matrix::{sigmoid, Matrix};
use super::params::LstmLayerParams;
use crate::error::{Error, Result};

/// One LSTM step. Returns `(h', c')`.
///
/// `i, f, o = σ(·)`, `g = tanh(·)`, `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_cell_forward(
    x: &[f64],
    state: (&[f64], &[f64]),
    params: &LstmLayerParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hidden = params.hidden();
    let (h, c) = state;
    if x.len() != params.input_dim() || h.len() != hidden || c.len() != hidden {
        return Err(Error::Shape(format!(
            "lstm cell expects input {} and state {hidden}, got input {}, h {}, c {}",
            params.input_dim(),
            x.len(),
            h.len(),
            c.len()
        )));
    }
    let mut gates = vec![0.0; 4 * hidden];
    let mut h_next = vec![0.0; hidden];
    let mut c_next = vec![0.0; hidden];
    let mut tanh_c = vec![0.0; hidden];
    step(params, x, h, c, &mut gates, &mut c_next, &mut tanh_c, &mut h_next);
    Ok((h_next, c_next))
}

/// Writes activated gates `[i | f | g | o]`, the new cell, `tanh` of the new
/// cell and the new hidden state.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn step(
    params: &LstmLayerParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    gates: &mut [f64],
    c: &mut [f64],
    tanh_c: &mut [f64],
    h: &mut [f64],
) {
    let hidden = h_prev.len();
    gates.copy_from_slice(&params.bias);
    params.w_input.matvec_acc(x, gates);
    params.w_recurrent.matvec_acc(h_prev, gates);
    let (ifo, rest) = gates.split_at_mut(2 * hidden);
    let (g, o) = rest.split_at_mut(hidden);
    for v in ifo.iter_mut().chain(o.iter_mut()) {
        *v = sigmoid(*v);
    }
    for v in g.iter_mut() {
        *v = v.tanh();
    }
    for k in 0..hidden {
        let (i, f) = (gates[k], gates[hidden + k]);
        let (g, o) = (gates[2 * hidden + k], gates[3 * hidden + k]);
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        h[k] = o * tanh_c[k];
    }
}

/// Activations of one layer over a sequence, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    pub hidden: usize,
    /// `T × 4H` activated gates.
    pub gates: Vec<f64>,
    /// `(T + 1) × H`, row 0 is the incoming state.
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    /// `T × H`
    pub tanh_c: Vec<f64>,
}

impl LayerTrace {
    pub fn steps(&self) -> usize {
        self.tanh_c.len() / self.hidden
    }

    /// Hidden outputs for steps `1..=T` as one `T × H` slice.
    pub fn outputs(&self) -> &[f64] {
        &self.h[self.hidden..]
    }

    pub fn final_h(&self) -> &[f64] {
        let t = self.steps();
        &self.h[t * self.hidden..]
    }

    pub fn final_c(&self) -> &[f64] {
        let t = self.steps();
        &self.c[t * self.hidden..]
    }
}

/// Runs a layer over `xs` (`T × D`), starting from `(h0, c0)`.
pub(crate) fn forward_layer(params: &LstmLayerParams, xs: &[f64], h0: &[f64], c0: &[f64]) -> LayerTrace {
    let hidden = params.hidden();
    let d = params.input_dim();
    let steps = xs.len() / d;
    let mut trace = LayerTrace {
        hidden,
        gates: vec![0.0; steps * 4 * hidden],
        c: vec![0.0; (steps + 1) * hidden],
        h: vec![0.0; (steps + 1) * hidden],
        tanh_c: vec![0.0; steps * hidden],
    };
    trace.h[..hidden].copy_from_slice(h0);
    trace.c[..hidden].copy_from_slice(c0);
    for t in 0..steps {
        let (h_done, h_rest) = trace.h.split_at_mut((t + 1) * hidden);
        let (c_done, c_rest) = trace.c.split_at_mut((t + 1) * hidden);
        step(
            params,
            &xs[t * d..(t + 1) * d],
            &h_done[t * hidden..],
            &c_done[t * hidden..],
            &mut trace.gates[t * 4 * hidden..(t + 1) * 4 * hidden],
            &mut c_rest[..hidden],
            &mut trace.tanh_c[t * hidden..(t + 1) * hidden],
            &mut h_rest[..hidden],
        );
    }
    trace
}

/// Backpropagates `dh_out` (`T × H`, gradient w.r.t. each step's output)
/// through one layer. Gradients flowing into the incoming state are dropped.
///
/// Weight gradients are accumulated into `grads` when given; the gradient
/// w.r.t. the layer inputs is accumulated into `dxs` when given.
pub(crate) fn backward_layer(
    params: &LstmLayerParams,
    xs: &[f64],
    trace: &LayerTrace,
    dh_out: &[f64],
    mut grads: Option<&mut LstmLayerParams>,
    mut dxs: Option<&mut [f64]>,
) {
    let hidden = trace.hidden;
    let d = params.input_dim();
    let steps = trace.steps();
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dz = vec![0.0; 4 * hidden];

    for t in (0..steps).rev() {
        let gates = &trace.gates[t * 4 * hidden..(t + 1) * 4 * hidden];
        let tanh_c = &trace.tanh_c[t * hidden..(t + 1) * hidden];
        let c_prev = &trace.c[t * hidden..(t + 1) * hidden];
        let h_prev = &trace.h[t * hidden..(t + 1) * hidden];
        let dh_t = &dh_out[t * hidden..(t + 1) * hidden];

        for k in 0..hidden {
            let (i, f) = (gates[k], gates[hidden + k]);
            let (g, o) = (gates[2 * hidden + k], gates[3 * hidden + k]);
            let dh = dh_t[k] + dh_next[k];
            let dc = dh * o * (1.0 - tanh_c[k] * tanh_c[k]) + dc_next[k];
            dz[k] = dc * g * i * (1.0 - i);
            dz[hidden + k] = dc * c_prev[k] * f * (1.0 - f);
            dz[2 * hidden + k] = dc * i * (1.0 - g * g);
            dz[3 * hidden + k] = dh * tanh_c[k] * o * (1.0 - o);
            dc_next[k] = dc * f;
        }

        if let Some(g) = grads.as_deref_mut() {
            g.w_input.outer_acc(&dz, &xs[t * d..(t + 1) * d]);
            g.w_recurrent.outer_acc(&dz, h_prev);
            for (b, z) in g.bias.iter_mut().zip(&dz) {
                *b += z;
            }
        }
        if let Some(dx) = dxs.as_deref_mut() {
            params.w_input.matvec_t_acc(&dz, &mut dx[t * d..(t + 1) * d]);
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        params.w_recurrent.matvec_t_acc(&dz, &mut dh_next);
    }
}

/// Applies `y = W h + b` row-wise over `T × H` inputs.
pub(crate) fn affine_rows(weight: &Matrix, bias: &[f64], xs: &[f64]) -> Vec<f64> {
    let (rows, cols) = weight.shape();
    let steps = xs.len() / cols;
    let mut out = vec![0.0; steps * rows];
    for t in 0..steps {
        let o = &mut out[t * rows..(t + 1) * rows];
        o.copy_from_slice(bias);
        weight.matvec_acc(&xs[t * cols..(t + 1) * cols], o);
    }
    out
}
