//! Double-double arithmetic and a scalar reference evaluation of the model
//! loss built on it.
//!
//! The reference path shares no code with [`super::network`]: it walks the
//! parameters with explicit indices. It exists so that finite differences of
//! the loss are not swamped by `f64` rounding of the loss value itself.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::network::{recurrent_layers, Sample};
use super::params::{ModelParams, SurplusBlock};

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    pub fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn mul_pow2(self, k: i32) -> Self {
        let s = 2f64.powi(k);
        Self {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::ZERO;
        }
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2 * Self::from_f64(k);
        // exp(r) = exp(r / 2^8)^(2^8)
        let r = r.mul_pow2(-8);
        let mut term = Self::ONE;
        let mut sum = Self::ONE;
        for n in 1..=18 {
            term = term * r / Self::from_f64(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..8 {
            sum = sum * sum;
        }
        sum.mul_pow2(k as i32)
    }

    /// Natural logarithm of a positive value.
    pub fn ln(self) -> Self {
        let mut y = Self::from_f64(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Self::ONE;
        }
        y
    }

    pub fn tanh(self) -> Self {
        if self.hi < 0.0 {
            return -(-self).tanh();
        }
        let e = (self.mul_pow2(1).neg()).exp();
        (Self::ONE - e) / (Self::ONE + e)
    }

    pub fn sigmoid(self) -> Self {
        Self::ONE / (Self::ONE + (-self).exp())
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Self { hi, lo }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Self { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b * Self::from_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Self::from_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Self { hi, lo } + Self::from_f64(q3)
    }
}

type Dd = DoubleDouble;

fn dd(x: f64) -> Dd {
    Dd::from_f64(x)
}

/// Mean NLL of the scored positions, evaluated in double-double arithmetic.
/// The caller guarantees the sample is valid for the model.
pub fn reference_loss(params: &ModelParams, sample: &Sample) -> Dd {
    let h = params.hidden();
    let layers = recurrent_layers(params);
    let mut hs = vec![vec![Dd::ZERO; h]; layers.len()];
    let mut cs = vec![vec![Dd::ZERO; h]; layers.len()];
    let mut total = Dd::ZERO;

    for (t, &id) in sample.inputs.iter().enumerate() {
        let mut x: Vec<Dd> = params.embedding.row(id).iter().map(|&v| dd(v)).collect();
        for (k, layer) in layers.iter().enumerate() {
            let mut pre = vec![Dd::ZERO; 4 * h];
            for (row, p) in pre.iter_mut().enumerate() {
                let mut s = dd(layer.bias[row]);
                for (j, xj) in x.iter().enumerate() {
                    s = s + dd(layer.w_input.get(row, j)) * *xj;
                }
                for j in 0..h {
                    s = s + dd(layer.w_recurrent.get(row, j)) * hs[k][j];
                }
                *p = s;
            }
            for u in 0..h {
                let i = pre[u].sigmoid();
                let f = pre[h + u].sigmoid();
                let g = pre[2 * h + u].tanh();
                let o = pre[3 * h + u].sigmoid();
                cs[k][u] = f * cs[k][u] + i * g;
                hs[k][u] = o * cs[k][u].tanh();
            }
            x = hs[k].clone();
        }
        if let Some(SurplusBlock::Affine { weight, bias }) = &params.surplus {
            x = (0..h)
                .map(|r| {
                    let mut s = dd(bias[r]);
                    for (j, xj) in x.iter().enumerate() {
                        s = s + dd(weight.get(r, j)) * *xj;
                    }
                    s
                })
                .collect();
        }
        if t < sample.loss_from {
            continue;
        }
        let logits: Vec<Dd> = (0..params.vocab_size())
            .map(|w| {
                let mut s = dd(params.b_out[w]);
                for (j, xj) in x.iter().enumerate() {
                    s = s + dd(params.w_out.get(w, j)) * *xj;
                }
                s
            })
            .collect();
        let max = logits.iter().copied().fold(logits[0], |a, b| if b > a { b } else { a });
        let mut sum = Dd::ZERO;
        for z in &logits {
            sum = sum + (*z - max).exp();
        }
        let log_prob = logits[sample.targets[t]] - max - sum.ln();
        total = total - log_prob;
    }
    total / dd(sample.scored() as f64)
}
