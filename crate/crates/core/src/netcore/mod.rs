//! Dense numerical core: matrices, LSTM layers, the language-model forward
//! pass, backpropagation through time, SGD and gradient verification.
//!
//! All arithmetic is `f64`. Reduced precision is applied to parameter storage
//! only (see [`ModelParams::round_to_f32`]).

pub mod extended;
pub mod gradcheck;
pub mod lstm;
pub mod matrix;
pub mod network;
pub mod optim;
pub mod params;

pub use gradcheck::{grad_check, grad_check_with, GradCheckReport, LossEvaluator};
pub use lstm::lstm_cell_forward;
pub use matrix::Matrix;
pub use network::{
    accumulate_gradients, backward_bptt, forward_from, forward_lm, nll_loss, sample_loss, step, LstmState, Sample,
};
pub use optim::{sgd_step, StepReport};
pub use params::{
    Architecture, BlockId, GradientStore, InitConfig, LstmLayerParams, ModelParams, SurplusBlock, SurplusKind,
    TrainableMask,
};
