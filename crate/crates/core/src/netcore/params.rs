use std::fmt;

use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Parameters of one LSTM layer without peephole connections.
///
/// Gate blocks are stacked in the fixed order input, forget, cell candidate,
/// output: rows `[0, H)` drive the input gate, `[H, 2H)` the forget gate,
/// `[2H, 3H)` the candidate and `[3H, 4H)` the output gate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub w_input: Matrix,
    pub w_recurrent: Matrix,
    pub bias: Vec<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_input: Matrix::zeros(4 * hidden, input_dim),
            w_recurrent: Matrix::zeros(4 * hidden, hidden),
            bias: vec![0.0; 4 * hidden],
        }
    }

    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden: usize, init: &InitConfig, rng: &mut R) -> Self {
        let w_input = Matrix::uniform(4 * hidden, input_dim, init.scale, rng);
        let w_recurrent = Matrix::uniform(4 * hidden, hidden, init.scale, rng);
        let mut bias: Vec<f64> = (0..4 * hidden).map(|_| rng.gen_range(-init.scale..=init.scale)).collect();
        for b in &mut bias[hidden..2 * hidden] {
            *b += init.forget_bias;
        }
        Self {
            w_input,
            w_recurrent,
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_recurrent.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.cols()
    }

    fn check_shape(&self, input_dim: usize, hidden: usize, what: &str) -> Result<()> {
        if self.w_input.shape() != (4 * hidden, input_dim)
            || self.w_recurrent.shape() != (4 * hidden, hidden)
            || self.bias.len() != 4 * hidden
        {
            return Err(Error::Shape(format!(
                "{what}: expected input {input_dim}, hidden {hidden}; got w_input {:?}, w_recurrent {:?}, bias {}",
                self.w_input.shape(),
                self.w_recurrent.shape(),
                self.bias.len()
            )));
        }
        Ok(())
    }

    fn arrays(&self) -> Vec<&[f64]> {
        vec![self.w_input.as_slice(), self.w_recurrent.as_slice(), &self.bias]
    }

    fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_input.as_mut_slice(),
            self.w_recurrent.as_mut_slice(),
            &mut self.bias,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SurplusKind {
    /// Linear map without activation, initialized to the identity.
    Affine,
    /// An additional recurrent layer of the same width.
    Lstm,
}

impl SurplusKind {
    pub fn name(self) -> &'static str {
        match self {
            SurplusKind::Affine => "affine",
            SurplusKind::Lstm => "lstm",
        }
    }
}

impl std::str::FromStr for SurplusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(SurplusKind::Affine),
            "lstm" => Ok(SurplusKind::Lstm),
            other => Err(Error::Config(format!("unknown surplus kind {other:?} (expected affine|lstm)"))),
        }
    }
}

/// Extra trainable layer between the top LSTM layer and the output projection.
#[derive(Debug, Clone, PartialEq)]
pub enum SurplusBlock {
    Affine { weight: Matrix, bias: Vec<f64> },
    Lstm(LstmLayerParams),
}

impl SurplusBlock {
    pub fn identity(hidden: usize) -> Self {
        SurplusBlock::Affine {
            weight: Matrix::identity(hidden),
            bias: vec![0.0; hidden],
        }
    }

    pub fn kind(&self) -> SurplusKind {
        match self {
            SurplusBlock::Affine { .. } => SurplusKind::Affine,
            SurplusBlock::Lstm(_) => SurplusKind::Lstm,
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            SurplusBlock::Affine { weight, bias } => SurplusBlock::Affine {
                weight: Matrix::zeros(weight.rows(), weight.cols()),
                bias: vec![0.0; bias.len()],
            },
            SurplusBlock::Lstm(l) => SurplusBlock::Lstm(LstmLayerParams::zeros(l.input_dim(), l.hidden())),
        }
    }

    fn arrays(&self) -> Vec<&[f64]> {
        match self {
            SurplusBlock::Affine { weight, bias } => vec![weight.as_slice(), bias],
            SurplusBlock::Lstm(l) => l.arrays(),
        }
    }

    fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            SurplusBlock::Affine { weight, bias } => vec![weight.as_mut_slice(), bias],
            SurplusBlock::Lstm(l) => l.arrays_mut(),
        }
    }
}

/// Shape of a model; everything needed to allocate its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub surplus: Option<SurplusKind>,
}

impl Architecture {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden: usize, layers: usize) -> Self {
        Self {
            vocab_size,
            embed_dim,
            hidden,
            layers,
            surplus: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.embed_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    /// Lengths of every parameter array in block order.
    pub fn array_lengths(&self) -> Vec<usize> {
        let (v, d, h) = (self.vocab_size, self.embed_dim, self.hidden);
        let mut lens = vec![v * d];
        for layer in 0..self.layers {
            let input = if layer == 0 { d } else { h };
            lens.extend([4 * h * input, 4 * h * h, 4 * h]);
        }
        match self.surplus {
            Some(SurplusKind::Affine) => lens.extend([h * h, h]),
            Some(SurplusKind::Lstm) => lens.extend([4 * h * h, 4 * h * h, 4 * h]),
            None => {}
        }
        lens.extend([v * h, v]);
        lens
    }

    pub fn param_count(&self) -> usize {
        self.array_lengths().iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    /// Half-width of the uniform initialization interval.
    pub scale: f64,
    pub forget_bias: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            scale: 0.08,
            forget_bias: 1.0,
        }
    }
}

/// Identifies a parameter block: the unit of freezing and of checkpoint layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockId {
    Embedding,
    /// Zero-based LSTM layer index.
    Lstm(usize),
    Surplus,
    Output,
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockId::Embedding => write!(f, "embedding"),
            BlockId::Lstm(i) => write!(f, "lstm{}", i + 1),
            BlockId::Surplus => write!(f, "surplus"),
            BlockId::Output => write!(f, "output"),
        }
    }
}

/// All trainable state of a language model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `[V × D_e]`, row `w` is the embedding of token `w`.
    pub embedding: Matrix,
    pub lstm_layers: Vec<LstmLayerParams>,
    pub surplus: Option<SurplusBlock>,
    /// `[V × H]`
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

impl ModelParams {
    pub fn random<R: Rng + ?Sized>(arch: &Architecture, init: &InitConfig, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (v, d, h) = (arch.vocab_size, arch.embed_dim, arch.hidden);
        let embedding = Matrix::uniform(v, d, init.scale, rng);
        let lstm_layers = (0..arch.layers)
            .map(|i| LstmLayerParams::random(if i == 0 { d } else { h }, h, init, rng))
            .collect();
        let surplus = match arch.surplus {
            None => None,
            Some(SurplusKind::Affine) => Some(SurplusBlock::identity(h)),
            Some(SurplusKind::Lstm) => Some(SurplusBlock::Lstm(LstmLayerParams::random(h, h, init, rng))),
        };
        let w_out = Matrix::uniform(v, h, init.scale, rng);
        let b_out = (0..v).map(|_| rng.gen_range(-init.scale..=init.scale)).collect();
        Ok(Self {
            embedding,
            lstm_layers,
            surplus,
            w_out,
            b_out,
        })
    }

    /// Zero-filled parameters of the given architecture; surplus blocks keep
    /// their structure but are zeroed as well.
    pub fn zeros(arch: &Architecture) -> Self {
        let (v, d, h) = (arch.vocab_size, arch.embed_dim, arch.hidden);
        Self {
            embedding: Matrix::zeros(v, d),
            lstm_layers: (0..arch.layers)
                .map(|i| LstmLayerParams::zeros(if i == 0 { d } else { h }, h))
                .collect(),
            surplus: arch.surplus.map(|k| match k {
                SurplusKind::Affine => SurplusBlock::Affine {
                    weight: Matrix::zeros(h, h),
                    bias: vec![0.0; h],
                },
                SurplusKind::Lstm => SurplusBlock::Lstm(LstmLayerParams::zeros(h, h)),
            }),
            w_out: Matrix::zeros(v, h),
            b_out: vec![0.0; v],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embedding: Matrix::zeros(self.embedding.rows(), self.embedding.cols()),
            lstm_layers: self
                .lstm_layers
                .iter()
                .map(|l| LstmLayerParams::zeros(l.input_dim(), l.hidden()))
                .collect(),
            surplus: self.surplus.as_ref().map(SurplusBlock::zeros_like),
            w_out: Matrix::zeros(self.w_out.rows(), self.w_out.cols()),
            b_out: vec![0.0; self.b_out.len()],
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w_out.cols()
    }

    pub fn num_layers(&self) -> usize {
        self.lstm_layers.len()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            vocab_size: self.vocab_size(),
            embed_dim: self.embed_dim(),
            hidden: self.hidden(),
            layers: self.num_layers(),
            surplus: self.surplus.as_ref().map(SurplusBlock::kind),
        }
    }

    /// Checks every shape against the architecture implied by the embedding
    /// and output projection.
    pub fn validate(&self) -> Result<()> {
        let (v, d, h) = (self.vocab_size(), self.embed_dim(), self.hidden());
        if self.lstm_layers.is_empty() {
            return Err(Error::Shape("model has no LSTM layers".into()));
        }
        if self.b_out.len() != v || self.w_out.rows() != v {
            return Err(Error::Shape(format!(
                "output projection {:?} / bias {} inconsistent with vocabulary {v}",
                self.w_out.shape(),
                self.b_out.len()
            )));
        }
        for (i, layer) in self.lstm_layers.iter().enumerate() {
            layer.check_shape(if i == 0 { d } else { h }, h, &format!("lstm layer {}", i + 1))?;
        }
        match &self.surplus {
            Some(SurplusBlock::Affine { weight, bias }) => {
                if weight.shape() != (h, h) || bias.len() != h {
                    return Err(Error::Shape("affine surplus must be H×H".into()));
                }
            }
            Some(SurplusBlock::Lstm(l)) => l.check_shape(h, h, "surplus lstm")?,
            None => {}
        }
        Ok(())
    }

    pub fn block_ids(&self) -> Vec<BlockId> {
        let mut ids = vec![BlockId::Embedding];
        ids.extend((0..self.lstm_layers.len()).map(BlockId::Lstm));
        if self.surplus.is_some() {
            ids.push(BlockId::Surplus);
        }
        ids.push(BlockId::Output);
        ids
    }

    /// Parameter arrays grouped by block, in the canonical block order.
    pub fn blocks(&self) -> Vec<(BlockId, Vec<&[f64]>)> {
        let mut out = vec![(BlockId::Embedding, vec![self.embedding.as_slice()])];
        for (i, l) in self.lstm_layers.iter().enumerate() {
            out.push((BlockId::Lstm(i), l.arrays()));
        }
        if let Some(s) = &self.surplus {
            out.push((BlockId::Surplus, s.arrays()));
        }
        out.push((BlockId::Output, vec![self.w_out.as_slice(), &self.b_out]));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(BlockId, Vec<&mut [f64]>)> {
        let mut out = vec![(BlockId::Embedding, vec![self.embedding.as_mut_slice()])];
        for (i, l) in self.lstm_layers.iter_mut().enumerate() {
            out.push((BlockId::Lstm(i), l.arrays_mut()));
        }
        if let Some(s) = &mut self.surplus {
            out.push((BlockId::Surplus, s.arrays_mut()));
        }
        out.push((BlockId::Output, vec![self.w_out.as_mut_slice(), &mut self.b_out]));
        out
    }

    /// Every parameter value in canonical order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.blocks()
            .into_iter()
            .flat_map(|(_, arrays)| arrays.into_iter().flatten().copied())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.blocks()
            .iter()
            .map(|(_, arrays)| arrays.iter().map(|a| a.len()).sum::<usize>())
            .sum()
    }

    pub fn block_param_count(&self, id: BlockId) -> usize {
        self.blocks()
            .into_iter()
            .find(|(b, _)| *b == id)
            .map(|(_, arrays)| arrays.iter().map(|a| a.len()).sum())
            .unwrap_or(0)
    }

    /// Raw values of one block concatenated, for block-wise comparisons.
    pub fn block_values(&self, id: BlockId) -> Option<Vec<f64>> {
        self.blocks()
            .into_iter()
            .find(|(b, _)| *b == id)
            .map(|(_, arrays)| arrays.concat())
    }

    pub fn all_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, arrays)| arrays.iter().all(|a| a.iter().all(|x| x.is_finite())))
    }

    /// Rounds every value to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for (_, arrays) in self.blocks_mut() {
            for a in arrays {
                for x in a.iter_mut() {
                    *x = *x as f32 as f64;
                }
            }
        }
    }

    /// Mutable access to the `index`-th scalar in canonical order.
    pub fn scalar_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for (_, arrays) in self.blocks_mut() {
            for a in arrays {
                if index < a.len() {
                    return Some(&mut a[index]);
                }
                index -= a.len();
            }
        }
        None
    }

    /// Block ids whose values differ (bitwise) between two congruent models.
    pub fn differing_blocks(&self, other: &ModelParams) -> Vec<BlockId> {
        let theirs = other.blocks();
        self.blocks()
            .into_iter()
            .filter(|(id, arrays)| match theirs.iter().find(|(b, _)| b == id) {
                Some((_, other_arrays)) => {
                    arrays.len() != other_arrays.len()
                        || arrays.iter().zip(other_arrays).any(|(a, b)| {
                            a.len() != b.len() || a.iter().zip(b.iter()).any(|(x, y)| x.to_bits() != y.to_bits())
                        })
                }
                None => true,
            })
            .map(|(id, _)| id)
            .collect()
    }
}

/// Per-block trainable flags for one model layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableMask {
    pub embedding: bool,
    pub lstm: Vec<bool>,
    pub surplus: Option<bool>,
    pub output: bool,
}

impl TrainableMask {
    pub fn all_trainable(params: &ModelParams) -> Self {
        Self::uniform(params, true)
    }

    pub fn all_frozen(params: &ModelParams) -> Self {
        Self::uniform(params, false)
    }

    fn uniform(params: &ModelParams, value: bool) -> Self {
        Self {
            embedding: value,
            lstm: vec![value; params.num_layers()],
            surplus: params.surplus.as_ref().map(|_| value),
            output: value,
        }
    }

    pub fn is_trainable(&self, id: BlockId) -> bool {
        match id {
            BlockId::Embedding => self.embedding,
            BlockId::Lstm(i) => self.lstm.get(i).copied().unwrap_or(false),
            BlockId::Surplus => self.surplus.unwrap_or(false),
            BlockId::Output => self.output,
        }
    }

    pub fn any_trainable(&self) -> bool {
        self.embedding || self.output || self.surplus == Some(true) || self.lstm.iter().any(|&b| b)
    }

    pub fn check_congruent(&self, params: &ModelParams) -> Result<()> {
        if self.lstm.len() != params.num_layers() || self.surplus.is_some() != params.surplus.is_some() {
            return Err(Error::Shape(format!(
                "mask ({} lstm layers, surplus {}) does not match model ({} lstm layers, surplus {})",
                self.lstm.len(),
                self.surplus.is_some(),
                params.num_layers(),
                params.surplus.is_some()
            )));
        }
        Ok(())
    }

    pub fn trainable_blocks(&self, params: &ModelParams) -> Vec<BlockId> {
        params.block_ids().into_iter().filter(|&b| self.is_trainable(b)).collect()
    }

    pub fn trainable_param_count(&self, params: &ModelParams) -> usize {
        self.trainable_blocks(params)
            .into_iter()
            .map(|b| params.block_param_count(b))
            .sum()
    }
}

/// Gradients, shape-congruent with the [`ModelParams`] they were taken of.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStore(pub ModelParams);

impl GradientStore {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientStore(params.zeros_like())
    }

    pub fn params(&self) -> &ModelParams {
        &self.0
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.0
    }

    /// Resets every entry to zero without reallocating.
    pub fn clear(&mut self) {
        for (_, arrays) in self.0.blocks_mut() {
            for a in arrays {
                a.fill(0.0);
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.flat_values().iter().all(|&x| x == 0.0)
    }

    /// `self += alpha · other`
    pub fn add_scaled(&mut self, alpha: f64, other: &GradientStore) {
        for ((_, mine), (_, theirs)) in self.0.blocks_mut().into_iter().zip(other.0.blocks()) {
            for (a, b) in mine.into_iter().zip(theirs) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += alpha * y;
                }
            }
        }
    }

    /// Squared L2 norm over the blocks the mask marks trainable.
    pub fn norm_sq(&self, mask: &TrainableMask) -> f64 {
        self.0
            .blocks()
            .iter()
            .filter(|(id, _)| mask.is_trainable(*id))
            .flat_map(|(_, arrays)| arrays.iter().flat_map(|a| a.iter()))
            .map(|x| x * x)
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.0.all_finite()
    }
}
