//! The two task models, sentence completion and message-reply prediction,
//! with their training loop, perplexity and decoding.
//!
//! Both tasks share one network. A message-reply pair is read as the single
//! sequence `<eos> message <eos> reply <eos>` and only the reply positions
//! (starting with the prediction made on the border `<eos>`) are scored, so
//! the hidden state after the border acts as the context vector.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Precision, TrainConfig};
use crate::corpus::{Fingerprint, MessageReplyPair, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::netcore::{
    accumulate_gradients, forward_from, sample_loss, sgd_step, step, GradientStore, LstmState, ModelParams, Sample,
    TrainableMask,
};

const EOS: usize = Vocabulary::EOS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    SentenceCompletion,
    MessageReply,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::SentenceCompletion => "sentence-completion",
            Task::MessageReply => "message-reply",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence-completion" => Ok(Task::SentenceCompletion),
            "message-reply" => Ok(Task::MessageReply),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Network parameters tagged with their task and the vocabulary they were
/// trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    pub params: ModelParams,
    pub task: Task,
    pub vocab_fingerprint: Fingerprint,
}

impl LanguageModel {
    pub fn new(params: ModelParams, task: Task, vocab_fingerprint: Fingerprint) -> Self {
        Self {
            params,
            task,
            vocab_fingerprint,
        }
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.fingerprint != self.vocab_fingerprint {
            return Err(Error::Data(format!(
                "dataset vocabulary {} does not match model vocabulary {}",
                data.fingerprint, self.vocab_fingerprint
            )));
        }
        if data.task() != self.task {
            return Err(Error::Data(format!(
                "{} dataset given to a {} model",
                data.task(),
                self.task
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Examples {
    Sentences(Vec<TokenSequence>),
    Pairs(Vec<MessageReplyPair>),
}

/// Encoded training or evaluation data plus the fingerprint of the
/// vocabulary used to encode it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub fingerprint: Fingerprint,
    pub examples: Examples,
}

impl Dataset {
    pub fn sentences(vocab: &Vocabulary, sentences: Vec<TokenSequence>) -> Self {
        Self {
            fingerprint: vocab.fingerprint(),
            examples: Examples::Sentences(sentences),
        }
    }

    pub fn pairs(vocab: &Vocabulary, pairs: Vec<MessageReplyPair>) -> Self {
        Self {
            fingerprint: vocab.fingerprint(),
            examples: Examples::Pairs(pairs),
        }
    }

    pub fn task(&self) -> Task {
        match self.examples {
            Examples::Sentences(_) => Task::SentenceCompletion,
            Examples::Pairs(_) => Task::MessageReply,
        }
    }

    pub fn len(&self) -> usize {
        match &self.examples {
            Examples::Sentences(s) => s.len(),
            Examples::Pairs(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Training samples in dataset order.
    pub fn samples(&self) -> Result<Vec<Sample>> {
        match &self.examples {
            Examples::Sentences(s) => s.iter().map(sentence_sample).collect(),
            Examples::Pairs(p) => p.iter().map(pair_sample).collect(),
        }
    }

    /// The examples at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let pick = |len: usize| -> Result<()> {
            match indices.iter().find(|&&i| i >= len) {
                Some(i) => Err(Error::Input(format!("index {i} out of range for dataset of {len}"))),
                None => Ok(()),
            }
        };
        let examples = match &self.examples {
            Examples::Sentences(s) => {
                pick(s.len())?;
                Examples::Sentences(indices.iter().map(|&i| s[i].clone()).collect())
            }
            Examples::Pairs(p) => {
                pick(p.len())?;
                Examples::Pairs(indices.iter().map(|&i| p[i].clone()).collect())
            }
        };
        Ok(Self {
            fingerprint: self.fingerprint,
            examples,
        })
    }

    /// Seeded random split into `(train, validation)`. The validation part
    /// holds `round(len · fraction)` examples, at least one of each side when
    /// `len ≥ 2`; both keep the original relative order.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!("validation fraction must lie in (0, 1), got {fraction}")));
        }
        let n = self.len();
        if n < 2 {
            return Err(Error::Config(format!("cannot split a dataset of {n} examples")));
        }
        let n_valid = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut valid = order[..n_valid].to_vec();
        let mut train = order[n_valid..].to_vec();
        valid.sort_unstable();
        train.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&valid)?))
    }
}

/// `<eos> w1 … wn` → `w1 … wn <eos>`, every position scored.
pub fn sentence_sample(seq: &TokenSequence) -> Result<Sample> {
    let content = seq.content();
    if content.is_empty() {
        return Err(Error::Data("empty sentence".into()));
    }
    let mut full = Vec::with_capacity(content.len() + 2);
    full.push(EOS);
    full.extend_from_slice(content);
    full.push(EOS);
    Ok(Sample::new(full[..full.len() - 1].to_vec(), full[1..].to_vec(), 0))
}

/// `<eos> m <eos> r` → `m <eos> r <eos>`, scored from the border onwards.
pub fn pair_sample(pair: &MessageReplyPair) -> Result<Sample> {
    let message = pair.message.content();
    let reply = pair.reply.content();
    if message.is_empty() || reply.is_empty() {
        return Err(Error::Data("message and reply must both be non-empty".into()));
    }
    let mut full = Vec::with_capacity(message.len() + reply.len() + 3);
    full.push(EOS);
    full.extend_from_slice(message);
    full.push(EOS);
    full.extend_from_slice(reply);
    full.push(EOS);
    Ok(Sample::new(
        full[..full.len() - 1].to_vec(),
        full[1..].to_vec(),
        message.len() + 1,
    ))
}

/// Metrics recorded at the end of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Token-weighted mean training NLL accumulated during the epoch.
    pub train_nll: f64,
    pub valid_nll: Option<f64>,
}

impl EpochMetrics {
    pub fn train_perplexity(&self) -> f64 {
        self.train_nll.exp()
    }

    pub fn valid_perplexity(&self) -> Option<f64> {
        self.valid_nll.map(f64::exp)
    }
}

/// Renders a trace as `epoch,split,nll,perplexity` CSV rows.
pub fn metrics_csv(trace: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,split,nll,perplexity\n");
    for m in trace {
        out.push_str(&format!("{},train,{:?},{:?}\n", m.epoch, m.train_nll, m.train_perplexity()));
        if let Some(v) = m.valid_nll {
            out.push_str(&format!("{},valid,{:?},{:?}\n", m.epoch, v, v.exp()));
        }
    }
    out
}

/// Trains in place and returns one metric row per epoch.
pub fn train(
    model: &mut LanguageModel,
    data: &Dataset,
    valid: Option<&Dataset>,
    config: &TrainConfig,
    mask: &TrainableMask,
) -> Result<Vec<EpochMetrics>> {
    train_with_hook(model, data, valid, config, mask, |_, _| Ok(()))
}

/// [`train`] with a callback invoked after every epoch, e.g. to snapshot the
/// model.
pub fn train_with_hook<F>(
    model: &mut LanguageModel,
    data: &Dataset,
    valid: Option<&Dataset>,
    config: &TrainConfig,
    mask: &TrainableMask,
    mut on_epoch: F,
) -> Result<Vec<EpochMetrics>>
where
    F: FnMut(&EpochMetrics, &LanguageModel) -> Result<()>,
{
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    model.check_dataset(data)?;
    if let Some(v) = valid {
        model.check_dataset(v)?;
    }
    mask.check_congruent(&model.params)?;

    let samples = data.samples()?;
    for s in &samples {
        s.validate(model.params.vocab_size())?;
    }
    let valid_samples = valid.map(Dataset::samples).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads = GradientStore::zeros_like(&model.params);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut step_no = 0;

    for epoch in 1..=config.epochs {
        let lr = config.lr_for_epoch(epoch);
        order.shuffle(&mut rng);
        let mut nll_sum = 0.0;
        let mut tokens = 0usize;
        for batch in order.chunks(config.batch_size) {
            step_no += 1;
            let batch_tokens: usize = batch.iter().map(|&i| samples[i].scored()).sum();
            grads.clear();
            let mut batch_nll = 0.0;
            for &i in batch {
                batch_nll += accumulate_gradients(
                    &model.params,
                    &samples[i],
                    mask,
                    config.bptt_cap,
                    1.0 / batch_tokens as f64,
                    &mut grads,
                )?;
            }
            if !batch_nll.is_finite() {
                return Err(Error::Training {
                    epoch,
                    step: step_no,
                    reason: format!("non-finite loss {batch_nll}"),
                });
            }
            sgd_step(&mut model.params, &grads, lr, config.clip, mask).map_err(|e| match e {
                Error::Training { reason, .. } => Error::Training {
                    epoch,
                    step: step_no,
                    reason,
                },
                other => other,
            })?;
            if config.precision == Precision::F32 {
                round_trainable_to_f32(&mut model.params, mask);
            }
            nll_sum += batch_nll;
            tokens += batch_tokens;
        }
        let valid_nll = match &valid_samples {
            Some(v) => Some(mean_nll(&model.params, v)?),
            None => None,
        };
        let metrics = EpochMetrics {
            epoch,
            lr,
            train_nll: nll_sum / tokens as f64,
            valid_nll,
        };
        on_epoch(&metrics, model)?;
        trace.push(metrics);
    }
    Ok(trace)
}

fn round_trainable_to_f32(params: &mut ModelParams, mask: &TrainableMask) {
    for (id, arrays) in params.blocks_mut() {
        if mask.is_trainable(id) {
            for a in arrays {
                for x in a.iter_mut() {
                    *x = *x as f32 as f64;
                }
            }
        }
    }
}

/// Token-weighted mean NLL over samples.
fn mean_nll(params: &ModelParams, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for s in samples {
        let n = s.scored();
        total += sample_loss(params, s)? * n as f64;
        tokens += n;
    }
    if tokens == 0 {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    Ok(total / tokens as f64)
}

/// Token-weighted mean NLL in nats, `<eos>` predictions included.
pub fn mean_negative_log_likelihood(model: &LanguageModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("evaluation dataset is empty".into()));
    }
    model.check_dataset(data)?;
    mean_nll(&model.params, &data.samples()?)
}

/// `exp` of the token-weighted mean NLL.
pub fn perplexity(model: &LanguageModel, data: &Dataset) -> Result<f64> {
    Ok(mean_negative_log_likelihood(model, data)?.exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    /// Maximum number of generated tokens, the final `<eos>` included.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            max_len: 30,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        Self {
            max_len,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if let DecodeMode::Sample { temperature } = self.mode {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
            }
        }
        Ok(())
    }
}

/// Index of the largest probability; ties go to the lowest id.
fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

fn sample_tempered<R: Rng>(probs: &[f64], temperature: f64, rng: &mut R) -> usize {
    // p^(1/T) renormalised, computed in log space for stability.
    let logs: Vec<f64> = probs.iter().map(|&p| p.ln() / temperature).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    argmax(probs)
}

/// Reads `context` from a zero state, then decodes until `<eos>` or
/// `max_len` tokens. The returned tokens end with `<eos>` unless the cap hit.
fn decode_after(params: &ModelParams, context: &[usize], cfg: &DecodeConfig, seed: u64) -> Result<Vec<usize>> {
    cfg.validate()?;
    let (rows, mut state): (_, LstmState) = forward_from(params, context, &LstmState::zeros(params))?;
    let mut probs = rows.row(rows.rows() - 1).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < cfg.max_len {
        let next = match cfg.mode {
            DecodeMode::Greedy => argmax(&probs),
            DecodeMode::Sample { temperature } => sample_tempered(&probs, temperature, &mut rng),
        };
        out.push(next);
        if next == EOS {
            break;
        }
        probs = step(params, &mut state, next)?;
    }
    Ok(out)
}

fn require_task(model: &LanguageModel, task: Task) -> Result<()> {
    if model.task != task {
        return Err(Error::Input(format!("operation needs a {task} model, got {}", model.task)));
    }
    Ok(())
}

/// Returns `prefix` followed by the decoded continuation.
pub fn complete_sentence(model: &LanguageModel, prefix: &TokenSequence, cfg: &DecodeConfig) -> Result<TokenSequence> {
    require_task(model, Task::SentenceCompletion)?;
    complete_with_seed(model, prefix, cfg, cfg.seed)
}

fn complete_with_seed(model: &LanguageModel, prefix: &TokenSequence, cfg: &DecodeConfig, seed: u64) -> Result<TokenSequence> {
    let content = prefix.content();
    if content.is_empty() {
        return Err(Error::Input("prefix must be non-empty".into()));
    }
    let mut context = vec![EOS];
    context.extend_from_slice(content);
    let continuation = decode_after(&model.params, &context, cfg, seed)?;
    let mut ids = content.to_vec();
    ids.extend(continuation);
    Ok(TokenSequence::new(ids))
}

/// Reads `<eos> message <eos>` and decodes the reply.
pub fn predict_reply(model: &LanguageModel, message: &TokenSequence, cfg: &DecodeConfig) -> Result<TokenSequence> {
    require_task(model, Task::MessageReply)?;
    reply_with_seed(model, message, cfg, cfg.seed)
}

fn reply_with_seed(model: &LanguageModel, message: &TokenSequence, cfg: &DecodeConfig, seed: u64) -> Result<TokenSequence> {
    let content = message.content();
    if content.is_empty() {
        return Err(Error::Input("message must be non-empty".into()));
    }
    let mut context = Vec::with_capacity(content.len() + 2);
    context.push(EOS);
    context.extend_from_slice(content);
    context.push(EOS);
    Ok(TokenSequence::new(decode_after(&model.params, &context, cfg, seed)?))
}

/// Replies to (or completes) each input in order. In sampling mode input `i`
/// uses seed `cfg.seed + i`.
pub fn batch_generate(model: &LanguageModel, inputs: &[TokenSequence], cfg: &DecodeConfig) -> Result<Vec<TokenSequence>> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let seed = cfg.seed.wrapping_add(i as u64);
            match model.task {
                Task::SentenceCompletion => complete_with_seed(model, input, cfg, seed),
                Task::MessageReply => reply_with_seed(model, input, cfg, seed),
            }
        })
        .collect()
}
