//! Personalisation of a general model: the three transfer schemes, surplus
//! layer insertion and the fine-tuning drivers.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, TrainingMeta};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::models::{perplexity, train_with_hook, Dataset, EpochMetrics, LanguageModel};
use crate::netcore::{InitConfig, LstmLayerParams, ModelParams, SurplusBlock, SurplusKind, TrainableMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeSpec {
    /// Retrain every block on the personal data.
    RelearnWhole,
    /// Insert a surplus layer and train only that.
    SurplusLayer(SurplusKind),
    /// Freeze LSTM layers `1..=n`; train everything else.
    FixedFirstN(usize),
}

impl SchemeSpec {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if let SchemeSpec::FixedFirstN(n) = *self {
            let layers = params.num_layers();
            if n == 0 || n >= layers {
                return Err(Error::Config(format!(
                    "fixed-first-n needs 0 < n < {layers} LSTM layers, got n = {n}"
                )));
            }
        }
        Ok(())
    }

    /// Short stable label, used in file names and checkpoint lineage.
    pub fn label(&self) -> String {
        match self {
            SchemeSpec::RelearnWhole => "relearn".into(),
            SchemeSpec::SurplusLayer(kind) => format!("surplus-{}", kind.name()),
            SchemeSpec::FixedFirstN(n) => format!("fixed-{n}"),
        }
    }
}

impl fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Which blocks a scheme trains.
pub fn derive_mask(scheme: SchemeSpec, params: &ModelParams) -> Result<TrainableMask> {
    scheme.validate(params)?;
    let mut mask = TrainableMask::all_trainable(params);
    match scheme {
        SchemeSpec::RelearnWhole => {}
        SchemeSpec::SurplusLayer(kind) => {
            match &params.surplus {
                None => return Err(Error::Config("surplus scheme needs a model with a surplus block".into())),
                Some(s) if s.kind() != kind => {
                    return Err(Error::Config(format!(
                        "model carries a {} surplus block, scheme asks for {}",
                        s.kind().name(),
                        kind.name()
                    )))
                }
                Some(_) => {}
            }
            mask = TrainableMask::all_frozen(params);
            mask.surplus = Some(true);
        }
        SchemeSpec::FixedFirstN(n) => {
            for frozen in mask.lstm.iter_mut().take(n) {
                *frozen = false;
            }
        }
    }
    Ok(mask)
}

/// Returns a copy of `params` with a surplus block between the last LSTM
/// layer and the output projection. The affine kind starts as the exact
/// identity; the LSTM kind is randomly initialised from `seed`.
pub fn insert_surplus(params: &ModelParams, kind: SurplusKind, seed: u64) -> Result<ModelParams> {
    if let Some(s) = &params.surplus {
        return Err(Error::Config(format!(
            "model already carries a {} surplus block",
            s.kind().name()
        )));
    }
    let h = params.hidden();
    let block = match kind {
        SurplusKind::Affine => SurplusBlock::identity(h),
        SurplusKind::Lstm => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            SurplusBlock::Lstm(LstmLayerParams::random(h, h, &InitConfig::default(), &mut rng))
        }
    };
    Ok(ModelParams {
        surplus: Some(block),
        ..params.clone()
    })
}

/// The model a scheme starts fine-tuning from, and its mask. Inserts the
/// surplus block when the scheme needs one and the model lacks it.
pub fn prepare(general: &LanguageModel, scheme: SchemeSpec, seed: u64) -> Result<(LanguageModel, TrainableMask)> {
    let mut model = general.clone();
    if let SchemeSpec::SurplusLayer(kind) = scheme {
        if model.params.surplus.is_none() {
            model.params = insert_surplus(&model.params, kind, seed)?;
        }
    }
    let mask = derive_mask(scheme, &model.params)?;
    Ok((model, mask))
}

/// Fine-tunes a general checkpoint on personal data under a scheme.
pub fn finetune(
    general: &Checkpoint,
    personal: &Dataset,
    valid: Option<&Dataset>,
    scheme: SchemeSpec,
    config: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochMetrics>)> {
    finetune_with_hook(general, personal, valid, scheme, config, |_, _| Ok(()))
}

pub fn finetune_with_hook<F>(
    general: &Checkpoint,
    personal: &Dataset,
    valid: Option<&Dataset>,
    scheme: SchemeSpec,
    config: &TrainConfig,
    on_epoch: F,
) -> Result<(Checkpoint, Vec<EpochMetrics>)>
where
    F: FnMut(&EpochMetrics, &LanguageModel) -> Result<()>,
{
    if personal.is_empty() {
        return Err(Error::Config("personal dataset is empty".into()));
    }
    if personal.fingerprint != general.model.vocab_fingerprint {
        return Err(Error::Data(format!(
            "personal data encoded with vocabulary {}, checkpoint uses {}",
            personal.fingerprint, general.model.vocab_fingerprint
        )));
    }
    if general.precision != config.precision {
        return Err(Error::checkpoint(
            "precision",
            format!(
                "checkpoint stores {}-bit parameters, run expects {}-bit",
                general.precision, config.precision
            ),
        ));
    }
    let (mut model, mask) = prepare(&general.model, scheme, config.seed)?;
    let trace = train_with_hook(&mut model, personal, valid, config, &mask, on_epoch)?;
    let mut lineage = general.meta.lineage.clone();
    lineage.push(format!("finetune:{}", scheme.label()));
    let meta = TrainingMeta {
        epochs_completed: general.meta.epochs_completed + trace.len(),
        lineage,
    };
    Ok((Checkpoint::new(model, general.precision, meta), trace))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub size: usize,
    pub perplexity: f64,
}

/// Fine-tunes a fresh copy of `general` on seeded subsamples of `personal`
/// of each size and records the final validation perplexity. Subsamples are
/// nested prefixes of one seeded permutation, kept in dataset order; the
/// size-0 row is the general model itself.
pub fn data_size_sweep(
    general: &Checkpoint,
    personal: &Dataset,
    valid: &Dataset,
    sizes: &[usize],
    scheme: SchemeSpec,
    config: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config(format!("sweep sizes must be ascending, got {sizes:?}")));
    }
    if let Some(&max) = sizes.last() {
        if max > personal.len() {
            return Err(Error::Config(format!(
                "sweep size {max} exceeds the {} available examples",
                personal.len()
            )));
        }
    }
    let mut order: Vec<usize> = (0..personal.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let perplexity = if size == 0 {
            perplexity(&general.model, valid)?
        } else {
            let mut picked = order[..size].to_vec();
            picked.sort_unstable();
            let subset = personal.subset(&picked)?;
            let (tuned, _) = finetune(general, &subset, None, scheme, config)?;
            perplexity(&tuned.model, valid)?
        };
        rows.push(SweepRow { size, perplexity });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("size,perplexity\n");
    for r in rows {
        out.push_str(&format!("{},{:?}\n", r.size, r.perplexity));
    }
    out
}
