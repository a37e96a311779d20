//! Style similarity: word distributions, their smoothed cross entropy, the
//! persona similarity matrix and the style-convergence experiment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::corpus::{Fingerprint, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{batch_generate, Dataset, DecodeConfig, LanguageModel};
use crate::transfer::{finetune_with_hook, SchemeSpec};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Normalised word histogram over a vocabulary. `<eos>` is never counted.
#[derive(Debug, Clone, PartialEq)]
pub struct WordDistribution {
    probs: Vec<f64>,
    support_size: usize,
    source_token_count: usize,
    fingerprint: Fingerprint,
}

impl WordDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn support_size(&self) -> usize {
        self.support_size
    }

    pub fn source_token_count(&self) -> usize {
        self.source_token_count
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

/// Counts every id except `<eos>` and normalises.
pub fn word_distribution(ids: &[usize], vocab: &Vocabulary) -> Result<WordDistribution> {
    let mut counts = vec![0u64; vocab.len()];
    let mut total = 0u64;
    for &id in ids {
        if id >= vocab.len() {
            return Err(Error::Input(format!(
                "token id {id} out of range for vocabulary of size {}",
                vocab.len()
            )));
        }
        if id != Vocabulary::EOS {
            counts[id] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Data("cannot build a word distribution from an empty corpus".into()));
    }
    Ok(WordDistribution {
        probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        support_size: counts.iter().filter(|&&c| c > 0).count(),
        source_token_count: total as usize,
        fingerprint: vocab.fingerprint(),
    })
}

/// [`word_distribution`] over the concatenation of several sequences.
pub fn corpus_distribution(corpus: &[TokenSequence], vocab: &Vocabulary) -> Result<WordDistribution> {
    let ids: Vec<usize> = corpus.iter().flat_map(|s| s.ids().iter().copied()).collect();
    word_distribution(&ids, vocab)
}

/// `−Σ p(x) ln q̃(x)` with `q̃ = (q + ε) / (1 + Vε)`.
pub fn style_cross_entropy(p: &WordDistribution, q: &WordDistribution, epsilon: f64) -> Result<f64> {
    if p.fingerprint != q.fingerprint || p.probs.len() != q.probs.len() {
        return Err(Error::Input(format!(
            "distributions over different vocabularies ({} vs {})",
            p.fingerprint, q.fingerprint
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("smoothing epsilon must be positive, got {epsilon}")));
    }
    let norm = 1.0 + q.probs.len() as f64 * epsilon;
    Ok(p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| -pi * ((qi + epsilon) / norm).ln())
        .sum())
}

/// Square table of cross entropies, rows are the measured corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("corpus");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.values) {
            out.push_str(label);
            for v in row {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out
    }

    /// Column index of each row's smallest entry.
    pub fn row_argmins(&self) -> Vec<usize> {
        self.values
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(0, |best, (j, v)| if *v < row[best] { j } else { best })
            })
            .collect()
    }
}

/// Seeded split of a corpus's sequences into two disjoint halves.
fn split_halves(corpus: &[TokenSequence], seed: u64) -> (Vec<TokenSequence>, Vec<TokenSequence>) {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = corpus.len() / 2;
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect();
    (pick(&order[..half]), pick(&order[half..]))
}

/// Entry `(i, j)` is the cross entropy of corpus `i` measured against corpus
/// `j`. Diagonal entries compare two seeded disjoint halves of the corpus.
pub fn similarity_matrix(
    corpora: &[(String, Vec<TokenSequence>)],
    vocab: &Vocabulary,
    epsilon: f64,
    seed: u64,
) -> Result<SimilarityMatrix> {
    if corpora.len() < 2 {
        return Err(Error::Config("a similarity matrix needs at least two corpora".into()));
    }
    let mut full = Vec::with_capacity(corpora.len());
    for (label, corpus) in corpora {
        if corpus.len() < 2 {
            return Err(Error::Data(format!(
                "corpus {label:?} needs at least two sequences to split into halves"
            )));
        }
        full.push(corpus_distribution(corpus, vocab)?);
    }
    let mut values = vec![vec![0.0; corpora.len()]; corpora.len()];
    for (i, (label, corpus)) in corpora.iter().enumerate() {
        for j in 0..corpora.len() {
            values[i][j] = if i == j {
                let (a, b) = split_halves(corpus, seed.wrapping_add(i as u64));
                let da = corpus_distribution(&a, vocab)
                    .map_err(|e| Error::Data(format!("first half of {label:?}: {e}")))?;
                let db = corpus_distribution(&b, vocab)
                    .map_err(|e| Error::Data(format!("second half of {label:?}: {e}")))?;
                style_cross_entropy(&da, &db, epsilon)?
            } else {
                style_cross_entropy(&full[i], &full[j], epsilon)?
            };
        }
    }
    Ok(SimilarityMatrix {
        labels: corpora.iter().map(|(l, _)| l.clone()).collect(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub target: String,
    pub scheme: String,
    pub epoch: usize,
    pub cross_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn get(&self, target: &str, scheme: &str, epoch: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.target == target && r.scheme == scheme && r.epoch == epoch)
            .map(|r| r.cross_entropy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("target,scheme,epoch,cross_entropy\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{:?}\n", r.target, r.scheme, r.epoch, r.cross_entropy));
        }
        out
    }
}

/// Everything a style-convergence run needs besides the scheme.
pub struct ConvergenceSetup<'a> {
    pub general: &'a Checkpoint,
    pub persona: &'a Dataset,
    pub vocab: &'a Vocabulary,
    pub targets: &'a [(String, WordDistribution)],
    pub probe_epochs: &'a [usize],
    pub test_inputs: &'a [TokenSequence],
    pub train: &'a TrainConfig,
    pub decode: &'a DecodeConfig,
    pub epsilon: f64,
}

fn generated_distribution(
    model: &LanguageModel,
    setup: &ConvergenceSetup<'_>,
) -> Result<WordDistribution> {
    let outputs = batch_generate(model, setup.test_inputs, setup.decode)?;
    corpus_distribution(&outputs, setup.vocab)
        .map_err(|e| Error::Data(format!("generated outputs carry no words: {e}")))
}

/// Fine-tunes under `scheme` and, at each probe epoch, measures the word
/// distribution of generated outputs against every target. Epoch 0 is the
/// untouched general model.
pub fn style_convergence(setup: &ConvergenceSetup<'_>, scheme: SchemeSpec) -> Result<ConvergenceTable> {
    let probes = setup.probe_epochs;
    if probes.is_empty() || probes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("probe epochs must be strictly ascending, got {probes:?}")));
    }
    let mut snapshots: BTreeMap<usize, WordDistribution> = BTreeMap::new();
    if probes[0] == 0 {
        snapshots.insert(0, generated_distribution(&setup.general.model, setup)?);
    }
    let last = *probes.last().expect("non-empty");
    if last > 0 {
        let config = TrainConfig {
            epochs: last,
            ..setup.train.clone()
        };
        finetune_with_hook(setup.general, setup.persona, None, scheme, &config, |m, model| {
            if probes.contains(&m.epoch) {
                snapshots.insert(m.epoch, generated_distribution(model, setup)?);
            }
            Ok(())
        })?;
    }
    let mut table = ConvergenceTable::default();
    for (target, dist) in setup.targets {
        for (&epoch, generated) in &snapshots {
            table.rows.push(ConvergenceRow {
                target: target.clone(),
                scheme: scheme.label(),
                epoch,
                cross_entropy: style_cross_entropy(generated, dist, setup.epsilon)?,
            });
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["<eos>", "<unk>", "a", "b", "c", "d"].map(String::from).to_vec()).unwrap()
    }

    #[test]
    fn counting_example() {
        let v = vocab();
        let d = word_distribution(&[2, 2, 3], &v).unwrap();
        assert_eq!(d.probs(), &[0.0, 0.0, 2.0 / 3.0, 1.0 / 3.0, 0.0, 0.0]);
        assert_eq!(d.support_size(), 2);
        assert_eq!(d.source_token_count(), 3);
        let point = word_distribution(&[4], &v).unwrap();
        assert_eq!(point.probs()[4], 1.0);
        assert!(word_distribution(&[], &v).is_err());
        assert!(word_distribution(&[0, 0], &v).is_err());
        assert!(word_distribution(&[9], &v).is_err());
    }

    #[test]
    fn eos_is_not_a_word() {
        let v = vocab();
        assert_eq!(
            word_distribution(&[2, 0, 3, 0], &v).unwrap(),
            word_distribution(&[2, 3], &v).unwrap()
        );
    }

    #[test]
    fn textbook_cross_entropies() {
        let v = vocab();
        let uniform = word_distribution(&[1, 2, 3, 4, 5, 1, 2, 3, 4, 5], &v).unwrap();
        let ce = style_cross_entropy(&uniform, &uniform, 1e-15).unwrap();
        assert!((ce - 5f64.ln()).abs() < 1e-12);
        let point = word_distribution(&[2], &v).unwrap();
        let half = word_distribution(&[2, 3], &v).unwrap();
        assert!((style_cross_entropy(&point, &half, 1e-15).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_vocabularies() {
        let other =
            Vocabulary::from_tokens(["<eos>", "<unk>", "a", "b", "c", "e"].map(String::from).to_vec()).unwrap();
        let p = word_distribution(&[2], &vocab()).unwrap();
        let q = word_distribution(&[2], &other).unwrap();
        assert!(style_cross_entropy(&p, &q, DEFAULT_EPSILON).is_err());
    }

    #[test]
    fn identical_corpora_give_equal_off_diagonal_entries() {
        let v = vocab();
        let corpus: Vec<TokenSequence> = [[2, 3, 0], [3, 4, 0], [2, 5, 0], [4, 4, 0]]
            .iter()
            .map(|s| TokenSequence::new(s.to_vec()))
            .collect();
        let m = similarity_matrix(
            &[("x".into(), corpus.clone()), ("y".into(), corpus)],
            &v,
            DEFAULT_EPSILON,
            3,
        )
        .unwrap();
        assert_eq!(m.values[0][1], m.values[1][0]);
        assert!(m.to_csv().starts_with("corpus,x,y\nx,"));
    }
}
