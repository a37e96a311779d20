//! Interpolated modified Kneser-Ney n-gram models.
//!
//! Sentences are padded with `n − 1` begin markers and scored on every real
//! token plus the closing `<eos>`. The highest order uses raw counts; lower
//! orders use continuation counts (number of distinct left extensions),
//! except for n-grams that start with the begin marker, whose only possible
//! left neighbour is padding, so they keep their raw counts.
//!
//! For an order-k context `h` with counts `c(h·)`:
//!
//! ```text
//! p_k(w | h) = max(c(hw) − D_k(c(hw)), 0) / c(h·) + γ_k(h) · p_{k−1}(w | h')
//! γ_k(h)     = (D_k1 · N1(h·) + D_k2 · N2(h·) + D_k3 · N3+(h·)) / c(h·)
//! ```
//!
//! where `h'` drops the oldest token, unseen contexts defer entirely to the
//! lower order, and `p_0(w) = 1 / V`.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::corpus::{Fingerprint, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{Dataset, Examples};

/// Internal id of the begin-of-sentence marker. Never predicted.
pub const BOS: usize = usize::MAX;
pub const BOS_TOKEN: &str = "<s>";
pub const FALLBACK_DISCOUNT: f64 = 0.75;
/// log10 probability written for entries that exist only as contexts.
const CONTEXT_ONLY: f64 = -99.0;

/// Raw n-gram counts of orders `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramCounts {
    order: usize,
    counts: Vec<HashMap<Vec<usize>, u64>>,
}

impl NgramCounts {
    pub fn new(order: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        Ok(Self {
            order,
            counts: vec![HashMap::new(); order],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn is_empty(&self) -> bool {
        self.counts[0].is_empty()
    }

    /// Counts one sentence; a trailing `<eos>` is optional in the input.
    pub fn add_sentence(&mut self, seq: &TokenSequence) {
        let n = self.order;
        let mut padded = vec![BOS; n - 1];
        padded.extend_from_slice(seq.content());
        padded.push(Vocabulary::EOS);
        for i in n - 1..padded.len() {
            for k in 1..=n {
                *self.counts[k - 1].entry(padded[i + 1 - k..=i].to_vec()).or_insert(0) += 1;
            }
        }
    }

    /// Adds another shard's counts.
    pub fn merge(&mut self, other: &NgramCounts) -> Result<()> {
        if other.order != self.order {
            return Err(Error::Config(format!(
                "cannot merge order-{} counts into order-{}",
                other.order, self.order
            )));
        }
        for (mine, theirs) in self.counts.iter_mut().zip(&other.counts) {
            for (g, c) in theirs {
                *mine.entry(g.clone()).or_insert(0) += c;
            }
        }
        Ok(())
    }

    /// Raw counts of all `k`-grams.
    pub fn raw(&self, k: usize) -> &HashMap<Vec<usize>, u64> {
        &self.counts[k - 1]
    }

    pub fn count(&self, ngram: &[usize]) -> u64 {
        if ngram.is_empty() || ngram.len() > self.order {
            return 0;
        }
        self.counts[ngram.len() - 1].get(ngram).copied().unwrap_or(0)
    }

    /// The counts the estimator uses at order `k`.
    pub fn adjusted(&self, k: usize) -> HashMap<Vec<usize>, u64> {
        if k == self.order {
            return self.counts[k - 1].clone();
        }
        let mut out: HashMap<Vec<usize>, u64> = HashMap::with_capacity(self.counts[k - 1].len());
        for g in self.counts[k].keys() {
            if g[1] != BOS {
                *out.entry(g[1..].to_vec()).or_insert(0) += 1;
            }
        }
        for (g, &c) in &self.counts[k - 1] {
            if g[0] == BOS {
                out.insert(g.clone(), c);
            }
        }
        out
    }

    /// Number of order-`k` n-grams whose adjusted count is 1, 2, 3 and 4.
    pub fn count_of_counts(&self, k: usize) -> [u64; 4] {
        count_of_counts(&self.adjusted(k))
    }
}

fn count_of_counts(counts: &HashMap<Vec<usize>, u64>) -> [u64; 4] {
    let mut n = [0u64; 4];
    for &c in counts.values() {
        if (1..=4).contains(&c) {
            n[c as usize - 1] += 1;
        }
    }
    n
}

pub fn count_ngrams(corpus: &[TokenSequence], n: usize) -> Result<NgramCounts> {
    let mut counts = NgramCounts::new(n)?;
    for s in corpus {
        counts.add_sentence(s);
    }
    Ok(counts)
}

/// `[D1, D2, D3+]` from count-of-counts, or the fallback discount when the
/// statistics are degenerate.
pub fn modified_discounts(n: [u64; 4]) -> [f64; 3] {
    if n.contains(&0) {
        return [FALLBACK_DISCOUNT; 3];
    }
    let [n1, n2, n3, n4] = n.map(|c| c as f64);
    let y = n1 / (n1 + 2.0 * n2);
    let d = [1.0 - 2.0 * y * n2 / n1, 2.0 - 3.0 * y * n3 / n2, 3.0 - 4.0 * y * n4 / n3];
    if d.iter().enumerate().all(|(j, &dj)| dj >= 0.0 && dj < (j + 1) as f64) {
        d
    } else {
        [FALLBACK_DISCOUNT; 3]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ContextStats {
    total: u64,
    /// Discount mass redistributed to the lower order, `γ · total`.
    mass: f64,
    next: HashMap<usize, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KneserNeyModel {
    order: usize,
    vocab_size: usize,
    fingerprint: Fingerprint,
    discounts: Vec<[f64; 3]>,
    /// Index `k − 1`: order-`k` contexts (length `k − 1`).
    contexts: Vec<HashMap<Vec<usize>, ContextStats>>,
}

pub fn estimate_kn(counts: &NgramCounts, vocab: &Vocabulary) -> Result<KneserNeyModel> {
    if counts.is_empty() {
        return Err(Error::Data("cannot estimate a model from empty counts".into()));
    }
    let v = vocab.len();
    if let Some(bad) = counts.counts[0].keys().find(|g| g[0] >= v) {
        return Err(Error::Input(format!(
            "token id {} out of range for vocabulary of size {v}",
            bad[0]
        )));
    }
    let mut discounts = Vec::with_capacity(counts.order);
    let mut contexts = Vec::with_capacity(counts.order);
    for k in 1..=counts.order {
        let adjusted = counts.adjusted(k);
        let d = modified_discounts(count_of_counts(&adjusted));
        let mut table: HashMap<Vec<usize>, ContextStats> = HashMap::new();
        for (g, &c) in &adjusted {
            let stats = table.entry(g[..k - 1].to_vec()).or_insert_with(|| ContextStats {
                total: 0,
                mass: 0.0,
                next: HashMap::new(),
            });
            stats.total += c;
            stats.mass += d[(c.min(3) - 1) as usize];
            stats.next.insert(g[k - 1], c);
        }
        discounts.push(d);
        contexts.push(table);
    }
    Ok(KneserNeyModel {
        order: counts.order,
        vocab_size: v,
        fingerprint: vocab.fingerprint(),
        discounts,
        contexts,
    })
}

impl KneserNeyModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    /// `[D1, D2, D3+]` used at order `k`.
    pub fn discounts(&self, k: usize) -> [f64; 3] {
        self.discounts[k - 1]
    }

    /// Every context with at least one observed continuation, as
    /// `(order, context)`.
    pub fn seen_contexts(&self) -> Vec<(usize, Vec<usize>)> {
        let mut out: Vec<(usize, Vec<usize>)> = self
            .contexts
            .iter()
            .enumerate()
            .flat_map(|(i, t)| t.keys().map(move |c| (i + 1, c.clone())))
            .collect();
        out.sort();
        out
    }

    /// Back-off weight `γ_k(h)`; 1 for an unseen context.
    pub fn gamma(&self, context: &[usize]) -> f64 {
        match self.contexts.get(context.len()).and_then(|t| t.get(context)) {
            Some(s) => s.mass / s.total as f64,
            None => 1.0,
        }
    }

    /// `p(w | history)` using at most the last `n − 1` history tokens. Begin
    /// markers in the history are [`BOS`].
    pub fn prob(&self, history: &[usize], w: usize) -> f64 {
        if w >= self.vocab_size {
            return 0.0;
        }
        let keep = history.len().min(self.order - 1);
        let history = &history[history.len() - keep..];
        let mut p = 1.0 / self.vocab_size as f64;
        for k in 1..=keep + 1 {
            let context = &history[history.len() - (k - 1)..];
            if let Some(s) = self.contexts[k - 1].get(context) {
                let c = s.next.get(&w).copied().unwrap_or(0);
                let discounted = if c == 0 {
                    0.0
                } else {
                    (c as f64 - self.discounts[k - 1][(c.min(3) - 1) as usize]).max(0.0)
                };
                p = (discounted + s.mass * p) / s.total as f64;
            }
        }
        p
    }

    /// Summed natural-log loss of one sentence and the number of predicted
    /// tokens (content plus `<eos>`).
    pub fn sentence_nll(&self, seq: &TokenSequence) -> (f64, usize) {
        let mut history = vec![BOS; self.order - 1];
        let mut nll = 0.0;
        let targets = seq.content().iter().copied().chain(std::iter::once(Vocabulary::EOS));
        let mut n = 0;
        for w in targets {
            nll -= self.prob(&history, w).ln();
            history.push(w);
            n += 1;
        }
        (nll, n)
    }

    /// Writes the model as text: a `\data\` section with per-order counts,
    /// then `\k-grams:` sections of `log10_prob<TAB>tokens<TAB>log10_backoff`
    /// lines. Probabilities are the interpolated ones, so a reader needs only
    /// standard back-off lookups.
    pub fn to_arpa(&self, vocab: &Vocabulary) -> Result<String> {
        if vocab.fingerprint() != self.fingerprint {
            return Err(Error::Data("vocabulary does not match the model".into()));
        }
        if vocab.contains(BOS_TOKEN) {
            return Err(Error::Data(format!("vocabulary already uses the reserved token {BOS_TOKEN}")));
        }
        let mut sections: Vec<Vec<(Vec<usize>, f64)>> = Vec::with_capacity(self.order);
        for k in 1..=self.order {
            let mut entries: HashMap<Vec<usize>, f64> = HashMap::new();
            if k == 1 {
                for w in 0..self.vocab_size {
                    entries.insert(vec![w], self.prob(&[], w).log10());
                }
            } else {
                for (context, stats) in &self.contexts[k - 1] {
                    for &w in stats.next.keys() {
                        let mut g = context.clone();
                        g.push(w);
                        entries.insert(g, self.prob(context, w).log10());
                    }
                }
            }
            if k < self.order {
                for context in self.contexts[k].keys() {
                    entries.entry(context.clone()).or_insert(CONTEXT_ONLY);
                }
            }
            let mut sorted: Vec<(Vec<usize>, f64)> = entries.into_iter().collect();
            sorted.sort_by(|a, b| a.0.cmp(&b.0));
            sections.push(sorted);
        }

        let name = |id: usize| if id == BOS { BOS_TOKEN } else { vocab.token(id).expect("id within vocabulary") };
        let mut out = String::from("\\data\\\n");
        for (k, s) in sections.iter().enumerate() {
            writeln!(out, "ngram {}={}", k + 1, s.len()).expect("write to string");
        }
        for (k, s) in sections.iter().enumerate() {
            writeln!(out, "\n\\{}-grams:", k + 1).expect("write to string");
            for (g, lp) in s {
                let tokens: Vec<&str> = g.iter().map(|&id| name(id)).collect();
                let backoff = match self.contexts.get(k + 1).and_then(|t| t.get(g)) {
                    Some(st) => (st.mass / st.total as f64).log10(),
                    None => 0.0,
                };
                writeln!(out, "{lp:?}\t{}\t{backoff:?}", tokens.join(" ")).expect("write to string");
            }
        }
        out.push_str("\n\\end\\\n");
        Ok(out)
    }
}

fn check_sentences(data: &Dataset, fingerprint: Fingerprint) -> Result<&[TokenSequence]> {
    if data.fingerprint != fingerprint {
        return Err(Error::Data(format!(
            "dataset vocabulary {} does not match model vocabulary {fingerprint}",
            data.fingerprint
        )));
    }
    match &data.examples {
        Examples::Sentences(s) if !s.is_empty() => Ok(s),
        Examples::Sentences(_) => Err(Error::Config("evaluation dataset is empty".into())),
        Examples::Pairs(_) => Err(Error::Data("n-gram models are evaluated on sentences".into())),
    }
}

/// `exp` of the mean per-token NLL, `<eos>` included and begin markers
/// excluded, matching the neural models' convention.
pub fn ngram_perplexity(model: &KneserNeyModel, data: &Dataset) -> Result<f64> {
    let sentences = check_sentences(data, model.fingerprint)?;
    let (mut nll, mut n) = (0.0, 0usize);
    for s in sentences {
        let (l, k) = model.sentence_nll(s);
        nll += l;
        n += k;
    }
    Ok((nll / n as f64).exp())
}

/// A model read back from [`KneserNeyModel::to_arpa`] output, queried with
/// plain back-off lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct ArpaModel {
    order: usize,
    vocab_size: usize,
    fingerprint: Fingerprint,
    /// Index `k − 1`: k-gram → (log10 prob, log10 backoff).
    entries: Vec<HashMap<Vec<usize>, (f64, f64)>>,
}

impl ArpaModel {
    pub fn parse(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let bad = |n: usize, what: &str| Error::Data(format!("n-gram file line {}: {what}", n + 1));
        let mut declared: Vec<usize> = Vec::new();
        let mut entries: Vec<HashMap<Vec<usize>, (f64, f64)>> = Vec::new();
        let mut section: Option<usize> = None;
        let mut seen_data = false;
        let mut ended = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if line == "\\data\\" {
                seen_data = true;
                continue;
            }
            if line == "\\end\\" {
                ended = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("ngram ") {
                let (k, c) = rest.split_once('=').ok_or_else(|| bad(n, "malformed count line"))?;
                let k: usize = k.trim().parse().map_err(|_| bad(n, "bad order"))?;
                let c: usize = c.trim().parse().map_err(|_| bad(n, "bad count"))?;
                if k != declared.len() + 1 {
                    return Err(bad(n, "orders must be declared in sequence"));
                }
                declared.push(c);
                entries.push(HashMap::with_capacity(c));
                continue;
            }
            if let Some(k) = line.strip_prefix('\\').and_then(|l| l.strip_suffix("-grams:")) {
                let k: usize = k.parse().map_err(|_| bad(n, "bad section header"))?;
                if k == 0 || k > declared.len() {
                    return Err(bad(n, "section for an undeclared order"));
                }
                section = Some(k);
                continue;
            }
            let k = section.ok_or_else(|| bad(n, "entry outside a section"))?;
            let mut cols = line.split('\t');
            let (lp, toks, bo) = match (cols.next(), cols.next(), cols.next(), cols.next()) {
                (Some(a), Some(b), Some(c), None) => (a, b, c),
                _ => return Err(bad(n, "expected three TAB-separated columns")),
            };
            let lp: f64 = lp.parse().map_err(|_| bad(n, "bad probability"))?;
            let bo: f64 = bo.parse().map_err(|_| bad(n, "bad backoff"))?;
            let ids = toks
                .split(' ')
                .map(|t| {
                    if t == BOS_TOKEN {
                        Ok(BOS)
                    } else {
                        vocab.id(t).ok_or_else(|| bad(n, &format!("token {t:?} not in vocabulary")))
                    }
                })
                .collect::<Result<Vec<usize>>>()?;
            if ids.len() != k {
                return Err(bad(n, &format!("expected {k} tokens")));
            }
            entries[k - 1].insert(ids, (lp, bo));
        }
        if !seen_data || !ended || declared.is_empty() {
            return Err(Error::Data("n-gram file lacks its \\data\\ or \\end\\ marker".into()));
        }
        for (k, (&want, got)) in declared.iter().zip(&entries).enumerate() {
            if want != got.len() {
                return Err(Error::Data(format!(
                    "order {} declares {want} entries but holds {}",
                    k + 1,
                    got.len()
                )));
            }
        }
        Ok(Self {
            order: declared.len(),
            vocab_size: vocab.len(),
            fingerprint: vocab.fingerprint(),
            entries,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn prob(&self, history: &[usize], w: usize) -> f64 {
        let keep = history.len().min(self.order - 1);
        self.lookup(&history[history.len() - keep..], w)
    }

    fn lookup(&self, context: &[usize], w: usize) -> f64 {
        let mut g = context.to_vec();
        g.push(w);
        if let Some(&(lp, _)) = self.entries[g.len() - 1].get(&g) {
            return 10f64.powf(lp);
        }
        if context.is_empty() {
            return 0.0;
        }
        let backoff = self.entries[context.len() - 1]
            .get(context)
            .map_or(1.0, |&(_, bo)| 10f64.powf(bo));
        backoff * self.lookup(&context[1..], w)
    }

    pub fn perplexity(&self, data: &Dataset) -> Result<f64> {
        let sentences = check_sentences(data, self.fingerprint)?;
        let (mut nll, mut n) = (0.0, 0usize);
        for s in sentences {
            let mut history = vec![BOS; self.order - 1];
            for w in s.content().iter().copied().chain(std::iter::once(Vocabulary::EOS)) {
                nll -= self.prob(&history, w).ln();
                history.push(w);
                n += 1;
            }
        }
        Ok((nll / n as f64).exp())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}
