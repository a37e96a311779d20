//! Shared fixtures for integration tests: synthetic persona corpora, a
//! drama-style script generator and an independent Kneser-Ney oracle.
#![allow(dead_code)]

pub mod kn_oracle;

use perslm::corpus::{build_pairs, encode, encode_pairs, MessageReplyPair, SpeakerLine, TokenSequence, Vocabulary};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FUNCTION_WORDS: [&str; 10] = ["the", "a", "i", "you", "is", "to", "and", "it", "we", "so"];
pub const LEXICON_SIZE: usize = 12;

/// A speaker whose content words come from its own lexicon, with an
/// occasional borrowing from the general lexicon.
#[derive(Debug, Clone)]
pub struct Persona {
    pub name: &'static str,
    pub lexicon: Vec<String>,
    pub own_rate: f64,
}

pub fn lexicon(prefix: &str) -> Vec<String> {
    (0..LEXICON_SIZE).map(|i| format!("{prefix}{i}")).collect()
}

pub fn general_persona() -> Persona {
    Persona {
        name: "gen",
        lexicon: lexicon("gen"),
        own_rate: 1.0,
    }
}

pub fn persona(name: &'static str) -> Persona {
    Persona {
        name,
        lexicon: lexicon(name),
        own_rate: 0.9,
    }
}

/// One utterance: a function word, then 2–4 content words that tend to
/// advance through the lexicon, with function words sprinkled between.
pub fn sentence(p: &Persona, general: &Persona, rng: &mut impl Rng) -> Vec<String> {
    let zipf = WeightedIndex::new((0..LEXICON_SIZE).map(|i| 1.0 / (i + 1) as f64)).unwrap();
    let mut out = vec![FUNCTION_WORDS[rng.gen_range(0..4)].to_string()];
    let n = rng.gen_range(2..=4);
    let mut c = zipf.sample(rng);
    for j in 0..n {
        if j > 0 {
            if rng.gen_bool(0.5) {
                out.push(FUNCTION_WORDS[rng.gen_range(4..FUNCTION_WORDS.len())].to_string());
            }
            let r: f64 = rng.gen();
            c = if r < 0.6 {
                (c + 1) % LEXICON_SIZE
            } else if r < 0.9 {
                (c + 2) % LEXICON_SIZE
            } else {
                rng.gen_range(0..LEXICON_SIZE)
            };
        }
        let lex = if rng.gen_bool(p.own_rate) { &p.lexicon } else { &general.lexicon };
        out.push(lex[c].clone());
    }
    out
}

pub fn sentences(p: &Persona, count: usize, seed: u64) -> Vec<Vec<String>> {
    let general = general_persona();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sentence(p, &general, &mut rng)).collect()
}

/// A general corpus: mostly the general speaker, with the named personas
/// mixed in at `persona_rate` each.
pub fn general_corpus(personas: &[Persona], persona_rate: f64, count: usize, seed: u64) -> Vec<Vec<String>> {
    let general = general_persona();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let r: f64 = rng.gen();
            let idx = (r / persona_rate) as usize;
            let who = personas.get(idx).unwrap_or(&general);
            sentence(who, &general, &mut rng)
        })
        .collect()
}

/// Script lines where the general speaker dominates and consecutive lines
/// always change speaker.
pub fn script(personas: &[Persona], persona_rate: f64, lines: usize, seed: u64) -> Vec<SpeakerLine> {
    let general = general_persona();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<SpeakerLine> = Vec::with_capacity(lines);
    while out.len() < lines {
        let r: f64 = rng.gen();
        let idx = (r / persona_rate) as usize;
        let who = personas.get(idx).unwrap_or(&general);
        if out.last().is_some_and(|l| l.speaker == who.name) {
            continue;
        }
        let text = sentence(who, &general, &mut rng).join(" ");
        out.push(SpeakerLine::new(who.name, text).unwrap());
    }
    out
}

/// Vocabulary holding every word any fixture can produce.
pub fn fixture_vocab(names: &[&str]) -> Vocabulary {
    let mut words: Vec<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
    words.extend(lexicon("gen"));
    for n in names {
        words.extend(lexicon(n));
    }
    perslm::corpus::build_vocab(&[words], usize::MAX).unwrap()
}

pub fn encode_all(corpus: &[Vec<String>], vocab: &Vocabulary) -> Vec<TokenSequence> {
    corpus.iter().map(|s| encode(s, vocab, true)).collect()
}

pub fn pairs_replied_by(script: &[SpeakerLine], speaker: &str, vocab: &Vocabulary) -> Vec<MessageReplyPair> {
    let raw: Vec<_> = build_pairs(script)
        .into_iter()
        .filter(|p| p.reply.speaker == speaker)
        .collect();
    encode_pairs(&raw, vocab)
}

pub fn all_pairs(script: &[SpeakerLine], vocab: &Vocabulary) -> Vec<MessageReplyPair> {
    encode_pairs(&build_pairs(script), vocab)
}

/// Sentences over `v` words where token `t` copies a fixed permutation of
/// token `t − 4` with probability `p`, otherwise is uniform.
pub fn order_five_corpus(v: usize, len: usize, p: f64, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm: Vec<usize> = (0..v).map(|i| (i * 3 + 1) % v).collect();
    (0..count)
        .map(|_| {
            let mut s: Vec<usize> = (0..4).map(|_| rng.gen_range(0..v)).collect();
            while s.len() < len {
                let prev = s[s.len() - 4];
                s.push(if rng.gen_bool(p) { perm[prev] } else { rng.gen_range(0..v) });
            }
            s
        })
        .collect()
}
