//! Text ingestion: tokenization, vocabulary construction, encoding with
//! unknown-token substitution and message-reply pair construction.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Splits text into lowercase word and punctuation tokens.
///
/// Letters, digits and word-internal apostrophes form words. Every other
/// non-whitespace character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text
        .chars()
        .map(|c| if c == '\u{2019}' { '\'' } else { c })
        .collect();
    let mut tokens = Vec::new();
    let mut word = String::new();

    for (i, &c) in chars.iter().enumerate() {
        let internal_apostrophe = c == '\''
            && !word.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if c.is_alphanumeric() || internal_apostrophe {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Stable 64-bit identifier of a vocabulary's token list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint(pub u64);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl std::str::FromStr for Fingerprint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        u64::from_str_radix(s.trim(), 16)
            .map(Fingerprint)
            .map_err(|e| Error::Data(format!("bad fingerprint {s:?}: {e}")))
    }
}

/// Bijective token/id table. Id 0 is always `<eos>` and id 1 `<unk>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const EOS: usize = 0;
    pub const UNK: usize = 1;

    /// Builds a vocabulary from an explicit token list. The list must start
    /// with `<eos>`, `<unk>` and contain no duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != EOS_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Data(format!(
                "vocabulary must start with {EOS_TOKEN} and {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary token {tok:?} at line {id}")));
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos_id(&self) -> usize {
        Self::EOS
    }

    pub fn unk_id(&self) -> usize {
        Self::UNK
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let mut hasher = Sha256::new();
        for tok in &self.tokens {
            hasher.update(tok.as_bytes());
            hasher.update([0u8]);
        }
        let digest = hasher.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        Fingerprint(u64::from_le_bytes(head))
    }

    /// One token per line, line number equals id.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Keeps `<eos>`, `<unk>` and the `max_size - 2` most frequent tokens.
/// Ties are broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpora: &[Vec<S>], max_size: usize) -> Result<Vocabulary> {
    if max_size < 2 {
        return Err(Error::Config(format!(
            "max vocabulary size must be at least 2, got {max_size}"
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in corpora.iter().flatten() {
        let tok = tok.as_ref();
        if tok == EOS_TOKEN || tok == UNK_TOKEN {
            continue;
        }
        *counts.entry(tok).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens = vec![EOS_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
    tokens.extend(ranked.into_iter().take(max_size - 2).map(|(t, _)| t.to_owned()));
    Vocabulary::from_tokens(tokens)
}

/// A sequence of vocabulary ids, optionally terminated by `<eos>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<usize>,
    terminated: bool,
}

impl TokenSequence {
    /// Wraps raw ids; `terminated` is derived from the trailing id.
    pub fn new(ids: Vec<usize>) -> Self {
        let terminated = ids.last() == Some(&Vocabulary::EOS);
        Self { ids, terminated }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Ids without the trailing `<eos>`, if any.
    pub fn content(&self) -> &[usize] {
        if self.terminated {
            &self.ids[..self.ids.len() - 1]
        } else {
            &self.ids
        }
    }

    pub fn into_ids(self) -> Vec<usize> {
        self.ids
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        match self.ids.iter().find(|&&id| id >= vocab_size) {
            Some(id) => Err(Error::Input(format!(
                "token id {id} out of range for vocabulary of size {vocab_size}"
            ))),
            None => Ok(()),
        }
    }
}

/// Maps tokens to ids, substituting `<unk>` for out-of-vocabulary tokens.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, append_eos: bool) -> TokenSequence {
    let mut ids: Vec<usize> = tokens
        .iter()
        .map(|t| vocab.id(t.as_ref()).unwrap_or(Vocabulary::UNK))
        .collect();
    if append_eos {
        ids.push(Vocabulary::EOS);
    }
    TokenSequence::new(ids)
}

pub fn decode(ids: &[usize], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .map(|&id| vocab.token(id).unwrap_or(UNK_TOKEN).to_owned())
        .collect()
}

/// Joins decoded tokens into display text, dropping `<eos>`.
pub fn detokenize(ids: &[usize], vocab: &Vocabulary) -> String {
    ids.iter()
        .filter(|&&id| id != Vocabulary::EOS)
        .map(|&id| vocab.token(id).unwrap_or(UNK_TOKEN))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Fraction of tokens missing from the vocabulary; 0 for empty input.
pub fn oov_rate<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    let missing = tokens.iter().filter(|t| !vocab.contains(t.as_ref())).count();
    missing as f64 / tokens.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerLine {
    pub speaker: String,
    pub text: String,
}

impl SpeakerLine {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let speaker = speaker.into();
        if speaker.trim().is_empty() {
            return Err(Error::Data("speaker label must be non-empty".into()));
        }
        Ok(Self {
            speaker,
            text: text.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageReplyPair {
    pub message: TokenSequence,
    pub reply: TokenSequence,
}

/// A raw message/reply pair before encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPair {
    pub message: SpeakerLine,
    pub reply: SpeakerLine,
}

/// Links every two adjacent lines spoken by different speakers.
pub fn build_pairs(script: &[SpeakerLine]) -> Vec<RawPair> {
    script
        .windows(2)
        .filter(|w| w[0].speaker != w[1].speaker)
        .map(|w| RawPair {
            message: w[0].clone(),
            reply: w[1].clone(),
        })
        .collect()
}

/// Tokenizes and encodes raw pairs. Pairs whose message or reply tokenizes
/// to nothing are dropped.
pub fn encode_pairs(pairs: &[RawPair], vocab: &Vocabulary) -> Vec<MessageReplyPair> {
    pairs
        .iter()
        .filter_map(|p| {
            let m = tokenize(&p.message.text);
            let r = tokenize(&p.reply.text);
            if m.is_empty() || r.is_empty() {
                return None;
            }
            Some(MessageReplyPair {
                message: encode(&m, vocab, false),
                reply: encode(&r, vocab, true),
            })
        })
        .collect()
}

/// Lines of one speaker, matched case-insensitively, in script order.
pub fn filter_speaker(script: &[SpeakerLine], speaker: &str) -> Vec<SpeakerLine> {
    let wanted = speaker.to_lowercase();
    script
        .iter()
        .filter(|l| l.speaker.to_lowercase() == wanted)
        .cloned()
        .collect()
}

/// Parses `SPEAKER<TAB>utterance` lines. Blank lines are skipped.
pub fn parse_script(text: &str) -> Result<Vec<SpeakerLine>> {
    let mut lines = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (speaker, utterance) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("script line {} has no TAB separator", n + 1)))?;
        lines.push(
            SpeakerLine::new(speaker.trim(), utterance.trim())
                .map_err(|e| Error::Data(format!("script line {}: {e}", n + 1)))?,
        );
    }
    Ok(lines)
}

pub fn read_script(path: impl AsRef<Path>) -> Result<Vec<SpeakerLine>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_script(&text)
}

/// Reads a corpus with one sentence per line, tokenized. Blank lines are skipped.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .collect())
}

pub fn encode_sentences(sentences: &[Vec<String>], vocab: &Vocabulary) -> Vec<TokenSequence> {
    sentences.iter().map(|s| encode(s, vocab, true)).collect()
}
