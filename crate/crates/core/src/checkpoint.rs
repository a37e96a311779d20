//! Portable binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "PERSLMCK"
//! version      u32
//! header_len   u32
//! header       header_len bytes of UTF-8 `key=value` lines
//! payload      param_count values, f64 or f32, in canonical block order
//! checksum     first 8 bytes of SHA-256 over everything above
//! ```
//!
//! Block order is embedding, LSTM layers bottom-up (input weights, recurrent
//! weights, bias; gate rows i, f, g, o), the surplus block, then the output
//! weights and bias.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::artifacts::write_atomic;
use crate::config::Precision;
use crate::corpus::{Fingerprint, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{LanguageModel, Task};
use crate::netcore::{Architecture, ModelParams, SurplusKind};

pub const MAGIC: &[u8; 8] = b"PERSLMCK";
pub const FORMAT_VERSION: u32 = 1;
const GATE_ORDER: &str = "i,f,g,o";
const HEADER_KEYS: [&str; 12] = [
    "task",
    "vocab_size",
    "embed_dim",
    "hidden",
    "layers",
    "surplus",
    "gate_order",
    "precision",
    "fingerprint",
    "epochs_completed",
    "lineage",
    "param_count",
];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainingMeta {
    pub epochs_completed: usize,
    /// Steps that produced the model, oldest first, e.g. `pretrain`.
    pub lineage: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: LanguageModel,
    pub precision: Precision,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    /// Wraps a model; at 32-bit precision the parameters are rounded to `f32`.
    pub fn new(mut model: LanguageModel, precision: Precision, meta: TrainingMeta) -> Self {
        if precision == Precision::F32 {
            model.params.round_to_f32();
        }
        Self { model, precision, meta }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        for entry in &self.meta.lineage {
            if entry.is_empty() || entry.contains([';', '\n', '\r']) {
                return Err(Error::Config(format!("invalid lineage entry {entry:?}")));
            }
        }
        let params = &self.model.params;
        let arch = params.architecture();
        let header = [
            format!("task={}", self.model.task),
            format!("vocab_size={}", arch.vocab_size),
            format!("embed_dim={}", arch.embed_dim),
            format!("hidden={}", arch.hidden),
            format!("layers={}", arch.layers),
            format!("surplus={}", arch.surplus.map_or("none", SurplusKind::name)),
            format!("gate_order={GATE_ORDER}"),
            format!("precision={}", self.precision),
            format!("fingerprint={}", self.model.vocab_fingerprint),
            format!("epochs_completed={}", self.meta.epochs_completed),
            format!("lineage={}", self.meta.lineage.join(";")),
            format!("param_count={}", arch.param_count()),
        ]
        .join("\n");

        let width = self.precision.bits() as usize / 8;
        let mut out = Vec::with_capacity(24 + header.len() + width * arch.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, arrays) in params.blocks() {
            for x in arrays.into_iter().flatten() {
                match self.precision {
                    Precision::F64 => out.extend_from_slice(&x.to_le_bytes()),
                    Precision::F32 => out.extend_from_slice(&(*x as f32).to_le_bytes()),
                }
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::checkpoint("truncated", format!("file holds only {} bytes", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::checkpoint("magic", "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::checkpoint(
                "version",
                format!("format version {version}, expected {FORMAT_VERSION}"),
            ));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::checkpoint("truncated", "header extends past end of file"))?;
        let header = std::str::from_utf8(&bytes[16..header_end])
            .map_err(|e| Error::checkpoint("header", format!("header is not UTF-8: {e}")))?;
        let fields = parse_header(header)?;
        let get = |key: &str| -> &str {
            fields
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .expect("presence checked by parse_header")
        };
        let num = |key: &'static str| -> Result<usize> {
            get(key)
                .parse()
                .map_err(|_| Error::checkpoint("header", format!("{key} is not a count: {:?}", get(key))))
        };

        let task: Task = get("task")
            .parse()
            .map_err(|_| Error::checkpoint("header", format!("unknown task {:?}", get("task"))))?;
        let surplus = match get("surplus") {
            "none" => None,
            other => Some(
                other
                    .parse::<SurplusKind>()
                    .map_err(|_| Error::checkpoint("architecture", format!("unknown surplus kind {other:?}")))?,
            ),
        };
        if get("gate_order") != GATE_ORDER {
            return Err(Error::checkpoint(
                "architecture",
                format!("gate order {:?}, expected {GATE_ORDER}", get("gate_order")),
            ));
        }
        let precision = get("precision")
            .parse::<u32>()
            .ok()
            .and_then(|b| Precision::from_bits(b).ok())
            .ok_or_else(|| Error::checkpoint("header", format!("bad precision {:?}", get("precision"))))?;
        let fingerprint: Fingerprint = get("fingerprint")
            .parse()
            .map_err(|_| Error::checkpoint("header", format!("bad fingerprint {:?}", get("fingerprint"))))?;
        let arch = Architecture {
            surplus,
            ..Architecture::new(num("vocab_size")?, num("embed_dim")?, num("hidden")?, num("layers")?)
        };
        arch.validate()
            .map_err(|e| Error::checkpoint("architecture", e.to_string()))?;
        let param_count = num("param_count")?;
        if param_count != arch.param_count() {
            return Err(Error::checkpoint(
                "architecture",
                format!("header declares {param_count} parameters, architecture needs {}", arch.param_count()),
            ));
        }
        let lineage: Vec<String> = match get("lineage") {
            "" => Vec::new(),
            l => l.split(';').map(str::to_owned).collect(),
        };

        let width = precision.bits() as usize / 8;
        let expected = header_end + param_count * width + 8;
        if bytes.len() < expected {
            return Err(Error::checkpoint(
                "truncated",
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        if bytes.len() > expected {
            return Err(Error::checkpoint(
                "payload-length",
                format!("{} trailing bytes after the checksum", bytes.len() - expected),
            ));
        }
        let body = &bytes[..expected - 8];
        if checksum(body) != bytes[expected - 8..] {
            return Err(Error::checkpoint("checksum", "contents do not match the stored checksum"));
        }

        let mut params = ModelParams::zeros(&arch);
        let mut chunks = body[header_end..].chunks_exact(width);
        for (_, arrays) in params.blocks_mut() {
            for a in arrays {
                for (x, c) in a.iter_mut().zip(&mut chunks) {
                    *x = match precision {
                        Precision::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                        Precision::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                    };
                }
            }
        }
        Ok(Self {
            model: LanguageModel::new(params, task, fingerprint),
            precision,
            meta: TrainingMeta {
                epochs_completed: num("epochs_completed")?,
                lineage,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the checkpoint was trained against `vocab`.
    pub fn verify_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if self.model.vocab_fingerprint != vocab.fingerprint() || self.model.params.vocab_size() != vocab.len() {
            return Err(Error::checkpoint(
                "fingerprint",
                format!(
                    "checkpoint vocabulary {} does not match {}",
                    self.model.vocab_fingerprint,
                    vocab.fingerprint()
                ),
            ));
        }
        Ok(())
    }

    /// Converts to `wanted` precision. A mismatch is an error unless `cast`.
    pub fn into_precision(self, wanted: Precision, cast: bool) -> Result<Self> {
        if self.precision == wanted {
            return Ok(self);
        }
        if !cast {
            return Err(Error::checkpoint(
                "precision",
                format!("checkpoint stores {}-bit parameters, run expects {}-bit", self.precision, wanted),
            ));
        }
        Ok(Self::new(self.model, wanted, self.meta))
    }
}

fn checksum(bytes: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(bytes);
    digest[..8].try_into().expect("digest holds 32 bytes")
}

fn parse_header(header: &str) -> Result<Vec<(String, String)>> {
    let mut fields = Vec::new();
    for line in header.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::checkpoint("header", format!("malformed header line {line:?}")))?;
        if !HEADER_KEYS.contains(&k) {
            return Err(Error::checkpoint("header", format!("unknown header key {k:?}")));
        }
        if fields.iter().any(|(seen, _)| seen == k) {
            return Err(Error::checkpoint("header", format!("duplicate header key {k:?}")));
        }
        fields.push((k.to_owned(), v.to_owned()));
    }
    if let Some(missing) = HEADER_KEYS.iter().find(|k| !fields.iter().any(|(seen, _)| seen == *k)) {
        return Err(Error::checkpoint("header", format!("missing header key {missing:?}")));
    }
    Ok(fields)
}
