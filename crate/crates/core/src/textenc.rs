//! Pluggable text embedding provider.
//!
//! The built-in provider is a seeded feature-hashing featurizer over word
//! 1–2 grams: deterministic, dependency-free, and good enough to give
//! related names related vectors. A file-backed provider serves precomputed
//! vectors for setups with a real language model. Text embeddings are
//! frozen: nothing in training backpropagates into a provider.
//!
//! Every encode call bumps a global counter so the serving path can prove
//! it never touches text encoding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Total encode calls made through any provider in this process.
static ENCODE_CALLS: AtomicU64 = AtomicU64::new(0);

/// Process-wide count of text-encoder invocations.
pub fn encode_call_count() -> u64 {
    ENCODE_CALLS.load(Ordering::Relaxed)
}

/// One text vector of dimension d_t. Stored as f32: this is the on-disk
/// unit, and the values are frozen inputs rather than trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub values: Vec<f32>,
}

impl TextEmbedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Text embedding provider: built-in featurizer or file-backed table.
#[derive(Debug, Clone)]
pub enum Provider {
    Hashed(HashedEncoder),
    Table(EmbeddingTable),
}

impl Provider {
    pub fn builtin(seed: u64, d_t: usize) -> Self {
        Provider::Hashed(HashedEncoder { seed, d_t })
    }

    pub fn dim(&self) -> usize {
        match self {
            Provider::Hashed(h) => h.d_t,
            Provider::Table(t) => t.d_t,
        }
    }

    /// Encodes one string. Empty or token-free text yields the zero vector.
    pub fn encode_text(&self, text: &str) -> Result<TextEmbedding> {
        ENCODE_CALLS.fetch_add(1, Ordering::Relaxed);
        match self {
            Provider::Hashed(h) => Ok(h.encode(text)),
            Provider::Table(t) => t
                .get(text)
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("no embedding for text: {text}"))),
        }
    }

    /// Encodes a name sequence as the single string `name1 ; name2 ; ...`.
    pub fn encode_sequence(&self, names: &[impl AsRef<str>]) -> Result<TextEmbedding> {
        let joined = names
            .iter()
            .map(|n| n.as_ref())
            .collect::<Vec<_>>()
            .join(" ; ");
        self.encode_text(&joined)
    }
}

/// Seeded feature-hashing featurizer.
#[derive(Debug, Clone)]
pub struct HashedEncoder {
    pub seed: u64,
    pub d_t: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x1_0000_0001_b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    for &b in bytes {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    h
}

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

impl HashedEncoder {
    fn encode(&self, text: &str) -> TextEmbedding {
        let tokens = tokenize(text);
        let mut acc = vec![0.0f64; self.d_t];
        let mut bump = |feature: &str| {
            let h = fnv1a(self.seed, feature.as_bytes());
            let bucket = ((h >> 1) % self.d_t as u64) as usize;
            let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        };
        for t in &tokens {
            bump(t);
        }
        for pair in tokens.windows(2) {
            bump(&format!("{} {}", pair[0], pair[1]));
        }
        let norm: f64 = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = if norm > 0.0 {
            acc.iter().map(|v| (v / norm) as f32).collect()
        } else {
            vec![0.0f32; self.d_t]
        };
        TextEmbedding { values }
    }
}

/// Key → vector table backed by the embedding blob format.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub d_t: usize,
    keys: Vec<String>,
    vectors: Vec<TextEmbedding>,
    by_key: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(d_t: usize, entries: Vec<(String, TextEmbedding)>) -> Result<Self> {
        let mut keys = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        let mut by_key = HashMap::with_capacity(entries.len());
        for (key, vec) in entries {
            if vec.dim() != d_t {
                return Err(Error::Shape(format!(
                    "embedding for {key} has dimension {}, expected {d_t}",
                    vec.dim()
                )));
            }
            if by_key.insert(key.clone(), keys.len()).is_some() {
                return Err(Error::InvalidInput(format!("duplicate embedding key {key}")));
            }
            keys.push(key);
            vectors.push(vec);
        }
        Ok(EmbeddingTable {
            d_t,
            keys,
            vectors,
            by_key,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn get(&self, key: &str) -> Option<&TextEmbedding> {
        self.by_key.get(key).map(|&i| &self.vectors[i])
    }

    pub fn by_index(&self, i: usize) -> &TextEmbedding {
        &self.vectors[i]
    }
}

#[derive(Serialize, Deserialize)]
struct BlobManifest {
    d_t: usize,
    count: usize,
    keys: Vec<String>,
}

/// Writes `manifest.json` + `vectors.f32` (little-endian, row-major in key
/// order) into `dir`.
pub fn save_embeddings(table: &EmbeddingTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let manifest = BlobManifest {
        d_t: table.d_t,
        count: table.len(),
        keys: table.keys.clone(),
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidInput(format!("manifest serialization: {e}")))?;
    fs::write(&manifest_path, json)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;

    let mut bytes = Vec::with_capacity(table.len() * table.d_t * 4);
    for vec in &table.vectors {
        for v in &vec.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let vec_path = dir.join("vectors.f32");
    fs::write(&vec_path, bytes).map_err(|e| Error::io(vec_path.display().to_string(), e))
}

/// Reads a blob written by [`save_embeddings`].
pub fn load_embeddings(dir: &Path) -> Result<EmbeddingTable> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: BlobManifest = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: manifest_path.display().to_string(),
        msg: e.to_string(),
    })?;
    if manifest.keys.len() != manifest.count {
        return Err(Error::Corrupt {
            path: manifest_path.display().to_string(),
            msg: format!(
                "manifest count {} does not match {} keys",
                manifest.count,
                manifest.keys.len()
            ),
        });
    }
    let vec_path = dir.join("vectors.f32");
    let bytes = fs::read(&vec_path).map_err(|e| Error::io(vec_path.display().to_string(), e))?;
    let expected = manifest.count * manifest.d_t * 4;
    if bytes.len() != expected {
        return Err(Error::Corrupt {
            path: vec_path.display().to_string(),
            msg: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let mut entries = Vec::with_capacity(manifest.count);
    for (i, key) in manifest.keys.iter().enumerate() {
        let start = i * manifest.d_t * 4;
        let values = bytes[start..start + manifest.d_t * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((key.clone(), TextEmbedding { values }));
    }
    EmbeddingTable::new(manifest.d_t, entries)
}
