//! Text embedding providers. Every provider hands out unit-norm vectors, so
//! cosine similarity downstream is a plain dot product.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{Dataset, LabelSet};
use crate::error::{Error, Result};
use crate::transport::JsonTransport;

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn l2_normalize(v: &[f64]) -> Result<EmbeddingVector> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateEmbedding);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(EmbeddingVector(v.iter().map(|x| x / norm).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSample {
    pub embedding: EmbeddingVector,
    pub labels: LabelSet,
    pub source_index: usize,
}

fn default_timeout() -> u64 {
    30
}

fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    /// Precomputed vectors; cannot embed unseen text.
    File { dim: usize, path: String },
    Http {
        dim: usize,
        endpoint: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        auth_token_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        max_retries: u32,
    },
    Toy { dim: usize, seed: u64 },
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Toy { dim: 256, seed: 0 }
    }
}

impl ProviderConfig {
    pub fn dim(&self) -> usize {
        match self {
            ProviderConfig::File { dim, .. }
            | ProviderConfig::Http { dim, .. }
            | ProviderConfig::Toy { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() < 2 {
            return Err(Error::InvalidConfig(format!(
                "embedding dim must be at least 2, got {}",
                self.dim()
            )));
        }
        match self {
            ProviderConfig::File { path, .. } if path.is_empty() => {
                Err(Error::InvalidConfig("file provider needs a path".into()))
            }
            ProviderConfig::Http {
                endpoint,
                timeout_secs,
                ..
            } => {
                if endpoint.is_empty() {
                    Err(Error::InvalidConfig("http provider needs an endpoint".into()))
                } else if *timeout_secs == 0 {
                    Err(Error::InvalidConfig("timeout must be positive".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Anything that can turn a batch of texts into unit-norm vectors.
pub trait Embedder {
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

// 64-bit FNV-1a followed by a splitmix finalizer; stable across platforms and releases.
fn trigram_hash(seed: u64, gram: &[char; 3]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for b in seed.to_le_bytes() {
        feed(b);
    }
    let mut buf = [0u8; 4];
    for c in gram {
        for b in c.encode_utf8(&mut buf).bytes() {
            feed(b);
        }
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const START: char = '\u{2}';
const END: char = '\u{3}';

/// Signed feature hashing of lowercase character trigrams.
///
/// The text is wrapped in boundary markers (and right-padded with end markers
/// when shorter than a trigram) so that every input, even the empty string,
/// produces a nonzero vector.
pub fn toy_embed(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    assert!(dim >= 2, "toy embedding dim must be at least 2");
    let mut chars: Vec<char> = std::iter::once(START)
        .chain(text.chars().flat_map(char::to_lowercase))
        .chain(std::iter::once(END))
        .collect();
    while chars.len() < 3 {
        chars.push(END);
    }
    let mut acc = vec![0.0f64; dim];
    for w in chars.windows(3) {
        let h = trigram_hash(seed, &[w[0], w[1], w[2]]);
        let slot = (h % dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[slot] += sign;
    }
    match l2_normalize(&acc) {
        Ok(v) => v,
        // Every trigram cancelled out; fall back to the first boundary trigram.
        Err(_) => {
            let h = trigram_hash(seed, &[chars[0], chars[1], chars[2]]);
            let mut unit = vec![0.0; dim];
            unit[(h % dim as u64) as usize] = 1.0;
            EmbeddingVector(unit)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ToyEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Embedder for ToyEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| toy_embed(t, self.dim, self.seed)).collect())
    }
}

/// Client for an encoder speaking `{"texts": [...]}` → `{"vectors": [[...], ...]}`.
pub struct RemoteEmbedder<T> {
    pub endpoint: String,
    pub dim: usize,
    pub bearer: Option<String>,
    pub transport: T,
}

impl<T: JsonTransport> Embedder for RemoteEmbedder<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        embed_remote(
            texts,
            &self.endpoint,
            self.dim,
            self.bearer.as_deref(),
            &self.transport,
        )
    }
}

pub fn embed_remote(
    texts: &[String],
    endpoint: &str,
    dim: usize,
    bearer: Option<&str>,
    transport: &dyn JsonTransport,
) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let response = transport.post_json(endpoint, &json!({ "texts": texts }), bearer)?;
    let rows = response
        .get("vectors")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Remote("response has no \"vectors\" array".into()))?;
    if rows.len() != texts.len() {
        return Err(Error::Remote(format!(
            "sent {} texts but received {} vectors",
            texts.len(),
            rows.len()
        )));
    }
    rows.iter()
        .enumerate()
        .map(|(row, v)| {
            let values: Vec<f64> = serde_json::from_value(v.clone())
                .map_err(|e| Error::Remote(format!("vector {row}: {e}")))?;
            if values.len() != dim {
                return Err(Error::DimensionMismatch {
                    row,
                    expected: dim,
                    found: values.len(),
                });
            }
            l2_normalize(&values)
        })
        .collect()
}

/// Embeds every sample of `dataset`, preserving order.
pub fn embed_dataset(dataset: &Dataset, embedder: &dyn Embedder) -> Result<Vec<EmbeddedSample>> {
    let vectors = embedder.embed_batch(&dataset.texts())?;
    Ok(attach_labels(vectors, dataset))
}

fn attach_labels(vectors: Vec<EmbeddingVector>, dataset: &Dataset) -> Vec<EmbeddedSample> {
    vectors
        .into_iter()
        .zip(&dataset.samples)
        .enumerate()
        .map(|(i, (embedding, s))| EmbeddedSample {
            embedding,
            labels: s.labels.clone(),
            source_index: i,
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRow {
    index: usize,
    vector: Vec<f64>,
}

pub fn write_embeddings(mut writer: impl Write, vectors: &[EmbeddingVector]) -> std::io::Result<()> {
    for (index, v) in vectors.iter().enumerate() {
        let row = EmbeddingRow {
            index,
            vector: v.0.clone(),
        };
        serde_json::to_writer(&mut writer, &row)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_embeddings(path: impl AsRef<Path>, vectors: &[EmbeddingVector]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_embeddings(&mut buf, vectors).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads embedding rows and normalizes them. Row indices must run 0, 1, 2, ...
pub fn read_embeddings(reader: impl Read) -> Result<Vec<EmbeddingVector>> {
    let mut out: Vec<EmbeddingVector> = Vec::new();
    let mut dim = None;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row_no = out.len();
        let row: EmbeddingRow = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        if row.index != row_no {
            return Err(Error::IndexMismatch {
                row: row_no,
                expected: row_no,
                found: row.index,
            });
        }
        let expected = *dim.get_or_insert(row.vector.len());
        if row.vector.len() != expected {
            return Err(Error::DimensionMismatch {
                row: row_no,
                expected,
                found: row.vector.len(),
            });
        }
        out.push(l2_normalize(&row.vector)?);
    }
    Ok(out)
}

pub fn load_embeddings(path: impl AsRef<Path>, dataset: &Dataset) -> Result<Vec<EmbeddedSample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    align_embeddings(read_embeddings(file)?, dataset)
}

pub fn align_embeddings(
    vectors: Vec<EmbeddingVector>,
    dataset: &Dataset,
) -> Result<Vec<EmbeddedSample>> {
    if vectors.len() != dataset.len() {
        return Err(Error::RowCountMismatch {
            file_rows: vectors.len(),
            dataset_rows: dataset.len(),
        });
    }
    Ok(attach_labels(vectors, dataset))
}
