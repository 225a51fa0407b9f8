//! Text encoders producing fixed-dimension embeddings.
//!
//! [`HashEncoder`] is a deterministic bag-of-n-grams feature hasher and needs
//! no model. [`RemoteEncoder`] talks to an embedding service over HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::Direction;

pub const DEFAULT_DIMENSION: usize = 768;

/// Largest batch a single `/embed` request may carry.
pub const REMOTE_BATCH_LIMIT: usize = 256;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("encoder dimension must be at least 1")]
    ZeroDimension,
    #[error("request to embedding service failed: {0}")]
    Connection(String),
    #[error("embedding service returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed embedding response: {0}")]
    Malformed(String),
    #[error("embedding service returned dimension {got}, expected {expected}")]
    WrongDimension { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
}

/// Dense vector representation of a piece of text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EncoderError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderBackend {
    HashEncoder,
    RemoteService(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dimension: usize,
    pub backend: EncoderBackend,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            backend: EncoderBackend::HashEncoder,
        }
    }
}

impl EncoderConfig {
    pub fn build(&self) -> Result<Box<dyn TextEncoder>, EncoderError> {
        Ok(match &self.backend {
            EncoderBackend::HashEncoder => Box::new(HashEncoder::new(self.dimension)?),
            EncoderBackend::RemoteService(url) => Box::new(RemoteEncoder::new(url, self.dimension)?),
        })
    }
}

pub trait TextEncoder: Send + Sync {
    fn dimension(&self) -> usize;

    /// One embedding per input text, in input order.
    fn encode(&self, texts: &[String]) -> Result<Vec<Embedding>, EncoderError>;

    fn encode_one(&self, text: &str) -> Result<Embedding, EncoderError> {
        let mut out = self.encode(&[text.to_string()])?;
        out.pop()
            .ok_or_else(|| EncoderError::Malformed("encoder returned no embedding".into()))
    }
}

/// Verbalizes a candidate node together with the edge that reached it.
pub fn node_text(label: &str, relation_label: &str, direction: Direction) -> String {
    match direction {
        Direction::Outgoing => format!("{relation_label} → {label}"),
        Direction::Incoming => format!("{label} → {relation_label}"),
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Feature hashing over word unigrams and bigrams.
///
/// Each feature adds 1 to bucket `fnv1a(feature) mod dim`; the count vector is
/// then L2-normalized. Text with no word tokens hashes as one feature made of
/// the whole string, so only the empty string maps to the zero vector.
#[derive(Debug, Clone)]
pub struct HashEncoder {
    dimension: usize,
}

impl HashEncoder {
    pub fn new(dimension: usize) -> Result<Self, EncoderError> {
        if dimension == 0 {
            return Err(EncoderError::ZeroDimension);
        }
        Ok(Self { dimension })
    }

    pub fn embed(&self, text: &str) -> Embedding {
        let mut v = vec![0.0; self.dimension];
        if text.is_empty() {
            return Embedding(v);
        }
        let tokens = tokenize(text);
        let mut features: Vec<String> = tokens.clone();
        features.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
        if features.is_empty() {
            features.push(text.to_string());
        }
        let dim = self.dimension as u64;
        for f in &features {
            v[(fnv1a(f.as_bytes()) % dim) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        Embedding(v)
    }
}

impl TextEncoder for HashEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, texts: &[String]) -> Result<Vec<Embedding>, EncoderError> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dimension: usize,
    embeddings: Vec<Vec<f64>>,
}

/// Client for the `/embed` protocol. Batches above [`REMOTE_BATCH_LIMIT`]
/// are split into consecutive requests.
pub struct RemoteEncoder {
    url: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEncoder {
    pub fn new(endpoint: &str, dimension: usize) -> Result<Self, EncoderError> {
        if dimension == 0 {
            return Err(EncoderError::ZeroDimension);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| EncoderError::Connection(e.to_string()))?;
        Ok(Self {
            url: format!("{}/embed", endpoint.trim_end_matches('/')),
            dimension,
            client,
        })
    }

    fn request(&self, texts: &[String]) -> Result<Vec<Embedding>, EncoderError> {
        let resp = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| EncoderError::Connection(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| EncoderError::Connection(e.to_string()))?;
        if !status.is_success() {
            return Err(EncoderError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: EmbedResponse = serde_json::from_str(&body).map_err(|e| EncoderError::Malformed(e.to_string()))?;
        if parsed.dimension != self.dimension {
            return Err(EncoderError::WrongDimension {
                expected: self.dimension,
                got: parsed.dimension,
            });
        }
        if parsed.embeddings.len() != texts.len() {
            return Err(EncoderError::Malformed(format!(
                "{} embeddings for {} texts",
                parsed.embeddings.len(),
                texts.len()
            )));
        }
        parsed
            .embeddings
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    return Err(EncoderError::WrongDimension {
                        expected: self.dimension,
                        got: v.len(),
                    });
                }
                Embedding::new(v)
            })
            .collect()
    }
}

impl TextEncoder for RemoteEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn encode(&self, texts: &[String]) -> Result<Vec<Embedding>, EncoderError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(REMOTE_BATCH_LIMIT) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic() {
        let enc = HashEncoder::new(64).unwrap();
        let out = enc.encode(&["abc".into(), "abc".into()]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn empty_text_is_zero() {
        let enc = HashEncoder::new(16).unwrap();
        let v = enc.encode_one("").unwrap();
        assert_eq!(v, Embedding::zeros(16));
    }

    // Frozen from an independent Python reimplementation of the hashing
    // (FNV-1a 64, unigram + bigram features, L2 normalization).
    #[test]
    fn frozen_vectors() {
        let enc = HashEncoder::new(8).unwrap();
        let v = enc.embed("abc");
        let mut expected = [0.0; 8];
        expected[ABC_BUCKET_DIM8] = 1.0;
        assert_eq!(v.as_slice(), &expected);
        assert!((v.norm() - 1.0).abs() < 1e-9);

        let v = enc.embed("film.director.film → Inception");
        for (got, want) in v.as_slice().iter().zip(FILM_DIM8) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    const ABC_BUCKET_DIM8: usize = 3;
    const FILM_DIM8: [f64; 8] = [
        0.30151134457776363,
        0.30151134457776363,
        0.0,
        0.6030226891555273,
        0.30151134457776363,
        0.6030226891555273,
        0.0,
        0.0,
    ];

    #[test]
    fn node_text_templates() {
        assert_eq!(
            node_text("Inception", "film.director.film", Direction::Outgoing),
            "film.director.film → Inception"
        );
        assert_eq!(
            node_text("Christopher Nolan", "film.director.film", Direction::Incoming),
            "Christopher Nolan → film.director.film"
        );
        assert_eq!(
            node_text("x", "r", Direction::Incoming),
            node_text("x", "r", Direction::Incoming)
        );
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(HashEncoder::new(0), Err(EncoderError::ZeroDimension)));
    }

    #[test]
    fn punctuation_only_text_is_unit_norm() {
        let enc = HashEncoder::new(32).unwrap();
        assert!((enc.embed("→ ?!").norm() - 1.0).abs() < 1e-9);
        assert!((enc.embed(" ").norm() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn unit_norm_and_dimension(text in ".{1,40}", dim in 1usize..300) {
            let enc = HashEncoder::new(dim).unwrap();
            let out = enc.encode(&[text.clone(), String::new(), text]).unwrap();
            prop_assert_eq!(out.len(), 3);
            for v in &out {
                prop_assert_eq!(v.dim(), dim);
            }
            prop_assert!((out[0].norm() - 1.0).abs() < 1e-9);
            prop_assert_eq!(out[1].norm(), 0.0);
            prop_assert_eq!(&out[0], &out[2]);
        }
    }
}
