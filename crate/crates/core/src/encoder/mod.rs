//! The frozen text backbone shared by instructions and graph nodes.
//!
//! Two backends sit behind [`TextEncoder`]: a hermetic hashed-word encoder
//! ([`ToyEncoder`]) and an HTTP client for an external sentence-embedding
//! service ([`ExternalEncoder`]).

mod external;
mod toy;

use std::collections::HashMap;
use std::sync::Mutex;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{node_description, Graph};

pub use external::{ExternalConfig, ExternalEncoder};
pub use toy::{fnv1a64, tokenize, ToyEncoder};

pub const MIN_DIM: usize = 8;

/// Word tokens (`m x d`) and a sentence embedding (`d`) for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBundle {
    pub word_tokens: Array2<f64>,
    pub sentence_embedding: Array1<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("cannot encode empty text")]
    EmptyText,
    #[error("encoder configuration: {0}")]
    Config(String),
    #[error("external embedding service failed after {attempts} attempt(s) (last status {status:?}): {message}")]
    ExternalService {
        attempts: u32,
        status: Option<u16>,
        message: String,
    },
    #[error("request cancelled")]
    Cancelled,
}

pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    fn encode(&self, text: &str) -> Result<EmbeddingBundle, EncoderError>;

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingBundle>, EncoderError> {
        texts.iter().map(|t| self.encode(t)).collect()
    }

    /// Identifies the encoder configuration; stored in checkpoints so a model
    /// is never paired with a different backbone by accident.
    fn digest(&self) -> String;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Toy,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub backend: Backend,
    pub external: ExternalConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            backend: Backend::Toy,
            external: ExternalConfig::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.dim < MIN_DIM {
            return Err(EncoderError::Config(format!(
                "dim must be at least {MIN_DIM}, got {}",
                self.dim
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn TextEncoder>, EncoderError> {
        self.validate()?;
        Ok(match self.backend {
            Backend::Toy => Box::new(ToyEncoder::new(self.dim)?),
            Backend::External => Box::new(ExternalEncoder::from_env(self.dim, self.external.clone())?),
        })
    }
}

/// Sentence embeddings of a graph's nodes, one row per node in ascending id
/// order. Each node is described by its appearance and category; the id is
/// left out so that relabelling nodes does not change their tokens.
pub fn encode_nodes(encoder: &dyn TextEncoder, g: &Graph) -> Result<Array2<f64>, EncoderError> {
    let mut nodes: Vec<_> = g.nodes.iter().collect();
    nodes.sort_by_key(|n| n.id);
    let texts: Vec<String> = nodes.iter().map(|n| node_description(n)).collect();
    let bundles = encoder.encode_batch(&texts)?;
    let mut out = Array2::zeros((texts.len(), encoder.dim()));
    for (i, b) in bundles.iter().enumerate() {
        out.row_mut(i).assign(&b.sentence_embedding);
    }
    Ok(out)
}

/// Memoizes another encoder. Node descriptions repeat heavily across scenes,
/// so this mostly matters for the external backend.
pub struct CachedEncoder<E> {
    inner: E,
    cache: Mutex<HashMap<String, EmbeddingBundle>>,
}

impl<E: TextEncoder> CachedEncoder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl<E: TextEncoder> TextEncoder for CachedEncoder<E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingBundle, EncoderError> {
        if let Some(hit) = self.cache.lock().unwrap().get(text) {
            return Ok(hit.clone());
        }
        let b = self.inner.encode(text)?;
        self.cache.lock().unwrap().insert(text.to_string(), b.clone());
        Ok(b)
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingBundle>, EncoderError> {
        let missing: Vec<String> = {
            let cache = self.cache.lock().unwrap();
            let mut m: Vec<String> = texts.iter().filter(|t| !cache.contains_key(*t)).cloned().collect();
            m.sort();
            m.dedup();
            m
        };
        if !missing.is_empty() {
            let fresh = self.inner.encode_batch(&missing)?;
            let mut cache = self.cache.lock().unwrap();
            for (t, b) in missing.into_iter().zip(fresh) {
                cache.insert(t, b);
            }
        }
        let cache = self.cache.lock().unwrap();
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }
}

impl TextEncoder for Box<dyn TextEncoder> {
    fn dim(&self) -> usize {
        self.as_ref().dim()
    }

    fn encode(&self, text: &str) -> Result<EmbeddingBundle, EncoderError> {
        self.as_ref().encode(text)
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingBundle>, EncoderError> {
        self.as_ref().encode_batch(texts)
    }

    fn digest(&self) -> String {
        self.as_ref().digest()
    }
}

/// Short hex SHA-256 of any serializable value; used for config digests.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("digestable value");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Node, ATTR_COLOR};

    #[test]
    fn node_rows_follow_id_order() {
        let enc = ToyEncoder::new(16).unwrap();
        let a = Graph::new(
            vec![Node::new(5, "cup").with_attr(ATTR_COLOR, "red"), Node::new(1, "table")],
            vec![],
        );
        let b = Graph {
            nodes: vec![Node::new(1, "table"), Node::new(5, "cup").with_attr(ATTR_COLOR, "red")],
            edges: vec![],
        };
        let ma = encode_nodes(&enc, &a).unwrap();
        assert_eq!(ma, encode_nodes(&enc, &b).unwrap());
        assert_eq!(ma.row(0), enc.encode("table").unwrap().sentence_embedding);
        assert_eq!(ma.row(1), enc.encode("red cup").unwrap().sentence_embedding);
    }

    #[test]
    fn cache_is_transparent() {
        let enc = CachedEncoder::new(ToyEncoder::new(8).unwrap());
        let texts = vec!["a b".to_string(), "c".to_string(), "a b".to_string()];
        let got = enc.encode_batch(&texts).unwrap();
        let plain = ToyEncoder::new(8).unwrap();
        for (t, b) in texts.iter().zip(&got) {
            assert_eq!(*b, plain.encode(t).unwrap());
        }
        assert_eq!(enc.encode("c").unwrap(), plain.encode("c").unwrap());
    }

    #[test]
    fn config_rejects_small_dim() {
        let cfg = EncoderConfig {
            dim: 4,
            ..Default::default()
        };
        assert!(cfg.build().is_err());
        assert_eq!(EncoderConfig::default().build().unwrap().dim(), 64);
    }
}
