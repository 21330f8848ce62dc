use ndarray::{Array1, Array2};

use super::{EmbeddingBundle, EncoderError, TextEncoder};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 step; returns the new state and the output.
fn splitmix64(state: u64) -> (u64, u64) {
    let state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (state, z ^ (z >> 31))
}

/// Lowercased whitespace tokens with surrounding punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

fn normalize(v: &mut Array1<f64>) {
    let norm = v.dot(v).sqrt();
    if norm > 0.0 {
        v.mapv_inplace(|x| x / norm);
    } else {
        v[0] = 1.0;
    }
}

/// Deterministic hashed word embeddings: every word maps to a fixed
/// pseudo-random unit vector, a sentence to the normalized mean of its words.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    dim: usize,
}

impl ToyEncoder {
    pub fn new(dim: usize) -> Result<Self, EncoderError> {
        if dim < super::MIN_DIM {
            return Err(EncoderError::Config(format!(
                "embedding dim must be at least {}, got {dim}",
                super::MIN_DIM
            )));
        }
        Ok(Self { dim })
    }

    pub fn word_vector(&self, word: &str) -> Array1<f64> {
        let mut state = fnv1a64(word.to_lowercase().as_bytes());
        let mut v = Array1::zeros(self.dim);
        for x in v.iter_mut() {
            let (next, out) = splitmix64(state);
            state = next;
            // 53 random bits mapped onto [-1, 1)
            *x = (out >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
        }
        normalize(&mut v);
        v
    }
}

impl TextEncoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<EmbeddingBundle, EncoderError> {
        let words = tokenize(text);
        if words.is_empty() {
            return Err(EncoderError::EmptyText);
        }
        let mut word_tokens = Array2::zeros((words.len(), self.dim));
        for (i, w) in words.iter().enumerate() {
            word_tokens.row_mut(i).assign(&self.word_vector(w));
        }
        let mut sentence = word_tokens.sum_axis(ndarray::Axis(0)) / words.len() as f64;
        normalize(&mut sentence);
        Ok(EmbeddingBundle {
            word_tokens,
            sentence_embedding: sentence,
        })
    }

    fn digest(&self) -> String {
        format!("toy-fnv1a-splitmix64-d{}", self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_word_gives_identical_rows() {
        let enc = ToyEncoder::new(8).unwrap();
        let b = enc.encode("pick pick").unwrap();
        assert_eq!(b.word_tokens.nrows(), 2);
        assert_eq!(b.word_tokens.row(0), b.word_tokens.row(1));
    }

    #[test]
    fn case_insensitive() {
        let enc = ToyEncoder::new(16).unwrap();
        assert_eq!(enc.encode("Teacup").unwrap(), enc.encode("teacup").unwrap());
        assert_eq!(enc.encode("teacup.").unwrap(), enc.encode("teacup").unwrap());
    }

    #[test]
    fn rows_are_unit_norm() {
        let enc = ToyEncoder::new(64).unwrap();
        let b = enc.encode("Please help me take the teacup").unwrap();
        for row in b.word_tokens.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
        let y = &b.sentence_embedding;
        assert!((y.dot(y) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_small_dims_rejected() {
        let enc = ToyEncoder::new(8).unwrap();
        assert!(matches!(enc.encode("   "), Err(EncoderError::EmptyText)));
        assert!(matches!(enc.encode("..."), Err(EncoderError::EmptyText)));
        assert!(ToyEncoder::new(4).is_err());
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
