//! Text embeddings and cosine similarity for the reasoning-consistency reward.
//!
//! [`ReferenceEmbedder`] is a deterministic stand-in for a sentence encoder:
//! tokens (lowercased maximal alphanumeric runs) are hashed into a fixed
//! number of buckets and the vector marks which buckets are occupied.
//! Presence rather than term frequency keeps the similarity monotone when a
//! shared token is added to both texts.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::JsonClient;

pub const REFERENCE_DIMENSION: usize = 256;
pub const REFERENCE_SEED: u64 = 0x005e_ed0f_c05e;
pub const EMBEDDER_URL_ENV: &str = "EMBEDDER_URL";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimilarityError {
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// An embedding vector. `degenerate` marks the zero vector produced for blank text.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub degenerate: bool,
}

impl Embedding {
    pub fn zero(dimension: usize) -> Self {
        Self {
            vector: vec![0.0; dimension],
            degenerate: true,
        }
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.vector)
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    /// Unit-norm embedding, or the zero vector for blank text.
    fn embed(&self, text: &str) -> Embedding;
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// `u·v / (‖u‖‖v‖)`, 0 when either vector is zero.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::DimensionMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (l2_norm(u), l2_norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceEmbedder {
    dimension: usize,
    seed: u64,
}

impl Default for ReferenceEmbedder {
    fn default() -> Self {
        Self {
            dimension: REFERENCE_DIMENSION,
            seed: REFERENCE_SEED,
        }
    }
}

impl ReferenceEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, seed }
    }

    /// Seeded FNV-1a bucket of an already-normalized token.
    pub fn bucket(&self, token: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for b in token.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        (h % self.dimension as u64) as usize
    }
}

impl EmbeddingProvider for ReferenceEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Embedding {
        let mut vector = vec![0.0; self.dimension];
        for token in tokenize(text) {
            vector[self.bucket(&token)] = 1.0;
        }
        let norm = l2_norm(&vector);
        if norm == 0.0 {
            return Embedding::zero(self.dimension);
        }
        vector.iter_mut().for_each(|x| *x /= norm);
        Embedding {
            vector,
            degenerate: false,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

/// External encoder reached over HTTP (`{"text"}` → `{"vector"}`).
///
/// Any transport error, timeout, or malformed vector falls back to the
/// reference embedder and logs a warning.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: JsonClient,
    fallback: ReferenceEmbedder,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, timeout: Duration, fallback: ReferenceEmbedder) -> Self {
        Self {
            client: JsonClient::new(url, timeout),
            fallback,
        }
    }

    pub fn from_env(timeout: Duration) -> Option<Self> {
        JsonClient::from_env(EMBEDDER_URL_ENV, timeout).map(|client| Self {
            client,
            fallback: ReferenceEmbedder::default(),
        })
    }

    fn remote(&self, text: &str) -> Result<Embedding, String> {
        let resp: EmbedResponse = self
            .client
            .post(&EmbedRequest { text })
            .map_err(|e| e.to_string())?;
        if resp.vector.len() != self.fallback.dimension() {
            return Err(format!(
                "expected {} dimensions, got {}",
                self.fallback.dimension(),
                resp.vector.len()
            ));
        }
        if resp.vector.iter().any(|x| !x.is_finite()) {
            return Err("non-finite component".into());
        }
        let norm = l2_norm(&resp.vector);
        if norm == 0.0 {
            return Ok(Embedding::zero(resp.vector.len()));
        }
        Ok(Embedding {
            vector: resp.vector.iter().map(|x| x / norm).collect(),
            degenerate: false,
        })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.fallback.dimension()
    }

    fn embed(&self, text: &str) -> Embedding {
        if text.trim().is_empty() {
            return Embedding::zero(self.dimension());
        }
        match self.remote(text) {
            Ok(e) => e,
            Err(err) => {
                log::warn!(
                    "embedder at {} unavailable ({err}); using reference embedder",
                    self.client.url()
                );
                self.fallback.embed(text)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_order_does_not_matter() {
        let e = ReferenceEmbedder::default();
        assert_eq!(e.embed("a b a"), e.embed("b a a"));
        assert_eq!(e.embed("A, b; a"), e.embed("b a a"));
    }

    #[test]
    fn blank_text_is_degenerate_zero() {
        let e = ReferenceEmbedder::default();
        for text in ["", "   ", "--!"] {
            let emb = e.embed(text);
            assert!(emb.degenerate);
            assert_eq!(emb.norm(), 0.0);
            assert_eq!(emb.vector.len(), REFERENCE_DIMENSION);
        }
    }

    #[test]
    fn cosine_identity_and_antipode() {
        let e = ReferenceEmbedder::default();
        let x = e.embed("blood appears at the start").vector;
        assert!((cosine(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((cosine(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_and_mismatch() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(
            cosine(&[1.0], &[1.0, 0.0]).unwrap_err(),
            SimilarityError::DimensionMismatch(1, 2)
        );
    }

    #[test]
    fn tokenizer_lowercases_runs() {
        assert_eq!(tokenize("Risk-Analysis: 3s..end"), ["risk", "analysis", "3s", "end"]);
    }
}
