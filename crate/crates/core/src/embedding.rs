//! Text embeddings and cosine similarity.
//!
//! Two backends sit behind [`EmbeddingBackend`]: an HTTP client for a hosted
//! encoder and [`LocalHashEmbedder`], a deterministic signed character-trigram
//! hasher that needs no model and gives identical vectors on every platform.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{HttpError, JsonClient, RetryPolicy};
use crate::scalar::{dot, l2_norm, Scalar};

pub const EMBED_API_KEY_VAR: &str = "ECOLINK_EMBED_API_KEY";
pub const DEFAULT_REMOTE_EMBED_MODEL: &str = "Alibaba-NLP/gte-large-en-v1.5";
pub const DEFAULT_LOCAL_DIM: usize = 256;
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no texts to embed")]
    EmptyBatch,
    #[error("text at index {index} is empty")]
    EmptyText { index: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding has zero length")]
    ZeroVector,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("embedding service failed after {attempts} attempt(s): {source}")]
    Remote {
        attempts: u32,
        #[source]
        source: HttpError,
    },
    #[error("embedding service response invalid: {0}")]
    Protocol(String),
    #[error("invalid embedding backend configuration: {0}")]
    Config(String),
}

impl EmbedError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Remote { source, .. } if source.is_retryable())
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            EmbedError::Remote { source, .. } => source.status(),
            _ => None,
        }
    }
}

/// A dense vector produced by an embedding backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding<T> {
    values: Vec<T>,
}

impl<T: Scalar> Embedding<T> {
    /// Wraps raw values without normalizing them.
    pub fn new(values: Vec<T>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::ZeroVector);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self { values })
    }

    /// Wraps `values` scaled to unit L2 norm.
    pub fn normalized(values: Vec<T>) -> Result<Self, EmbedError> {
        Self::new(values)?.into_normalized()
    }

    pub fn into_normalized(self) -> Result<Self, EmbedError> {
        let norm = l2_norm(&self.values);
        if norm == T::zero() {
            return Err(EmbedError::ZeroVector);
        }
        let values = self.values.into_iter().map(|v| v / norm).collect();
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> T {
        l2_norm(&self.values)
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm().to_f64_lossless() - 1.0).abs() <= NORM_TOLERANCE
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            values: self.values.iter().map(|v| *v * alpha).collect(),
        }
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

/// Cosine similarity `dot(a, b) / (|a| |b|)`.
pub fn cosine<T: Scalar>(a: &Embedding<T>, b: &Embedding<T>) -> Result<T, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == T::zero() || nb == T::zero() {
        return Err(EmbedError::ZeroVector);
    }
    let c = dot(a.values(), b.values()) / (na * nb);
    // Rounding can push |c| a hair above 1.
    Ok(c.max(-T::one()).min(T::one()))
}

/// Produces L2-normalized embeddings, one per input text, in input order.
pub trait EmbeddingBackend<T: Scalar>: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding<T>>, EmbedError>;

    /// Identifies backend and model, recorded in every index built with it.
    fn fingerprint(&self) -> String;

    fn embed_one(&self, text: &str) -> Result<Embedding<T>, EmbedError> {
        self.embed(&[text])?.pop().ok_or(EmbedError::EmptyBatch)
    }
}

fn check_inputs(texts: &[&str]) -> Result<(), EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::EmptyBatch);
    }
    match texts.iter().position(|t| t.trim().is_empty()) {
        Some(index) => Err(EmbedError::EmptyText { index }),
        None => Ok(()),
    }
}

/// Serializable backend selector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbeddingBackendDescriptor {
    Remote {
        endpoint: String,
        model: String,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
    },
    LocalHash {
        dim: usize,
    },
}

fn default_batch_size() -> usize {
    32
}

impl Default for EmbeddingBackendDescriptor {
    fn default() -> Self {
        EmbeddingBackendDescriptor::LocalHash {
            dim: DEFAULT_LOCAL_DIM,
        }
    }
}

impl EmbeddingBackendDescriptor {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            EmbeddingBackendDescriptor::Remote {
                endpoint,
                model,
                batch_size,
            } => {
                if endpoint.trim().is_empty() {
                    return Err("remote embedding backend requires an endpoint".into());
                }
                if model.trim().is_empty() {
                    return Err("remote embedding backend requires a model".into());
                }
                if *batch_size == 0 {
                    return Err("batch_size must be >= 1".into());
                }
                Ok(())
            }
            EmbeddingBackendDescriptor::LocalHash { dim } if *dim < 8 => {
                Err(format!("local-hash dim must be >= 8, got {dim}"))
            }
            EmbeddingBackendDescriptor::LocalHash { .. } => Ok(()),
        }
    }

    pub fn fingerprint(&self) -> String {
        match self {
            EmbeddingBackendDescriptor::Remote { model, .. } => format!("remote:{model}"),
            EmbeddingBackendDescriptor::LocalHash { dim } => format!("local-hash-{dim}"),
        }
    }

    /// Instantiates the backend. Remote credentials come from
    /// `ECOLINK_EMBED_API_KEY` when set.
    pub fn build<T: Scalar>(&self) -> Result<Box<dyn EmbeddingBackend<T>>, EmbedError> {
        self.validate().map_err(EmbedError::Config)?;
        match self {
            EmbeddingBackendDescriptor::LocalHash { dim } => {
                Ok(Box::new(LocalHashEmbedder::new(*dim)?))
            }
            EmbeddingBackendDescriptor::Remote {
                endpoint,
                model,
                batch_size,
            } => Ok(Box::new(
                RemoteEmbedder::new(endpoint, model, std::env::var(EMBED_API_KEY_VAR).ok())?
                    .with_batch_size(*batch_size),
            )),
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

/// Signed bucket counts of the lowercase character trigrams of `text`.
/// Texts shorter than three characters hash as a single gram.
pub fn trigram_counts(text: &str, dim: usize) -> Vec<i64> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut counts = vec![0i64; dim];
    let mut add = |gram: &[char]| {
        let gram: String = gram.iter().collect();
        let h = fnv1a64(gram.as_bytes());
        let bucket = (h % dim as u64) as usize;
        counts[bucket] += if h >> 63 == 0 { 1 } else { -1 };
    };
    if chars.len() < 3 {
        add(&chars);
    } else {
        chars.windows(3).for_each(&mut add);
    }
    counts
}

/// Deterministic embedder over signed, hashed character trigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalHashEmbedder {
    dim: usize,
}

impl LocalHashEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim < 8 {
            return Err(EmbedError::Config(format!(
                "local-hash dim must be >= 8, got {dim}"
            )));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_text<T: Scalar>(&self, text: &str) -> Result<Embedding<T>, EmbedError> {
        let values = trigram_counts(text, self.dim)
            .into_iter()
            .map(|c| T::from_i64(c).unwrap_or_else(T::zero))
            .collect();
        Embedding::normalized(values)
    }
}

impl<T: Scalar> EmbeddingBackend<T> for LocalHashEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding<T>>, EmbedError> {
        check_inputs(texts)?;
        texts.iter().map(|t| self.embed_text(t)).collect()
    }

    fn fingerprint(&self) -> String {
        format!("local-hash-{}", self.dim)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    index: usize,
    embedding: Vec<f64>,
}

/// Client for an embedding service speaking the common
/// `{model, input} -> {data: [{index, embedding}]}` shape.
///
/// Results are memoized per exact input text for the lifetime of the client.
pub struct RemoteEmbedder<T> {
    client: JsonClient,
    model: String,
    batch_size: usize,
    cache: Mutex<HashMap<String, Embedding<T>>>,
}

impl<T: Scalar> RemoteEmbedder<T> {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>) -> Result<Self, EmbedError> {
        Self::with_retry(endpoint, model, api_key, RetryPolicy::default())
    }

    pub fn with_retry(
        endpoint: &str,
        model: &str,
        api_key: Option<String>,
        retry: RetryPolicy,
    ) -> Result<Self, EmbedError> {
        let client = JsonClient::new(endpoint, api_key, retry, Duration::from_secs(120)).map_err(
            |source| EmbedError::Remote {
                attempts: 0,
                source,
            },
        )?;
        Ok(Self {
            client,
            model: model.to_owned(),
            batch_size: default_batch_size(),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn cached_len(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }

    fn fetch(&self, batch: &[&str]) -> Result<Vec<Embedding<T>>, EmbedError> {
        let resp: EmbedResponse = self
            .client
            .post(&EmbedRequest {
                model: &self.model,
                input: batch,
            })
            .map_err(|(source, attempts)| EmbedError::Remote { attempts, source })?;
        if resp.data.len() != batch.len() {
            return Err(EmbedError::Protocol(format!(
                "asked for {} embeddings, got {}",
                batch.len(),
                resp.data.len()
            )));
        }
        let mut slots: Vec<Option<Embedding<T>>> = vec![None; batch.len()];
        for datum in resp.data {
            let slot = slots.get_mut(datum.index).ok_or_else(|| {
                EmbedError::Protocol(format!("response index {} out of range", datum.index))
            })?;
            let values = datum.embedding.into_iter().map(T::from_f64_lossy).collect();
            *slot = Some(Embedding::normalized(values)?);
        }
        let out: Vec<Embedding<T>> = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| EmbedError::Protocol(format!("missing index {i}"))))
            .collect::<Result<_, _>>()?;
        let dim = out[0].dim();
        if let Some(bad) = out.iter().find(|e| e.dim() != dim) {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(out)
    }
}

impl<T: Scalar> EmbeddingBackend<T> for RemoteEmbedder<T> {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding<T>>, EmbedError> {
        check_inputs(texts)?;
        let mut missing: Vec<&str> = {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            texts
                .iter()
                .copied()
                .filter(|t| !cache.contains_key(*t))
                .collect()
        };
        missing.sort_unstable();
        missing.dedup();
        for batch in missing.chunks(self.batch_size) {
            let fetched = self.fetch(batch)?;
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            if let Some(existing) = cache.values().next() {
                if existing.dim() != fetched[0].dim() {
                    return Err(EmbedError::DimensionMismatch {
                        expected: existing.dim(),
                        found: fetched[0].dim(),
                    });
                }
            }
            for (text, emb) in batch.iter().zip(fetched) {
                cache.insert((*text).to_owned(), emb);
            }
        }
        let cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(texts.iter().map(|t| cache[*t].clone()).collect())
    }

    fn fingerprint(&self) -> String {
        format!("remote:{}", self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e64(v: &[f64]) -> Embedding<f64> {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn fnv_reference_value() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"abc"), 0xe71fa2190541574b);
    }

    #[test]
    fn local_hash_is_deterministic_and_normalized() {
        let b = LocalHashEmbedder::new(256).unwrap();
        let x: Vec<Embedding<f32>> = b.embed(&["abc"]).unwrap();
        let y: Vec<Embedding<f32>> = b.embed(&["abc"]).unwrap();
        let bits = |e: &Embedding<f32>| e.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x[0]), bits(&y[0]));
        assert!((x[0].norm() as f64 - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn local_hash_is_case_insensitive() {
        let b = LocalHashEmbedder::new(64).unwrap();
        let x: Embedding<f64> = b.embed_text("WELLE").unwrap();
        let y: Embedding<f64> = b.embed_text("welle").unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn short_text_hashes_as_one_gram() {
        let counts = trigram_counts("ab", 8);
        assert_eq!(counts.iter().map(|c| c.abs()).sum::<i64>(), 1);
    }

    #[test]
    fn input_errors() {
        let b = LocalHashEmbedder::new(16).unwrap();
        let r: Result<Vec<Embedding<f32>>, _> = b.embed(&[]);
        assert!(matches!(r, Err(EmbedError::EmptyBatch)));
        let r: Result<Vec<Embedding<f32>>, _> = b.embed(&["ok", "  "]);
        assert!(matches!(r, Err(EmbedError::EmptyText { index: 1 })));
        assert!(LocalHashEmbedder::new(7).is_err());
    }

    #[test]
    fn cosine_examples() {
        let v = e64(&[0.3, -2.0, 5.5]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() <= 1e-9);
        assert_eq!(cosine(&e64(&[1.0, 0.0]), &e64(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&e64(&[1.0, 1.0]), &e64(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-6);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&e64(&[1.0, 0.0]), &e64(&[1.0, 0.0, 0.0])),
            Err(EmbedError::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
        assert!(matches!(
            cosine(&e64(&[0.0, 0.0]), &e64(&[1.0, 0.0])),
            Err(EmbedError::ZeroVector)
        ));
    }

    #[test]
    fn descriptor_rules() {
        let d = EmbeddingBackendDescriptor::default();
        assert_eq!(d.fingerprint(), "local-hash-256");
        assert!(EmbeddingBackendDescriptor::LocalHash { dim: 4 }
            .validate()
            .is_err());
        let r = EmbeddingBackendDescriptor::Remote {
            endpoint: String::new(),
            model: "m".into(),
            batch_size: 8,
        };
        assert!(r.validate().is_err());
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, r#"{"kind":"local-hash","dim":256}"#);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (1usize..32).prop_flat_map(|n| {
                (
                    prop::collection::vec(-10.0f64..10.0, n),
                    prop::collection::vec(-10.0f64..10.0, n),
                )
            })
        }

        proptest! {
            #[test]
            fn cosine_symmetric_and_scale_invariant((a, b) in vec_pair(), alpha in 0.01f64..100.0) {
                prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
                let (ea, eb) = (e64(&a), e64(&b));
                let ab = cosine(&ea, &eb).unwrap();
                prop_assert!((-1.0..=1.0).contains(&ab));
                prop_assert_eq!(ab, cosine(&eb, &ea).unwrap());
                let scaled = cosine(&ea.scaled(alpha), &eb).unwrap();
                prop_assert!((scaled - ab).abs() <= 1e-9);
            }

            #[test]
            fn normalized_cosine_is_dot((a, b) in vec_pair()) {
                prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
                let na = Embedding::normalized(a).unwrap();
                let nb = Embedding::normalized(b).unwrap();
                prop_assert!(na.is_normalized());
                let d = dot(na.values(), nb.values());
                prop_assert!((cosine(&na, &nb).unwrap() - d).abs() <= 1e-6);
            }

            #[test]
            fn local_hash_always_unit_norm(text in "[a-zA-Z0-9 ,.äöü]{1,80}") {
                prop_assume!(!text.trim().is_empty());
                let b = LocalHashEmbedder::new(64).unwrap();
                if let Ok(e) = b.embed_text::<f32>(&text) {
                    prop_assert!(e.is_normalized());
                }
            }
        }
    }
}
