//! Text embeddings and cosine similarity.
//!
//! [`HashingEmbedder`] is a deterministic bag-of-words embedder: lowercase,
//! split on non-alphanumeric runs, hash each token with 64-bit FNV-1a into
//! 256 bins, count, then L2-normalize. [`RemoteEmbedder`] posts texts to an
//! HTTP service fronting a real sentence-embedding model.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

pub const HASHING_DIMENSION: usize = 256;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding contains non-finite components")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(EmbeddingVector(values))
        } else {
            Err(EmbeddingError::NonFinite)
        }
    }

    pub fn zeros(dimension: usize) -> Self {
        EmbeddingVector(vec![0.0; dimension])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Result<Self, EmbeddingError> {
        EmbeddingVector::new(self.0.iter().map(|v| v * k).collect())
    }
}

/// Cosine similarity clamped to [-1, 1]; 0 when either vector is zero.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dimension(),
            found: b.dimension(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    // Multiply in a fixed operand order so cosine(a, b) == cosine(b, a) bitwise.
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let denom = if na <= nb { na * nb } else { nb * na };
    Ok((dot / denom).clamp(-1.0, 1.0))
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for &P {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        (**self).embed(text)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        (**self).embed(text)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<P> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        (**self).embed(text)
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Lowercased alphanumeric runs of `text`.
pub fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder {
            dimension: HASHING_DIMENSION,
        }
    }
}

impl HashingEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bin(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dimension as u64) as usize
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut counts = vec![0.0; self.dimension];
        for t in tokens(text) {
            counts[self.bin(&t)] += 1.0;
        }
        let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            counts.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(counts)
    }
}

/// Connection settings for [`RemoteEmbedder`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbeddingConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_in_flight() -> usize {
    4
}

impl RemoteEmbeddingConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteEmbeddingConfig {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_in_flight(),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub(crate) struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

pub(crate) struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub(crate) fn new(n: usize) -> Self {
        Limiter {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dimension: usize,
}

/// JSON-over-HTTP embedder: `POST {"texts": [...]}` answered by
/// `{"vectors": [[...], ...], "dimension": n}`.
pub struct RemoteEmbedder {
    config: RemoteEmbeddingConfig,
    agent: ureq::Agent,
    limiter: Limiter,
    dimension: OnceLock<usize>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbeddingConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .new_agent();
        let limiter = Limiter::new(config.max_in_flight);
        RemoteEmbedder {
            config,
            agent,
            limiter,
            dimension: OnceLock::new(),
        }
    }

    pub fn config(&self) -> &RemoteEmbeddingConfig {
        &self.config
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut v = self.embed_batch(&[text])?;
        Ok(v.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let response: EmbedResponse = {
            let _permit = self.limiter.acquire();
            self.agent
                .post(&self.config.endpoint)
                .send_json(EmbedRequest { texts })
                .and_then(|mut r| r.body_mut().read_json())
                .map_err(|e| EmbeddingError::ProviderUnavailable(e.to_string()))?
        };
        if response.vectors.len() != texts.len() {
            return Err(EmbeddingError::ProviderUnavailable(format!(
                "expected {} vectors, got {}",
                texts.len(),
                response.vectors.len()
            )));
        }
        let expected = *self.dimension.get_or_init(|| response.dimension);
        if response.dimension != expected || expected == 0 {
            return Err(EmbeddingError::DimensionMismatch {
                expected,
                found: response.dimension,
            });
        }
        let mut out = Vec::with_capacity(texts.len());
        for (text, v) in texts.iter().zip(response.vectors) {
            if v.len() != expected {
                return Err(EmbeddingError::DimensionMismatch {
                    expected,
                    found: v.len(),
                });
            }
            // Keep the empty-text convention regardless of what the model returns.
            if text.trim().is_empty() {
                out.push(EmbeddingVector::zeros(expected));
            } else {
                out.push(EmbeddingVector::new(v)?);
            }
        }
        Ok(out)
    }
}

/// Per-run memo of text to vector in front of another provider.
pub struct MemoEmbedder<P> {
    inner: P,
    memo: Mutex<HashMap<String, EmbeddingVector>>,
}

impl<P: EmbeddingProvider> MemoEmbedder<P> {
    pub fn new(inner: P) -> Self {
        MemoEmbedder {
            inner,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for MemoEmbedder<P> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if let Some(v) = self.memo.lock().unwrap_or_else(|e| e.into_inner()).get(text) {
            return Ok(v.clone());
        }
        let v = self.inner.embed(text)?;
        self.memo
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(text.to_string(), v.clone());
        Ok(v)
    }
}

/// Counts embed calls reaching the wrapped provider.
pub struct CountingEmbedder<P> {
    inner: P,
    calls: AtomicU64,
}

impl<P: EmbeddingProvider> CountingEmbedder<P> {
    pub fn new(inner: P) -> Self {
        CountingEmbedder {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CountingEmbedder<P> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(text)
    }
}

/// A provider that always fails, standing in for an outage.
#[derive(Debug, Default)]
pub struct UnavailableEmbedder {
    attempts: AtomicUsize,
}

impl UnavailableEmbedder {
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl EmbeddingProvider for UnavailableEmbedder {
    fn embed(&self, _text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(EmbeddingError::ProviderUnavailable("no embedding service configured".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent hashing oracle: byte-wise FNV-1a written from the
    /// published constants, applied to tokens split by hand.
    fn oracle_embed(text: &str) -> Vec<f64> {
        const OFFSET: u64 = 14695981039346656037;
        const PRIME: u64 = 1099511628211;
        let mut bins = [0f64; 256];
        let lower = text.to_lowercase();
        let mut token = String::new();
        let flush = |token: &mut String, bins: &mut [f64; 256]| {
            if !token.is_empty() {
                let mut h = OFFSET;
                for b in token.bytes() {
                    h = (h ^ b as u64).wrapping_mul(PRIME);
                }
                bins[(h % 256) as usize] += 1.0;
                token.clear();
            }
        };
        for c in lower.chars() {
            if c.is_alphanumeric() {
                token.push(c);
            } else {
                flush(&mut token, &mut bins);
            }
        }
        flush(&mut token, &mut bins);
        let n = bins.iter().map(|v| v * v).sum::<f64>().sqrt();
        bins.iter().map(|v| if n > 0.0 { v / n } else { 0.0 }).collect()
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let e = HashingEmbedder::new().embed("").unwrap();
        assert_eq!(e, EmbeddingVector::zeros(256));
        assert_eq!(HashingEmbedder::new().embed("  ,;  ").unwrap().norm(), 0.0);
    }

    #[test]
    fn deterministic_and_matches_oracle() {
        let p = HashingEmbedder::new();
        assert_eq!(p.embed("alpha beta").unwrap(), p.embed("alpha beta").unwrap());
        let v = p.embed("alpha beta").unwrap();
        assert_eq!(v.values(), oracle_embed("alpha beta").as_slice());
        let (ba, bb) = (p.bin("alpha"), p.bin("beta"));
        assert_ne!(ba, bb);
        let r = 1.0 / 2f64.sqrt();
        assert!((v.values()[ba] - r).abs() < 1e-15 && (v.values()[bb] - r).abs() < 1e-15);
    }

    #[test]
    fn cosine_conventions() {
        let p = HashingEmbedder::new();
        let v = p.embed("some words here").unwrap();
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&v, &EmbeddingVector::zeros(256)).unwrap(), 0.0);
        assert!(matches!(
            cosine(&v, &EmbeddingVector::zeros(3)),
            Err(EmbeddingError::DimensionMismatch { expected: 256, found: 3 })
        ));
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn disjoint_tokens_in_distinct_bins_have_zero_cosine() {
        let p = HashingEmbedder::new();
        let bins: std::collections::BTreeSet<usize> =
            ["aaa", "bbb", "ccc", "ddd"].iter().map(|t| p.bin(t)).collect();
        assert_eq!(bins.len(), 4, "oracle precondition: four distinct bins");
        let c = cosine(&p.embed("aaa bbb").unwrap(), &p.embed("ccc ddd").unwrap()).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn memo_and_counter() {
        let counted = CountingEmbedder::new(HashingEmbedder::new());
        let memo = MemoEmbedder::new(&counted);
        memo.embed("x y").unwrap();
        memo.embed("x y").unwrap();
        memo.embed("z").unwrap();
        assert_eq!(counted.calls(), 2);
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Limiter::new(2);
        let active = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _p = limiter.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    active.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    fn vec256() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-100.0f64..100.0, 256)
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_bounded_and_scale_invariant(a in vec256(), b in vec256(), k in 0.001f64..1000.0) {
            let a = EmbeddingVector::new(a).unwrap();
            let b = EmbeddingVector::new(b).unwrap();
            let ab = cosine(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
            let scaled = cosine(&a.scaled(k).unwrap(), &b).unwrap();
            prop_assert!((scaled - ab).abs() < 1e-9);
        }

        #[test]
        fn token_order_does_not_matter(words in proptest::collection::vec("[a-z]{1,6}", 0..12), seed in any::<u64>()) {
            let p = HashingEmbedder::new();
            let mut shuffled = words.clone();
            // Deterministic permutation from the seed.
            let n = shuffled.len();
            for i in (1..n).rev() {
                let j = ((seed.wrapping_mul(i as u64 + 1)) % (i as u64 + 1)) as usize;
                shuffled.swap(i, j);
            }
            prop_assert_eq!(p.embed(&words.join(" ")).unwrap(), p.embed(&shuffled.join(", ")).unwrap());
        }

        #[test]
        fn hashing_matches_oracle(text in "\\PC{0,80}") {
            let got = HashingEmbedder::new().embed(&text).unwrap();
            let want = oracle_embed(&text);
            prop_assert_eq!(got.values(), want.as_slice());
        }
    }
}
