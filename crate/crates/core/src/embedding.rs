//! Sentence vectors and the providers that produce them.
//!
//! Every provider normalizes vectors to unit length on ingest, so cosine
//! similarity between two provider outputs is a dot product. The one
//! exception is a text with no tokens under the fallback embedder, which
//! maps to the zero vector.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{content_hash, split_sentences, ClusterRecord};
use crate::http::{join_url, JsonClient, RetryPolicy};
use crate::metrics::tokenize;
use crate::{Error, Result};

pub const DEFAULT_DIM: usize = 64;
const CACHE_FORMAT: &str = "embcache";

/// Dense embedding of one text.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SentenceVector(Vec<f64>);

impl fmt::Debug for SentenceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl SentenceVector {
    /// Wraps raw values as-is. Fails on NaN or infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sentence vector"));
        }
        Ok(SentenceVector(values))
    }

    /// Wraps and L2-normalizes. A zero vector stays zero.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let mut v = Self::new(values)?;
        let norm = v.norm();
        if norm > 0.0 {
            v.0.iter_mut().for_each(|x| *x /= norm);
        }
        Ok(v)
    }

    pub fn zeros(dim: usize) -> Self {
        SentenceVector(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimMismatch { expected, found });
    }
    Ok(())
}

/// Cosine similarity in `[-1, 1]`. Returns 0 when either vector is all zeros.
pub fn cosine(u: &SentenceVector, v: &SentenceVector) -> Result<f64> {
    check_dims(u.dim(), v.dim())?;
    let sq = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>();
    let (nu2, nv2) = (sq(&u.0), sq(&v.0));
    if nu2 == 0.0 || nv2 == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    // sqrt of the product keeps cosine(v, v) at exactly 1
    Ok((dot / (nu2 * nv2).sqrt()).clamp(-1.0, 1.0))
}

/// Coordinate-wise mean, re-normalized to unit length.
pub fn mean_pool(vectors: &[SentenceVector]) -> Result<SentenceVector> {
    let first = vectors.first().ok_or(Error::EmptyPool)?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        check_dims(dim, v.dim())?;
        acc.iter_mut().zip(&v.0).for_each(|(a, x)| *a += x);
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    SentenceVector::normalized(acc)
}

/// Uniform contract over embedding back ends.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// One vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<SentenceVector>>;

    /// Embeds a possibly multi-sentence text. The default splits it into
    /// sentences and mean-pools their vectors.
    fn embed_text(&self, text: &str) -> Result<SentenceVector> {
        let sentences = split_sentences(text);
        if sentences.is_empty() {
            return Ok(SentenceVector::zeros(self.dim()));
        }
        mean_pool(&self.embed(&sentences)?)
    }
}

/// Embeds every sentence of a cluster, indexed like `cluster.sentences`.
pub fn embed_cluster(provider: &dyn EmbeddingProvider, cluster: &ClusterRecord) -> Result<Vec<SentenceVector>> {
    provider.embed(&cluster.sentence_texts())
}

/// Offline hashed bag-of-words embedder.
///
/// Each lowercase token is hashed with 64-bit FNV-1a; the low bits pick a
/// bucket and bit 32 picks the sign. Counts accumulate, then the vector is
/// L2-normalized. The result depends only on the token multiset.
#[derive(Debug, Clone)]
pub struct FallbackEmbedder {
    dim: usize,
}

impl FallbackEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        Ok(FallbackEmbedder { dim })
    }

    pub fn embed_one(&self, text: &str) -> SentenceVector {
        let mut acc = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = fnv1a64(token.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 32) & 1 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign;
        }
        SentenceVector::normalized(acc).expect("counts are finite")
    }
}

impl EmbeddingProvider for FallbackEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<SentenceVector>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Precomputed vectors keyed by sentence content hash. Misses are errors.
#[derive(Debug, Clone)]
pub struct CacheProvider {
    dim: usize,
    entries: HashMap<String, SentenceVector>,
}

#[derive(Deserialize)]
struct CacheHeader {
    format: String,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    vector: Vec<f64>,
}

impl CacheProvider {
    pub fn from_entries(dim: usize, entries: impl IntoIterator<Item = (String, SentenceVector)>) -> Result<Self> {
        let mut map = HashMap::new();
        for (key, v) in entries {
            check_dims(dim, v.dim())?;
            map.insert(key, SentenceVector::normalized(v.into_values())?);
        }
        Ok(CacheProvider { dim, entries: map })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::BadCache("missing header line".into()))?;
        let header: CacheHeader = serde_json::from_str(header)
            .map_err(|e| Error::BadCache(format!("bad header: {e}")))?;
        if header.format != CACHE_FORMAT {
            return Err(Error::BadCache(format!("unknown format {:?}", header.format)));
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let entry: CacheEntry = serde_json::from_str(line)
                .map_err(|e| Error::BadCache(format!("line {}: {e}", i + 1)))?;
            if entry.vector.len() != header.dim {
                return Err(Error::BadCache(format!(
                    "line {}: expected {} values, found {}",
                    i + 1,
                    header.dim,
                    entry.vector.len()
                )));
            }
            entries.push((entry.key, SentenceVector::new(entry.vector)?));
        }
        Self::from_entries(header.dim, entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl EmbeddingProvider for CacheProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<SentenceVector>> {
        let mut out = Vec::with_capacity(texts.len());
        let mut missing = Vec::new();
        for text in texts {
            let key = content_hash(text);
            match self.entries.get(&key) {
                Some(v) => out.push(v.clone()),
                None => missing.push(key),
            }
        }
        if !missing.is_empty() {
            missing.dedup();
            return Err(Error::MissingEmbeddings(missing));
        }
        Ok(out)
    }
}

/// Writes an embedding cache file. Keys are written in the given order.
pub fn write_embedding_cache(path: impl AsRef<Path>, dim: usize, entries: &[(String, SentenceVector)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&json!({"format": CACHE_FORMAT, "dim": dim}).to_string());
    out.push('\n');
    for (key, v) in entries {
        check_dims(dim, v.dim())?;
        let entry = CacheEntry {
            key: key.clone(),
            vector: v.values().to_vec(),
        };
        out.push_str(&serde_json::to_string(&entry)?);
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Client for a `POST /embed` service.
#[derive(Clone)]
pub struct RemoteProvider {
    url: String,
    dim: usize,
    batch_size: usize,
    client: JsonClient,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl RemoteProvider {
    pub fn new(endpoint: &str, dim: usize, timeout: Duration) -> Self {
        Self::with_backoff(endpoint, dim, timeout, Duration::from_millis(100))
    }

    pub fn with_backoff(endpoint: &str, dim: usize, timeout: Duration, initial_backoff: Duration) -> Self {
        let retry = RetryPolicy {
            initial_backoff,
            ..RetryPolicy::default()
        };
        RemoteProvider {
            url: join_url(endpoint, "embed"),
            dim,
            batch_size: 32,
            client: JsonClient::new(timeout, retry),
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<SentenceVector>> {
        let resp: EmbedResponse = self.client.post(&self.url, &json!({ "texts": texts }))?;
        check_dims(self.dim, resp.dim)?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Transport {
                attempts: 1,
                message: format!("expected {} vectors, got {}", texts.len(), resp.vectors.len()),
            });
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                check_dims(self.dim, v.len())?;
                SentenceVector::normalized(v)
            })
            .collect()
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<SentenceVector>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(chunk)?);
        }
        Ok(out)
    }

    /// Sends the whole text in one request rather than pooling sentences.
    fn embed_text(&self, text: &str) -> Result<SentenceVector> {
        if text.trim().is_empty() {
            return Ok(SentenceVector::zeros(self.dim));
        }
        Ok(self.embed_batch(&[text.to_string()])?.remove(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Cache,
    Remote,
    #[default]
    Fallback,
}

impl std::str::FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cache" => Ok(ProviderKind::Cache),
            "remote" => Ok(ProviderKind::Remote),
            "fallback" => Ok(ProviderKind::Fallback),
            other => Err(Error::InvalidConfig(format!("unknown embedder kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    pub dim: usize,
    pub cache_path: Option<PathBuf>,
    pub endpoint_url: Option<String>,
    pub timeout_ms: u64,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        EmbeddingProviderConfig {
            kind: ProviderKind::Fallback,
            dim: DEFAULT_DIM,
            cache_path: None,
            endpoint_url: None,
            timeout_ms: 30_000,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("embedder dim must be positive".into()));
        }
        if self.timeout_ms == 0 {
            return Err(Error::InvalidConfig("embedder timeout_ms must be positive".into()));
        }
        match self.kind {
            ProviderKind::Cache if self.cache_path.is_none() => {
                Err(Error::InvalidConfig("cache embedder needs cache_path".into()))
            }
            ProviderKind::Remote if self.endpoint_url.is_none() => {
                Err(Error::InvalidConfig("remote embedder needs endpoint_url".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Fallback => Box::new(FallbackEmbedder::new(self.dim)?),
            ProviderKind::Cache => {
                let cache = CacheProvider::load(self.cache_path.as_ref().expect("validated"))?;
                check_dims(self.dim, cache.dim())?;
                Box::new(cache)
            }
            ProviderKind::Remote => Box::new(RemoteProvider::new(
                self.endpoint_url.as_deref().expect("validated"),
                self.dim,
                Duration::from_millis(self.timeout_ms),
            )),
        })
    }
}
