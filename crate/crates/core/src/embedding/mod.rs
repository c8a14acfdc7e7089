//! Text-to-vector providers, cosine similarity and batched, cached embedding.

mod cache;
mod ngram;
mod onehot;
mod remote;
mod tfidf;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{cache_key, CacheEntry, EmbeddingCache};
pub use ngram::{fnv1a_64, CharNgramConfig, CharNgramProvider};
pub use onehot::{OneHotConfig, OneHotProvider};
pub use remote::{RemoteConfig, RemoteProvider, RetryPolicy};
pub use tfidf::{build_tfidf_provider, build_tfidf_from_texts, TfidfConfig, TfidfProvider};

/// A dense vector together with the provider and model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub provider_id: String,
    pub model_id: String,
}

impl Embedding {
    pub fn new(values: Vec<f64>, provider_id: impl Into<String>, model_id: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("embedding has zero dimensions"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "embedding value at index {i} is not finite"
            )));
        }
        Ok(Embedding {
            values,
            provider_id: provider_id.into(),
            model_id: model_id.into(),
        })
    }

    /// Wraps raw values without provenance, mostly for tests and synthetic data.
    pub fn raw(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values, "raw", "raw")
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn normalize_in_place(v: &mut [f64]) {
    let n = l2_norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Cosine of the angle between two equal-length slices. Zero when either
/// vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine(&a.values, &b.values)
}

/// Splits on every character that is not alphanumeric.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
}

/// Serializable description of a provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProviderConfig {
    OneHot(OneHotConfig),
    TfidfWord(TfidfConfig),
    CharNgramHashed(CharNgramConfig),
    Remote(RemoteConfig),
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProviderConfig::OneHot(c) => c.validate(),
            ProviderConfig::TfidfWord(c) => c.validate(),
            ProviderConfig::CharNgramHashed(c) => c.validate(),
            ProviderConfig::Remote(c) => c.validate(),
        }
    }

    pub fn build(&self) -> Result<Provider> {
        Provider::new(self.clone())
    }
}

/// A validated, ready-to-use provider.
#[derive(Debug)]
pub enum Provider {
    OneHot(OneHotProvider),
    Tfidf(TfidfProvider),
    CharNgram(CharNgramProvider),
    Remote(RemoteProvider),
}

impl Provider {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        config.validate()?;
        Ok(match config {
            ProviderConfig::OneHot(c) => Provider::OneHot(OneHotProvider::new(c)?),
            ProviderConfig::TfidfWord(c) => Provider::Tfidf(TfidfProvider::new(c)?),
            ProviderConfig::CharNgramHashed(c) => Provider::CharNgram(CharNgramProvider::new(c)?),
            ProviderConfig::Remote(c) => Provider::Remote(RemoteProvider::new(c)?),
        })
    }

    pub fn provider_id(&self) -> &str {
        match self {
            Provider::OneHot(_) => "one-hot",
            Provider::Tfidf(_) => "tfidf-word",
            Provider::CharNgram(_) => "char-ngram",
            Provider::Remote(_) => "remote",
        }
    }

    pub fn model_id(&self) -> String {
        match self {
            Provider::OneHot(p) => p.model_id(),
            Provider::Tfidf(p) => p.model_id(),
            Provider::CharNgram(p) => p.model_id(),
            Provider::Remote(p) => p.model_id().to_string(),
        }
    }

    /// Output dimension, when known ahead of the first call.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Provider::OneHot(p) => Some(p.dim()),
            Provider::Tfidf(p) => Some(p.dim()),
            Provider::CharNgram(p) => Some(p.dim()),
            Provider::Remote(p) => p.dim(),
        }
    }

    pub fn is_local(&self) -> bool {
        !matches!(self, Provider::Remote(_))
    }

    fn wrap(&self, values: Vec<f64>) -> Result<Embedding> {
        Embedding::new(values, self.provider_id(), self.model_id())
    }

    pub fn embed(&self, text: &str) -> Result<Embedding> {
        validate_text(text)?;
        let values = match self {
            Provider::OneHot(p) => p.vector(text),
            Provider::Tfidf(p) => p.vector(text),
            Provider::CharNgram(p) => p.vector(text),
            Provider::Remote(p) => p
                .embed_texts(&[text])
                .map_err(unwrap_batch)?
                .pop()
                .ok_or_else(|| Error::validation("remote provider returned no vectors"))?,
        };
        self.wrap(values)
    }

    /// Embeds many texts; failures carry the index of the offending text.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        match self {
            Provider::OneHot(p) => Ok(texts.iter().map(|t| p.vector(t)).collect()),
            Provider::Tfidf(p) => Ok(texts.iter().map(|t| p.vector(t)).collect()),
            Provider::CharNgram(p) => Ok(texts.iter().map(|t| p.vector(t)).collect()),
            Provider::Remote(p) => p.embed_texts(texts),
        }
    }
}

fn unwrap_batch(e: Error) -> Error {
    match e {
        Error::Batch { source, .. } => *source,
        other => other,
    }
}

fn validate_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::validation("cannot embed empty text"));
    }
    Ok(())
}

/// Embeds `text` with a freshly built provider.
pub fn embed(text: &str, config: &ProviderConfig) -> Result<Embedding> {
    Provider::new(config.clone())?.embed(text)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

impl CacheStats {
    pub fn merge(&mut self, other: CacheStats) {
        self.hits += other.hits;
        self.misses += other.misses;
    }
}

#[derive(Debug, Clone)]
pub struct BatchEmbeddings {
    pub embeddings: Vec<Embedding>,
    pub stats: CacheStats,
}

/// Embeds every text in order. With a cache, texts already stored for this
/// provider and model are served from disk and new vectors are appended.
///
/// Without a cache every item counts as a miss.
pub fn embed_batch(
    texts: &[&str],
    provider: &Provider,
    cache: Option<&EmbeddingCache>,
) -> Result<BatchEmbeddings> {
    for (index, t) in texts.iter().enumerate() {
        validate_text(t).map_err(|e| Error::Batch {
            index,
            source: Box::new(e),
        })?;
    }
    let provider_id = provider.provider_id();
    let model_id = provider.model_id();
    let keys: Vec<String> = texts
        .iter()
        .map(|t| cache_key(provider_id, &model_id, t))
        .collect();

    let mut resolved: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut stats = CacheStats::default();
    let mut pending: Vec<usize> = Vec::new();
    let mut pending_keys: HashSet<&str> = HashSet::new();
    for (i, key) in keys.iter().enumerate() {
        let key = key.as_str();
        if resolved.contains_key(key) {
            stats.hits += 1;
            continue;
        }
        if pending_keys.contains(key) {
            stats.misses += 1;
            continue;
        }
        if let Some(values) = cache.map(|c| c.get(provider_id, key)).transpose()?.flatten() {
            stats.hits += 1;
            resolved.insert(key, values);
            continue;
        }
        stats.misses += 1;
        pending.push(i);
        pending_keys.insert(key);
    }

    if !pending.is_empty() {
        let batch: Vec<&str> = pending.iter().map(|&i| texts[i]).collect();
        let vectors = provider.embed_texts(&batch).map_err(|e| match e {
            Error::Batch { index, source } => Error::Batch {
                index: pending[index],
                source,
            },
            other => other,
        })?;
        let mut new_entries = Vec::with_capacity(vectors.len());
        for (&i, values) in pending.iter().zip(vectors) {
            if cache.is_some() {
                new_entries.push(CacheEntry::new(keys[i].clone(), values.clone()));
            }
            resolved.insert(keys[i].as_str(), values);
        }
        if let Some(c) = cache {
            c.append(provider_id, &new_entries)?;
        }
    }

    let mut dim = provider.dim();
    let mut embeddings = Vec::with_capacity(texts.len());
    for (index, key) in keys.iter().enumerate() {
        let values = resolved[key.as_str()].clone();
        match dim {
            Some(d) if d != values.len() => {
                return Err(Error::Batch {
                    index,
                    source: Box::new(Error::validation(format!(
                        "vector has dimension {}, provider dimension is {d}",
                        values.len()
                    ))),
                })
            }
            None => dim = Some(values.len()),
            _ => {}
        }
        embeddings.push(
            Embedding::new(values, provider_id, model_id.clone()).map_err(|e| Error::Batch {
                index,
                source: Box::new(e),
            })?,
        );
    }
    Ok(BatchEmbeddings { embeddings, stats })
}
