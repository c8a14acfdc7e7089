use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{tokenize, ProviderConfig};
use crate::error::{Error, Result};
use crate::term::TermCollection;

/// Word vocabulary with its inverse document frequencies, both fixed at build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfConfig {
    pub vocabulary: Vec<String>,
    pub idf: Vec<f64>,
    pub lowercase: bool,
}

impl TfidfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocabulary.is_empty() {
            return Err(Error::validation("tf-idf vocabulary is empty"));
        }
        if self.vocabulary.len() != self.idf.len() {
            return Err(Error::validation(format!(
                "tf-idf vocabulary has {} entries but {} idf weights",
                self.vocabulary.len(),
                self.idf.len()
            )));
        }
        if self.idf.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::validation("tf-idf weights must be finite and positive"));
        }
        Ok(())
    }

    pub fn idf_of(&self, token: &str) -> Option<f64> {
        self.vocabulary
            .iter()
            .position(|t| t == token)
            .map(|i| self.idf[i])
    }
}

/// Smoothed idf: `ln((1 + N) / (1 + df)) + 1`.
pub fn smoothed_idf(corpus_size: usize, document_frequency: usize) -> f64 {
    ((1.0 + corpus_size as f64) / (1.0 + document_frequency as f64)).ln() + 1.0
}

pub fn build_tfidf_from_texts<S: AsRef<str>>(texts: &[S], lowercase: bool) -> Result<ProviderConfig> {
    if texts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        let distinct: BTreeSet<String> = tokenize(text.as_ref())
            .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
            .collect();
        for tok in distinct {
            *df.entry(tok).or_default() += 1;
        }
    }
    if df.is_empty() {
        return Err(Error::validation("tf-idf corpus contains no tokens"));
    }
    let n = texts.len();
    let (vocabulary, idf) = df
        .into_iter()
        .map(|(tok, d)| (tok, smoothed_idf(n, d)))
        .unzip();
    Ok(ProviderConfig::TfidfWord(TfidfConfig {
        vocabulary,
        idf,
        lowercase,
    }))
}

/// Builds a word tf-idf provider whose corpus is the text of each term.
pub fn build_tfidf_provider(corpus: &TermCollection, lowercase: bool) -> Result<ProviderConfig> {
    build_tfidf_from_texts(&corpus.texts(), lowercase)
}

#[derive(Debug)]
pub struct TfidfProvider {
    index: HashMap<String, usize>,
    idf: Vec<f64>,
    lowercase: bool,
    model_id: String,
}

impl TfidfProvider {
    pub fn new(config: TfidfConfig) -> Result<Self> {
        config.validate()?;
        let mut hasher = Sha256::new();
        hasher.update([config.lowercase as u8]);
        for (tok, w) in config.vocabulary.iter().zip(&config.idf) {
            hasher.update((tok.len() as u64).to_le_bytes());
            hasher.update(tok.as_bytes());
            hasher.update(w.to_bits().to_le_bytes());
        }
        let digest = hasher.finalize();
        let model_id = format!(
            "words{}-{}",
            config.vocabulary.len(),
            digest[..8].iter().map(|b| format!("{b:02x}")).collect::<String>()
        );
        let index = config
            .vocabulary
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        Ok(TfidfProvider {
            index,
            idf: config.idf,
            lowercase: config.lowercase,
            model_id,
        })
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn model_id(&self) -> String {
        self.model_id.clone()
    }

    /// Raw term count times idf; tokens outside the vocabulary contribute nothing.
    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for tok in tokenize(text) {
            let idx = if self.lowercase {
                self.index.get(&tok.to_lowercase())
            } else {
                self.index.get(tok)
            };
            if let Some(&i) = idx {
                v[i] += self.idf[i];
            }
        }
        v
    }
}
