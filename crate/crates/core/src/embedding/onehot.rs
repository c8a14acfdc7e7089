use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{normalize_in_place, tokenize};
use crate::error::{Error, Result};

/// Vocabulary entries may be single words or whole phrases. The last output
/// coordinate is reserved for text that matches nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneHotConfig {
    pub vocabulary: Vec<String>,
}

impl OneHotConfig {
    pub fn new<S: AsRef<str>>(entries: impl IntoIterator<Item = S>) -> Self {
        OneHotConfig {
            vocabulary: entries.into_iter().map(|s| s.as_ref().trim().to_string()).collect(),
        }
    }

    /// Vocabulary of the distinct tokens in `texts`, in first-seen order.
    pub fn from_tokens<S: AsRef<str>>(texts: impl IntoIterator<Item = S>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let mut vocabulary = Vec::new();
        for text in texts {
            for tok in tokenize(text.as_ref()) {
                if seen.insert(tok.to_string()) {
                    vocabulary.push(tok.to_string());
                }
            }
        }
        OneHotConfig { vocabulary }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocabulary.is_empty() {
            return Err(Error::validation("one-hot vocabulary is empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for entry in &self.vocabulary {
            if entry.is_empty() {
                return Err(Error::validation("one-hot vocabulary contains an empty entry"));
            }
            if !seen.insert(entry.as_str()) {
                return Err(Error::validation(format!(
                    "one-hot vocabulary entry {entry:?} repeated"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct OneHotProvider {
    index: HashMap<String, usize>,
    dim: usize,
    model_id: String,
}

impl OneHotProvider {
    pub fn new(config: OneHotConfig) -> Result<Self> {
        config.validate()?;
        let mut hasher = Sha256::new();
        for entry in &config.vocabulary {
            hasher.update((entry.len() as u64).to_le_bytes());
            hasher.update(entry.as_bytes());
        }
        let digest = hasher.finalize();
        let model_id = format!(
            "vocab{}-{}",
            config.vocabulary.len(),
            digest[..8].iter().map(|b| format!("{b:02x}")).collect::<String>()
        );
        let dim = config.vocabulary.len() + 1;
        let index = config
            .vocabulary
            .into_iter()
            .enumerate()
            .map(|(i, e)| (e, i))
            .collect();
        Ok(OneHotProvider { index, dim, model_id })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn unknown_index(&self) -> usize {
        self.dim - 1
    }

    pub fn model_id(&self) -> String {
        self.model_id.clone()
    }

    /// Whole-text match first; otherwise every known token is switched on.
    /// Text matching nothing maps to the unknown coordinate. Always unit length.
    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let text = text.trim();
        if let Some(&i) = self.index.get(text) {
            v[i] = 1.0;
            return v;
        }
        let mut any = false;
        for tok in tokenize(text) {
            if let Some(&i) = self.index.get(tok) {
                v[i] = 1.0;
                any = true;
            }
        }
        if !any {
            v[self.unknown_index()] = 1.0;
        }
        normalize_in_place(&mut v);
        v
    }
}
