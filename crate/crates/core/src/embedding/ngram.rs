use serde::{Deserialize, Serialize};

use super::normalize_in_place;
use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Hashed character n-grams over `^text$`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharNgramConfig {
    pub min_n: usize,
    pub max_n: usize,
    pub dim: usize,
}

impl Default for CharNgramConfig {
    fn default() -> Self {
        CharNgramConfig {
            min_n: 2,
            max_n: 3,
            dim: 1024,
        }
    }
}

impl CharNgramConfig {
    pub fn new(min_n: usize, max_n: usize, dim: usize) -> Self {
        CharNgramConfig { min_n, max_n, dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_n < 1 || self.min_n > self.max_n {
            return Err(Error::validation(format!(
                "invalid n-gram range {}..={}",
                self.min_n, self.max_n
            )));
        }
        if self.dim < 16 {
            return Err(Error::validation(format!(
                "hash dimension {} is below the minimum of 16",
                self.dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct CharNgramProvider {
    config: CharNgramConfig,
}

impl CharNgramProvider {
    pub fn new(config: CharNgramConfig) -> Result<Self> {
        config.validate()?;
        Ok(CharNgramProvider { config })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn model_id(&self) -> String {
        let c = &self.config;
        format!("n{}-{}-d{}", c.min_n, c.max_n, c.dim)
    }

    /// L2-normalized n-gram counts. Non-zero whenever the padded text holds at
    /// least `min_n` characters.
    pub fn vector(&self, text: &str) -> Vec<f64> {
        let padded: Vec<char> = std::iter::once('^')
            .chain(text.trim().chars())
            .chain(std::iter::once('$'))
            .collect();
        let mut v = vec![0.0; self.config.dim];
        let mut buf = String::new();
        for n in self.config.min_n..=self.config.max_n {
            for window in padded.windows(n) {
                buf.clear();
                buf.extend(window);
                let slot = fnv1a_64(buf.as_bytes()) % self.config.dim as u64;
                v[slot as usize] += 1.0;
            }
        }
        normalize_in_place(&mut v);
        v
    }
}
