//! Layered run configuration: command-line flags override the config file,
//! which overrides `METACURATE_*` environment variables.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use metacurate_core::embedding::{CharNgramConfig, RemoteConfig, RetryPolicy};
use serde::Deserialize;

use crate::Failure;

pub const ENV_PREFIX: &str = "METACURATE_";
pub const DEFAULT_TOKEN_ENV: &str = "METACURATE_API_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    OneHot,
    TfidfWord,
    CharNgram,
    Remote,
}

impl ProviderKind {
    pub const LOCAL: [ProviderKind; 3] = [ProviderKind::OneHot, ProviderKind::TfidfWord, ProviderKind::CharNgram];

    pub fn name(self) -> &'static str {
        match self {
            ProviderKind::OneHot => "one-hot",
            ProviderKind::TfidfWord => "tfidf-word",
            ProviderKind::CharNgram => "char-ngram",
            ProviderKind::Remote => "remote",
        }
    }
}

impl FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "one-hot" | "onehot" => Ok(ProviderKind::OneHot),
            "tfidf-word" | "tfidf" => Ok(ProviderKind::TfidfWord),
            "char-ngram" | "ngram" => Ok(ProviderKind::CharNgram),
            "remote" => Ok(ProviderKind::Remote),
            other => Err(format!(
                "unknown provider {other:?} (one-hot, tfidf-word, char-ngram, remote)"
            )),
        }
    }
}

/// Every tunable knob. Unset fields fall through to the next layer and then
/// to the command's default.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub provider: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub top_k: Option<usize>,
    pub use_definitions: Option<bool>,
    pub k: Option<String>,
    pub substitutions: Option<usize>,
    pub repeat: Option<usize>,
    pub ngram_min: Option<usize>,
    pub ngram_max: Option<usize>,
    pub ngram_dim: Option<usize>,
    pub perplexity: Option<f64>,
    pub iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub token_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_in_flight: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_attempts: Option<u32>,
    pub base_delay_ms: Option<u64>,
}

macro_rules! overlay {
    ($hi:expr, $lo:expr, $($field:ident),+) => {
        Settings { $($field: $hi.$field.or($lo.$field)),+ }
    };
}

impl Settings {
    /// Fields set in `self` win over those in `lower`.
    pub fn over(self, lower: Settings) -> Settings {
        overlay!(
            self, lower, provider, cache_dir, seed, top_k, use_definitions, k, substitutions, repeat,
            ngram_min, ngram_max, ngram_dim, perplexity, iterations, learning_rate, endpoint, model,
            token_env, timeout_secs, max_in_flight, batch_size, max_attempts, base_delay_ms
        )
    }

    pub fn from_file(path: &Path) -> Result<Settings, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Reads `METACURATE_<FIELD>` variables. The token variable is never a
    /// setting; it is read only when a remote provider is built.
    pub fn from_env(vars: impl IntoIterator<Item = (String, String)>) -> Result<Settings, Failure> {
        let mut table = toml::Table::new();
        for (key, value) in vars {
            let Some(field) = key.strip_prefix(ENV_PREFIX) else { continue };
            let field = field.to_ascii_lowercase();
            if field == "api_token" || field.is_empty() {
                continue;
            }
            let parsed = value
                .parse::<toml::Value>()
                .ok()
                .filter(|v| !v.is_table())
                .unwrap_or(toml::Value::String(value));
            let parsed = match (&field[..], parsed) {
                // path and text fields stay strings even when they look numeric
                ("provider" | "cache_dir" | "k" | "endpoint" | "model" | "token_env", v) => {
                    toml::Value::String(match v {
                        toml::Value::String(s) => s,
                        other => other.to_string(),
                    })
                }
                (_, v) => v,
            };
            table.insert(field, parsed);
        }
        table
            .try_into()
            .map_err(|e| Failure::usage(format!("invalid {ENV_PREFIX}* environment setting: {e}")))
    }

    pub fn provider_kind(&self, default: ProviderKind) -> Result<ProviderKind, Failure> {
        match &self.provider {
            Some(p) => p.parse().map_err(Failure::usage),
            None => Ok(default),
        }
    }

    pub fn k_list(&self) -> Result<Vec<usize>, Failure> {
        let raw = self
            .k
            .as_deref()
            .ok_or_else(|| Failure::usage("--k is required"))?;
        parse_list(raw)
    }

    pub fn ngram(&self) -> CharNgramConfig {
        let d = CharNgramConfig::default();
        CharNgramConfig::new(
            self.ngram_min.unwrap_or(d.min_n),
            self.ngram_max.unwrap_or(d.max_n),
            self.ngram_dim.unwrap_or(d.dim),
        )
    }

    pub fn remote(&self) -> Result<RemoteConfig, Failure> {
        let endpoint = self
            .endpoint
            .clone()
            .ok_or_else(|| Failure::usage("the remote provider needs an endpoint"))?;
        let model = self
            .model
            .clone()
            .ok_or_else(|| Failure::usage("the remote provider needs a model"))?;
        let mut c = RemoteConfig::new(endpoint, model);
        c.token_env = Some(self.token_env.clone().unwrap_or_else(|| DEFAULT_TOKEN_ENV.to_string()));
        if let Some(v) = self.timeout_secs {
            c.timeout_secs = v;
        }
        if let Some(v) = self.max_in_flight {
            c.max_in_flight = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        c.retry = RetryPolicy {
            max_attempts: self.max_attempts.unwrap_or(c.retry.max_attempts),
            base_delay_ms: self.base_delay_ms.unwrap_or(c.retry.base_delay_ms),
            ..c.retry
        };
        Ok(c)
    }
}

pub fn parse_list(raw: &str) -> Result<Vec<usize>, Failure> {
    let values = raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Failure::usage(format!("invalid k value {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() || values.contains(&0) {
        return Err(Failure::usage("k values must be positive"));
    }
    Ok(values)
}
