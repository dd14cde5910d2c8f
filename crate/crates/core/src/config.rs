//! Deployment settings: a TOML file, overridden by `AP_<SECTION>_<KEY>` environment
//! variables. Command-line flags are applied on top by the caller.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ChunkPolicy, IngestSettings, SplitLevel};
use crate::providers::{RemoteConfig, MOCK_DIMENSION};
use crate::query::QuerySettings;
use crate::synth::ConfidenceRules;

pub const ENV_PREFIX: &str = "AP_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub path: PathBuf,
    /// Open in recovery mode, truncating a damaged tail instead of refusing to start.
    pub recover: bool,
}

impl Default for StoreSection {
    fn default() -> Self {
        StoreSection {
            path: PathBuf::from("ap-data"),
            recover: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub dimension: usize,
}

impl Default for IndexSection {
    fn default() -> Self {
        IndexSection {
            dimension: MOCK_DIMENSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersSection {
    pub mode: ProviderMode,
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout_s: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub embed_model: String,
    pub compose_model: String,
    /// Replaces the built-in composition prompt when set.
    pub prompt_template: Option<String>,
}

impl Default for ProvidersSection {
    fn default() -> Self {
        let remote = RemoteConfig::new("http://127.0.0.1:8081", MOCK_DIMENSION);
        ProvidersSection {
            mode: ProviderMode::Mock,
            base_url: remote.base_url,
            api_key: None,
            timeout_s: remote.timeout.as_secs(),
            max_retries: remote.max_retries,
            max_in_flight: remote.max_in_flight,
            embed_model: remote.embed_model,
            compose_model: remote.compose_model,
            prompt_template: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySection {
    pub tau_refuse: f64,
    pub k: usize,
    /// Defaults to on with the mock embedder and off with remote embedders, which match
    /// synonyms a lexical check would reject.
    pub lexical_guard: Option<bool>,
}

impl Default for QuerySection {
    fn default() -> Self {
        let d = QuerySettings::default();
        QuerySection {
            tau_refuse: d.tau_refuse,
            k: d.k,
            lexical_guard: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub gamma: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            gamma: QuerySettings::default().gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    pub ttl_s: u64,
    pub max_entries: usize,
}

impl Default for CacheSection {
    fn default() -> Self {
        CacheSection {
            ttl_s: 300,
            max_entries: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthSection {
    pub enabled: bool,
    pub keys_file: Option<PathBuf>,
    /// When auth is enabled, also require a reader key for queries, facts and data.
    pub require_key_for_reads: bool,
    pub rate_per_s: f64,
    pub burst: f64,
}

impl Default for AuthSection {
    fn default() -> Self {
        AuthSection {
            enabled: false,
            keys_file: None,
            require_key_for_reads: false,
            rate_per_s: 10.0,
            burst: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub max_words: usize,
    pub split_level: SplitLevel,
    pub duplicate_threshold: f64,
    /// Optional controlled relation vocabulary.
    pub relations: Vec<String>,
}

impl Default for IngestSection {
    fn default() -> Self {
        let d = IngestSettings::default();
        IngestSection {
            max_words: d.policy.max_words,
            split_level: d.policy.split_level,
            duplicate_threshold: d.duplicate_threshold,
            relations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub medium_min_n: usize,
    pub medium_min_agreement: f64,
    pub high_min_n: usize,
    pub high_min_agreement: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let r = ConfidenceRules::default();
        SynthSection {
            medium_min_n: r.medium_min_n,
            medium_min_agreement: r.medium_min_agreement,
            high_min_n: r.high_min_n,
            high_min_agreement: r.high_min_agreement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub addr: String,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection {
            addr: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub store: StoreSection,
    pub index: IndexSection,
    pub providers: ProvidersSection,
    pub query: QuerySection,
    pub verify: VerifySection,
    pub cache: CacheSection,
    pub auth: AuthSection,
    pub ingest: IngestSection,
    pub synth: SynthSection,
    pub server: ServerSection,
}

impl Settings {
    /// Reads `path` (when given) and applies `AP_*` variables from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Settings, ConfigError> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Settings::from_sources(&text, std::env::vars())
    }

    pub fn from_sources(
        toml_text: &str,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Settings, ConfigError> {
        let mut root: toml::Table = toml_text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        let overrides: BTreeMap<String, String> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        let defaults = toml::Table::try_from(Settings::default())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (name, value) in overrides {
            let Some((section, key)) = env_key(&name) else {
                continue;
            };
            if !defaults.contains_key(&section) {
                tracing::debug!(variable = %name, "ignoring environment variable outside the known sections");
                continue;
            }
            let wants_float = matches!(
                defaults.get(&section).and_then(|t| t.get(&key)),
                Some(toml::Value::Float(_))
            );
            let table = root
                .entry(section.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| ConfigError::Invalid(format!("{section} is not a table")))?;
            table.insert(key, scalar(&value, wants_float));
        }
        let settings: Settings = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        settings.check()?;
        Ok(settings)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.index.dimension == 0 {
            return bad("index.dimension must be positive".into());
        }
        if self.providers.mode == ProviderMode::Mock && self.index.dimension != MOCK_DIMENSION {
            return bad(format!(
                "the mock embedder has dimension {MOCK_DIMENSION}, index.dimension is {}",
                self.index.dimension
            ));
        }
        if !(0.0..=1.0).contains(&self.query.tau_refuse) {
            return bad("query.tau_refuse must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.verify.gamma) {
            return bad("verify.gamma must lie in [0, 1]".into());
        }
        if self.query.k == 0 {
            return bad("query.k must be positive".into());
        }
        if !(self.auth.rate_per_s > 0.0 && self.auth.burst >= 1.0) {
            return bad("auth.rate_per_s must be positive and auth.burst at least 1".into());
        }
        self.chunk_policy().check().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn chunk_policy(&self) -> ChunkPolicy {
        ChunkPolicy {
            max_words: self.ingest.max_words,
            split_level: self.ingest.split_level,
        }
    }

    pub fn ingest_settings(&self) -> IngestSettings {
        IngestSettings {
            policy: self.chunk_policy(),
            duplicate_threshold: self.ingest.duplicate_threshold,
            relation_vocabulary: (!self.ingest.relations.is_empty()).then(|| {
                self.ingest
                    .relations
                    .iter()
                    .map(|r| crate::graph::normalize_relation(r))
                    .collect()
            }),
        }
    }

    pub fn query_settings(&self) -> QuerySettings {
        QuerySettings {
            tau_refuse: self.query.tau_refuse,
            gamma: self.verify.gamma,
            k: self.query.k,
            lexical_guard: self
                .query
                .lexical_guard
                .unwrap_or(self.providers.mode == ProviderMode::Mock),
        }
    }

    pub fn confidence_rules(&self) -> ConfidenceRules {
        ConfidenceRules {
            medium_min_n: self.synth.medium_min_n,
            medium_min_agreement: self.synth.medium_min_agreement,
            high_min_n: self.synth.high_min_n,
            high_min_agreement: self.synth.high_min_agreement,
        }
    }

    pub fn remote_config(&self) -> RemoteConfig {
        let mut c = RemoteConfig::new(&self.providers.base_url, self.index.dimension);
        c.api_key = self.providers.api_key.clone();
        c.timeout = std::time::Duration::from_secs(self.providers.timeout_s);
        c.max_retries = self.providers.max_retries;
        c.max_in_flight = self.providers.max_in_flight;
        c.embed_model = self.providers.embed_model.clone();
        c.compose_model = self.providers.compose_model.clone();
        if let Some(t) = &self.providers.prompt_template {
            c.prompt_template = t.clone();
        }
        c
    }
}

/// `AP_QUERY_TAU_REFUSE` → (`query`, `tau_refuse`).
fn env_key(name: &str) -> Option<(String, String)> {
    let rest = name.strip_prefix(ENV_PREFIX)?.to_lowercase();
    let (section, key) = rest.split_once('_')?;
    (!section.is_empty() && !key.is_empty()).then(|| (section.to_string(), key.to_string()))
}

/// Environment values are typed the way TOML would read them, falling back to a string.
/// Whole numbers are widened when the target field is a float.
fn scalar(raw: &str, wants_float: bool) -> toml::Value {
    if wants_float {
        if let Ok(f) = raw.parse::<f64>() {
            return toml::Value::Float(f);
        }
    }
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        if f.is_finite() {
            return toml::Value::Float(f);
        }
    }
    toml::Value::String(raw.to_string())
}
