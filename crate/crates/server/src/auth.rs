//! Static API keys with roles, and a per-caller token bucket.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::Deserialize;
use thiserror::Error;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Reader,
    Contributor,
    Admin,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyEntry {
    pub key: String,
    pub role: Role,
    /// Recorded as the actor on events; defaults to a key prefix.
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeysFile {
    #[serde(default)]
    keys: Vec<KeyEntry>,
}

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("reading keys file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("keys file: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caller {
    pub actor: String,
    pub role: Option<Role>,
}

impl Caller {
    pub fn anonymous() -> Caller {
        Caller {
            actor: "anonymous".into(),
            role: None,
        }
    }
}

/// What an endpoint needs from the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Contribute,
}

#[derive(Debug, Clone, Default)]
pub struct AuthPolicy {
    pub enabled: bool,
    pub require_key_for_reads: bool,
    keys: HashMap<String, KeyEntry>,
}

impl AuthPolicy {
    pub fn disabled() -> AuthPolicy {
        AuthPolicy::default()
    }

    pub fn new(
        enabled: bool,
        require_key_for_reads: bool,
        keys: Vec<KeyEntry>,
    ) -> Result<AuthPolicy, AuthError> {
        let mut map = HashMap::new();
        for k in keys {
            if k.key.trim().is_empty() {
                return Err(AuthError::Invalid("empty key".into()));
            }
            if map.insert(k.key.clone(), k).is_some() {
                return Err(AuthError::Invalid("duplicate key".into()));
            }
        }
        Ok(AuthPolicy {
            enabled,
            require_key_for_reads,
            keys: map,
        })
    }

    pub fn load(
        enabled: bool,
        require_key_for_reads: bool,
        keys_file: Option<&Path>,
    ) -> Result<AuthPolicy, AuthError> {
        let keys = match keys_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| AuthError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                parse_keys(&text)?
            }
            None if enabled => {
                return Err(AuthError::Invalid(
                    "auth is enabled but auth.keys_file is not set".into(),
                ))
            }
            None => Vec::new(),
        };
        AuthPolicy::new(enabled, require_key_for_reads, keys)
    }

    /// Resolves the presented key, then checks it against `access`.
    pub fn authorize(&self, key: Option<&str>, access: Access) -> Result<Caller, ApiError> {
        let entry = key.and_then(|k| self.keys.get(k));
        let caller = match entry {
            Some(e) => Caller {
                actor: e.name.clone().unwrap_or_else(|| {
                    format!("key:{}", e.key.chars().take(6).collect::<String>())
                }),
                role: Some(e.role),
            },
            None => Caller::anonymous(),
        };
        if !self.enabled {
            return Ok(caller);
        }
        let needs_key = match access {
            Access::Read => self.require_key_for_reads,
            Access::Contribute => true,
        };
        if !needs_key {
            return Ok(caller);
        }
        let Some(role) = caller.role else {
            return Err(ApiError::unauthorized(match key {
                Some(_) => "invalid API key",
                None => "missing API key",
            }));
        };
        if access == Access::Contribute && role < Role::Contributor {
            return Err(ApiError::new(
                axum::http::StatusCode::FORBIDDEN,
                "forbidden",
                "this key may not submit publications",
            ));
        }
        Ok(caller)
    }
}

pub fn parse_keys(text: &str) -> Result<Vec<KeyEntry>, AuthError> {
    let file: KeysFile = toml::from_str(text).map_err(|e| AuthError::Invalid(e.to_string()))?;
    Ok(file.keys)
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    last: Instant,
}

/// Token bucket per caller identity: `rate` tokens per second, capacity `burst`.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    burst: f64,
    buckets: Mutex<HashMap<String, Bucket>>,
}

/// Above this many tracked callers, full buckets are dropped.
const PRUNE_AT: usize = 10_000;

impl RateLimiter {
    pub fn new(rate: f64, burst: f64) -> RateLimiter {
        RateLimiter {
            rate,
            burst,
            buckets: Mutex::new(HashMap::new()),
        }
    }

    pub fn allow(&self, who: &str) -> bool {
        self.allow_at(who, Instant::now())
    }

    pub fn allow_at(&self, who: &str, now: Instant) -> bool {
        let mut buckets = self.buckets.lock().unwrap();
        if buckets.len() > PRUNE_AT {
            let (rate, burst) = (self.rate, self.burst);
            buckets.retain(|_, b| {
                b.tokens + now.saturating_duration_since(b.last).as_secs_f64() * rate < burst
            });
        }
        let b = buckets.entry(who.to_string()).or_insert(Bucket {
            tokens: self.burst,
            last: now,
        });
        let elapsed = now.saturating_duration_since(b.last).as_secs_f64();
        b.tokens = (b.tokens + elapsed * self.rate).min(self.burst);
        b.last = now;
        if b.tokens >= 1.0 {
            b.tokens -= 1.0;
            true
        } else {
            false
        }
    }
}
