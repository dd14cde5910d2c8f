//! Short-lived query cache. Entries expire after the TTL and the whole cache is dropped
//! whenever the engine generation moves, so no answer outlives a commit or supersede.

use std::collections::HashMap;
use std::sync::Mutex;

use apub_core::clock::Timestamp;
use apub_core::query::{Answer, Zoom};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub question: String,
    pub zoom: Zoom,
}

impl CacheKey {
    /// Case and whitespace differences map to the same key.
    pub fn new(question: &str, zoom: Zoom) -> CacheKey {
        CacheKey {
            question: question
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase(),
            zoom,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cached {
    pub answer: Answer,
    /// Headline rendering of the same question.
    pub summary: String,
}

#[derive(Debug)]
struct Entry {
    value: Cached,
    inserted_at: Timestamp,
}

#[derive(Debug)]
struct Inner {
    generation: u64,
    entries: HashMap<CacheKey, Entry>,
}

#[derive(Debug)]
pub struct QueryCache {
    ttl_s: u64,
    max_entries: usize,
    inner: Mutex<Inner>,
}

impl QueryCache {
    pub fn new(ttl_s: u64, max_entries: usize) -> QueryCache {
        QueryCache {
            ttl_s,
            max_entries,
            inner: Mutex::new(Inner {
                generation: 0,
                entries: HashMap::new(),
            }),
        }
    }

    fn fresh(&self, inserted_at: Timestamp, now: Timestamp) -> bool {
        let age = now.signed_duration_since(inserted_at).num_milliseconds();
        age >= 0 && (age as u64) < self.ttl_s.saturating_mul(1000)
    }

    fn sync(inner: &mut Inner, generation: u64) {
        if inner.generation != generation {
            inner.entries.clear();
            inner.generation = generation;
        }
    }

    pub fn get(&self, key: &CacheKey, generation: u64, now: Timestamp) -> Option<Cached> {
        let mut inner = self.inner.lock().unwrap();
        Self::sync(&mut inner, generation);
        match inner.entries.get(key) {
            Some(e) if self.fresh(e.inserted_at, now) => Some(e.value.clone()),
            Some(_) => {
                inner.entries.remove(key);
                None
            }
            None => None,
        }
    }

    /// Stores `value` computed against `generation`. A value computed before a newer
    /// generation was observed is dropped.
    pub fn put(&self, key: CacheKey, value: Cached, generation: u64, now: Timestamp) {
        if self.ttl_s == 0 || self.max_entries == 0 {
            return;
        }
        let mut inner = self.inner.lock().unwrap();
        if generation < inner.generation {
            return;
        }
        Self::sync(&mut inner, generation);
        if inner.entries.len() >= self.max_entries && !inner.entries.contains_key(&key) {
            let ttl_ms = self.ttl_s.saturating_mul(1000);
            inner.entries.retain(|_, e| {
                let age = now.signed_duration_since(e.inserted_at).num_milliseconds();
                age >= 0 && (age as u64) < ttl_ms
            });
            if inner.entries.len() >= self.max_entries {
                let oldest = inner
                    .entries
                    .iter()
                    .min_by_key(|(_, e)| e.inserted_at)
                    .map(|(k, _)| k.clone());
                if let Some(k) = oldest {
                    inner.entries.remove(&k);
                }
            }
        }
        inner.entries.insert(
            key,
            Entry {
                value,
                inserted_at: now,
            },
        );
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
