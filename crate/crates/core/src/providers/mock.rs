use crate::query::Zoom;
use crate::text::{content_tokens, split_sentences, word_count};
use std::collections::BTreeSet;

use super::{ComposeRequest, Composer, Embedder, ProviderError};

pub const MOCK_DIMENSION: usize = 256;

/// Feature-hashing bag of words: each content token adds ±1 to one of `dimension`
/// buckets, chosen by its 64-bit FNV-1a hash. The result is L2-normalized; text without
/// content tokens embeds to the zero vector.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dimension: usize,
}

impl MockEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        MockEmbedder { dimension }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f64; self.dimension];
        for token in content_tokens(text) {
            let h = fnv1a(token.as_bytes());
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter().map(|x| (x / norm) as f32).collect()
        } else {
            vec![0.0; self.dimension]
        }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder::new(MOCK_DIMENSION)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Embedder for MockEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn model_id(&self) -> &str {
        "mock-hash-embedder"
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Extractive composer: picks whole sentences from the passages, ranked by passage score
/// times the Jaccard overlap of content tokens with the question, within the zoom budget.
#[derive(Debug, Clone, Default)]
pub struct MockComposer;

struct Candidate<'a> {
    text: &'a str,
    chunk_id: &'a str,
    score: f64,
    rank: usize,
    position: usize,
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Appends ` [chunk_id]` before the sentence's terminal punctuation (adding a period
/// when there is none).
pub(crate) fn with_marker(sentence: &str, chunk_id: &str) -> String {
    let trimmed = sentence.trim_end();
    let body = trimmed.trim_end_matches(['.', '!', '?']);
    let punct = &trimmed[body.len()..];
    let punct = if punct.is_empty() { "." } else { punct };
    format!("{} [{chunk_id}]{punct}", body.trim_end())
}

fn truncate_words(text: &str, max: usize) -> String {
    text.split_whitespace()
        .take(max)
        .collect::<Vec<_>>()
        .join(" ")
}

impl Composer for MockComposer {
    fn model_id(&self) -> &str {
        "mock-extractive"
    }

    fn compose(&self, request: &ComposeRequest<'_>) -> Result<String, ProviderError> {
        let Some(top) = request.passages.first() else {
            return Ok(String::new());
        };
        let question: BTreeSet<String> = content_tokens(request.question).into_iter().collect();
        let mut candidates = Vec::new();
        for (rank, p) in request.passages.iter().enumerate() {
            for (position, s) in split_sentences(&p.text).into_iter().enumerate() {
                let tokens: BTreeSet<String> = content_tokens(s).into_iter().collect();
                let score = p.score.max(0.0) * jaccard(&question, &tokens);
                candidates.push(Candidate {
                    text: s,
                    chunk_id: &p.chunk_id,
                    score,
                    rank,
                    position,
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.rank.cmp(&b.rank))
                .then(a.position.cmp(&b.position))
        });

        let budget = request.zoom.word_budget();
        let max_sentences = if request.zoom == Zoom::Headline {
            1
        } else {
            usize::MAX
        };
        let mut chosen: Vec<(&str, &str)> = Vec::new();
        let mut used = 0usize;
        for c in candidates.iter().filter(|c| c.score > 0.0) {
            if chosen.len() >= max_sentences {
                break;
            }
            let words = word_count(c.text);
            if used + words <= budget {
                chosen.push((c.text, c.chunk_id));
                used += words;
            }
        }

        if chosen.is_empty() {
            let first = split_sentences(&top.text)
                .into_iter()
                .next()
                .unwrap_or(&top.text);
            let text = if word_count(first) <= budget {
                first.to_string()
            } else {
                truncate_words(first, budget)
            };
            return Ok(with_marker(&text, &top.chunk_id));
        }
        Ok(chosen
            .iter()
            .map(|(s, id)| with_marker(s, id))
            .collect::<Vec<_>>()
            .join(" "))
    }
}
