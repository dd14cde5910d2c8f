use serde::{Deserialize, Serialize};

use crate::store::Chunk;
use crate::text::{normalize_whitespace, split_sentences, word_count};

use super::parse::ParsedDocument;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitLevel {
    Paragraph,
    Sentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkPolicy {
    pub max_words: usize,
    pub split_level: SplitLevel,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        ChunkPolicy {
            max_words: 200,
            split_level: SplitLevel::Paragraph,
        }
    }
}

pub const MIN_CHUNK_WORDS: usize = 20;

impl ChunkPolicy {
    pub fn check(&self) -> Result<(), String> {
        if self.max_words < MIN_CHUNK_WORDS {
            return Err(format!(
                "chunk max_words must be at least {MIN_CHUNK_WORDS}"
            ));
        }
        Ok(())
    }
}

/// Paragraphs are separated by blank lines; whitespace inside a paragraph is collapsed.
fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.trim().is_empty() {
                out.push(normalize_whitespace(&current));
            }
            current.clear();
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.trim().is_empty() {
        out.push(normalize_whitespace(&current));
    }
    out
}

/// Greedy sentence packing. A sentence longer than `max_words` becomes its own piece.
fn pack_sentences(paragraph: &str, max_words: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut words = 0;
    for sentence in split_sentences(paragraph) {
        let n = word_count(sentence);
        if !current.is_empty() && words + n > max_words {
            out.push(current.join(" "));
            current.clear();
            words = 0;
        }
        current.push(sentence);
        words += n;
    }
    if !current.is_empty() {
        out.push(current.join(" "));
    }
    out
}

/// Splits every section into chunks with ordinals in document order.
pub fn chunk_document(
    doc: &ParsedDocument,
    policy: &ChunkPolicy,
    pub_id: &str,
    version: u32,
) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    for section in &doc.sections {
        for paragraph in paragraphs(&section.text) {
            let pieces = match policy.split_level {
                SplitLevel::Sentence => split_sentences(&paragraph)
                    .into_iter()
                    .map(str::to_string)
                    .collect(),
                SplitLevel::Paragraph if word_count(&paragraph) <= policy.max_words => {
                    vec![paragraph]
                }
                SplitLevel::Paragraph => pack_sentences(&paragraph, policy.max_words),
            };
            for text in pieces {
                let ordinal = chunks.len() as u32;
                chunks.push(Chunk {
                    chunk_id: Chunk::id_for(pub_id, version, ordinal),
                    pub_id: pub_id.to_string(),
                    version,
                    section: section.label,
                    ordinal,
                    word_count: word_count(&text) as u32,
                    text,
                });
            }
        }
    }
    chunks
}
