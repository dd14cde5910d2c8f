//! Query-time verification: every sentence must cite chunks that exist (and are not
//! superseded), and must be similar enough to what it cites. Failing sentences are
//! stripped, never rewritten.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

use crate::index::{dot, VectorIndex};
use crate::providers::{Embedder, ProviderError};
use crate::store::Snapshot;
use crate::synth::SynthesisRecord;
use crate::text::{normalize_whitespace, split_sentences};

pub const CONFLICT_WARNING: &str = "Conflicting evidence present";
pub const ALL_FAILED_WARNING: &str = "all generated content failed verification";

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([^\[\]\s]+#v\d+#c\d+)\]").unwrap())
}

/// Chunk ids cited by `[chunk_id]` markers, in order of appearance (duplicates kept).
pub fn markers(text: &str) -> Vec<String> {
    marker_re()
        .captures_iter(text)
        .map(|c| c[1].to_string())
        .collect()
}

/// The sentence with its markers removed and whitespace collapsed.
pub fn strip_markers(text: &str) -> String {
    normalize_whitespace(&marker_re().replace_all(text, " "))
        .replace(" .", ".")
        .replace(" ?", "?")
        .replace(" !", "!")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    UnknownCitation,
    SupersededCitation,
    Unmarked,
    Ungrounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyFinding {
    pub kind: FindingKind,
    /// Index into `split_sentences(draft)`.
    pub sentence: usize,
    pub marker: Option<String>,
    pub message: String,
}

/// Dereferences every marker. Citations of superseded versions count as failures unless
/// `allow_superseded` (a query pinned to an old version).
pub fn verify_citations(
    draft: &str,
    snap: &Snapshot,
    allow_superseded: bool,
) -> Vec<VerifyFinding> {
    let mut out = Vec::new();
    for (i, sentence) in split_sentences(draft).into_iter().enumerate() {
        for m in markers(sentence) {
            match snap.chunk(&m) {
                None => out.push(VerifyFinding {
                    kind: FindingKind::UnknownCitation,
                    sentence: i,
                    message: format!("citation of unknown chunk {m}"),
                    marker: Some(m),
                }),
                Some(c) if !allow_superseded && snap.is_superseded(&c.version_ref()) => {
                    out.push(VerifyFinding {
                        kind: FindingKind::SupersededCitation,
                        sentence: i,
                        message: format!("citation of superseded chunk {m}"),
                        marker: Some(m),
                    })
                }
                Some(_) => {}
            }
        }
    }
    out
}

fn comparable(text: &str) -> String {
    normalize_whitespace(text)
        .trim_end_matches(['.', '!', '?'])
        .trim()
        .to_lowercase()
}

/// Similarity of a sentence to a chunk: 1.0 for a verbatim excerpt, otherwise the best
/// cosine against the whole chunk or any of its sentences.
fn support(
    sentence: &str,
    sentence_vec: &[f32],
    chunk_text: &str,
    chunk_vec: Option<&[f32]>,
    embedder: &dyn Embedder,
) -> Result<f64, ProviderError> {
    let plain = comparable(sentence);
    if !plain.is_empty() && comparable(chunk_text).contains(&plain) {
        return Ok(1.0);
    }
    let whole = match chunk_vec {
        Some(v) => dot(sentence_vec, v),
        None => dot(
            sentence_vec,
            &crate::index::normalize(&embedder.embed(chunk_text)?),
        ),
    };
    let parts = split_sentences(chunk_text);
    let vectors = embedder.embed_batch(&parts)?;
    let best = vectors
        .iter()
        .map(|v| dot(sentence_vec, &crate::index::normalize(v)))
        .fold(whole, f64::max);
    Ok(best)
}

/// Flags sentences without markers, and sentences whose best-supported cited chunk scores
/// below `gamma`. Markers naming unknown chunks are left to [`verify_citations`].
pub fn verify_grounding(
    draft: &str,
    snap: &Snapshot,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    gamma: f64,
) -> Result<Vec<VerifyFinding>, ProviderError> {
    let mut out = Vec::new();
    for (i, sentence) in split_sentences(draft).into_iter().enumerate() {
        let cited = markers(sentence);
        if cited.is_empty() {
            out.push(VerifyFinding {
                kind: FindingKind::Unmarked,
                sentence: i,
                marker: None,
                message: "sentence carries no citation".into(),
            });
            continue;
        }
        let plain = strip_markers(sentence);
        let sentence_vec = crate::index::normalize(&embedder.embed(&plain)?);
        let mut best: Option<(f64, String)> = None;
        for m in &cited {
            let Some(chunk) = snap.chunk(m) else { continue };
            let vec = index.get(m).map(|e| e.vector.as_slice());
            let score = support(&plain, &sentence_vec, &chunk.text, vec, embedder)?;
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, m.clone()));
            }
        }
        match best {
            Some((score, m)) if score < gamma => out.push(VerifyFinding {
                kind: FindingKind::Ungrounded,
                sentence: i,
                message: format!("ungrounded sentence (similarity {score:.3} to {m})"),
                marker: Some(m),
            }),
            _ => {}
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finalized {
    pub text: String,
    /// Distinct cited chunk ids in order of first appearance.
    pub cited: Vec<String>,
    pub removed: usize,
}

/// Drops every sentence named by a finding and collects the surviving markers.
pub fn finalize(draft: &str, findings: &[VerifyFinding]) -> Finalized {
    let flagged: BTreeSet<usize> = findings.iter().map(|f| f.sentence).collect();
    let sentences = split_sentences(draft);
    let kept: Vec<&str> = sentences
        .iter()
        .enumerate()
        .filter(|(i, _)| !flagged.contains(i))
        .map(|(_, s)| *s)
        .collect();
    let mut cited = Vec::new();
    for s in &kept {
        for m in markers(s) {
            if !cited.contains(&m) {
                cited.push(m);
            }
        }
    }
    Finalized {
        text: kept.join(" "),
        cited,
        removed: sentences.len() - kept.len(),
    }
}

/// Evidence warnings for the synthesis records behind an answer.
pub fn synthesis_warnings(records: &[&SynthesisRecord]) -> Vec<String> {
    let mut out = Vec::new();
    if records.iter().any(|r| r.contradiction_flag) {
        out.push(CONFLICT_WARNING.to_string());
    }
    for r in records
        .iter()
        .filter(|r| !r.contradiction_flag && r.agreement_ratio < 1.0)
    {
        let dissent = r.dissenting().max(1);
        let note = if dissent == 1 {
            format!(
                "Evidence is not unanimous: one study dissenting out of {}",
                r.n_studies
            )
        } else {
            format!(
                "Evidence is not unanimous: {dissent} studies dissenting out of {}",
                r.n_studies
            )
        };
        if !out.contains(&note) {
            out.push(note);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marker_extraction() {
        let t = "A [p#v1#c0]. B [10.1/x#v2#c3] [p#v1#c0]. C [1].";
        assert_eq!(markers(t), vec!["p#v1#c0", "10.1/x#v2#c3", "p#v1#c0"]);
        assert_eq!(strip_markers("Aspirin works [p#v1#c0]."), "Aspirin works.");
    }

    #[test]
    fn finalize_removes_flagged_sentences() {
        let draft = "One [a#v1#c0]. Two [b#v1#c0]. Three [a#v1#c0].";
        let f = VerifyFinding {
            kind: FindingKind::Ungrounded,
            sentence: 1,
            marker: None,
            message: String::new(),
        };
        let out = finalize(draft, &[f]);
        assert_eq!(out.text, "One [a#v1#c0]. Three [a#v1#c0].");
        assert_eq!(out.cited, vec!["a#v1#c0"]);
        assert_eq!(out.removed, 1);
        assert_eq!(finalize(&out.text, &[]).text, out.text);
    }

    #[test]
    fn empty_draft_has_nothing_to_check() {
        let snap = Snapshot::default();
        assert!(verify_citations("", &snap, false).is_empty());
        assert_eq!(finalize("", &[]).text, "");
    }
}
