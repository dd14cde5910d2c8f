//! Ingestion gates. Only the schema gate rejects; every other gate warns.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::graph::{conflict_reason, ClaimTriple, GraphState};
use crate::index::{SearchFilter, VectorIndex};
use crate::store::{Chunk, Snapshot, VersionRef};

use super::parse::ParsedDocument;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Schema,
    Duplicate,
    Reference,
    Statistics,
    Contradiction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warn,
    Reject,
}

impl Gate {
    pub fn as_str(self) -> &'static str {
        match self {
            Gate::Schema => "schema",
            Gate::Duplicate => "duplicate",
            Gate::Reference => "reference",
            Gate::Statistics => "statistics",
            Gate::Contradiction => "contradiction",
        }
    }
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Info => "info",
            Severity::Warn => "warn",
            Severity::Reject => "reject",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub gate: Gate,
    pub severity: Severity,
    pub message: String,
    pub subject_ids: Vec<String>,
}

impl Finding {
    pub fn new(
        gate: Gate,
        severity: Severity,
        message: impl Into<String>,
        subject_ids: Vec<String>,
    ) -> Self {
        Finding {
            gate,
            severity,
            message: message.into(),
            subject_ids,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    AcceptedFlagged,
    Rejected,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accepted => "accepted",
            Verdict::AcceptedFlagged => "accepted_flagged",
            Verdict::Rejected => "rejected",
        }
    }
}

pub fn verdict_for(findings: &[Finding]) -> Verdict {
    match findings.iter().map(|f| f.severity).max() {
        Some(Severity::Reject) => Verdict::Rejected,
        Some(Severity::Warn) => Verdict::AcceptedFlagged,
        _ => Verdict::Accepted,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub verdict: Verdict,
}

impl ValidationReport {
    pub fn from_findings(findings: Vec<Finding>) -> Self {
        let verdict = verdict_for(&findings);
        ValidationReport { findings, verdict }
    }
}

pub fn parse_date(date: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d").ok()
}

/// Structural checks that reject: title, sections, date, review score.
pub fn check_schema(doc: &ParsedDocument) -> Vec<Finding> {
    let mut out = Vec::new();
    let reject = |m: String| Finding::new(Gate::Schema, Severity::Reject, m, vec![]);
    if doc.title.trim().is_empty() {
        out.push(reject("missing title".into()));
    }
    if doc.sections.iter().all(|s| s.text.trim().is_empty()) {
        out.push(reject("no sections with text".into()));
    }
    if parse_date(&doc.date).is_none() {
        out.push(reject(format!(
            "invalid date {:?} (expected YYYY-MM-DD)",
            doc.date
        )));
    }
    if let Some(score) = doc.review_score {
        if !(1..=5).contains(&score) {
            out.push(reject(format!("review_score {score} outside 1..=5")));
        }
    }
    out
}

pub fn is_doi(reference: &str) -> bool {
    reference.starts_with("10.") && reference.contains('/')
}

pub fn check_references(references: &[String], snap: &Snapshot) -> Vec<Finding> {
    references
        .iter()
        .filter(|r| {
            let known = snap.latest_version(r).is_some()
                || r.parse::<VersionRef>()
                    .is_ok_and(|v| snap.publication(&v).is_some());
            !known && !is_doi(r)
        })
        .map(|r| {
            Finding::new(
                Gate::Reference,
                Severity::Warn,
                format!("unresolvable reference: {r}"),
                vec![r.clone()],
            )
        })
        .collect()
}

/// Nearest indexed chunk of any stored publication version, superseded ones included.
pub fn check_duplicates(
    chunks: &[Chunk],
    vectors: &[Vec<f32>],
    index: &VectorIndex,
    threshold: f64,
) -> Vec<Finding> {
    let filter = SearchFilter {
        include_superseded: true,
        pub_ids: None,
    };
    let mut out = Vec::new();
    for (chunk, vector) in chunks.iter().zip(vectors) {
        let Ok(hits) = index.search(vector, 1, &filter) else {
            continue;
        };
        if let Some(hit) = hits
            .first()
            .filter(|h| h.score >= threshold && h.chunk_id != chunk.chunk_id)
        {
            out.push(Finding::new(
                Gate::Duplicate,
                Severity::Warn,
                format!(
                    "near-duplicate of {} (similarity {:.3})",
                    hit.chunk_id, hit.score
                ),
                vec![chunk.chunk_id.clone(), hit.chunk_id.clone()],
            ));
        }
    }
    out
}

pub fn describe_claim(graph: &GraphState, claim: &ClaimTriple) -> String {
    format!(
        "{} | {} | {}",
        graph.display_entity(&claim.subject),
        claim.relation,
        graph.display_object(&claim.object)
    )
}

/// Reported 95% intervals that disagree with `estimate ± 1.96·se` beyond tolerance.
pub fn check_statistics(claims: &[ClaimTriple], graph: &GraphState) -> Vec<Finding> {
    let mut out = Vec::new();
    for claim in claims {
        let Some(effect) = &claim.effect else {
            continue;
        };
        let (Some([lo, hi]), Some([exp_lo, exp_hi])) = (effect.ci95, effect.ci_mismatch()) else {
            continue;
        };
        out.push(Finding::new(
            Gate::Statistics,
            Severity::Warn,
            format!(
                "claim {}: reported ci95 [{lo}, {hi}] does not match estimate ± 1.96·se, expected [{exp_lo:.4}, {exp_hi:.4}]",
                describe_claim(graph, claim)
            ),
            vec![claim.claim_id.clone()],
        ));
    }
    out
}

/// Conflicts between each new claim and the active claims of its group, including the
/// other new claims.
pub fn check_contradictions(new_claims: &[ClaimTriple], graph: &GraphState) -> Vec<Finding> {
    let mut out = Vec::new();
    for (i, claim) in new_claims.iter().enumerate() {
        let existing = graph.group_claims(&claim.group(), false);
        let earlier = new_claims[..i]
            .iter()
            .filter(|c| c.group() == claim.group());
        for other in existing.into_iter().chain(earlier) {
            if other.claim_id == claim.claim_id {
                continue;
            }
            if let Some(reason) = conflict_reason(claim, other) {
                out.push(Finding::new(
                    Gate::Contradiction,
                    Severity::Warn,
                    format!(
                        "claim {} contradicts {} ({reason})",
                        describe_claim(graph, claim),
                        other.claim_id
                    ),
                    vec![claim.claim_id.clone(), other.claim_id.clone()],
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn doi_shape() {
        assert!(is_doi("10.1371/journal.pdig.0000501"));
        assert!(!is_doi("see my other paper"));
        assert!(!is_doi("10.1371"));
    }

    fn severity() -> impl Strategy<Value = Severity> {
        prop_oneof![
            Just(Severity::Info),
            Just(Severity::Warn),
            Just(Severity::Reject)
        ]
    }

    proptest! {
        #[test]
        fn verdict_matches_invariant(sevs in prop::collection::vec(severity(), 0..12)) {
            let findings: Vec<Finding> = sevs.iter().map(|s| Finding::new(Gate::Schema, *s, "x", vec![])).collect();
            let v = verdict_for(&findings);
            let any_reject = sevs.contains(&Severity::Reject);
            let any_warn = sevs.contains(&Severity::Warn);
            prop_assert_eq!(v == Verdict::Rejected, any_reject);
            prop_assert_eq!(v == Verdict::AcceptedFlagged, any_warn && !any_reject);
            prop_assert_eq!(v == Verdict::Accepted, !any_warn && !any_reject);
        }
    }
}
