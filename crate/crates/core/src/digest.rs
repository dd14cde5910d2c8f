//! Author-facing digest of reader activity since a point in time.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::clock::Timestamp;
use crate::engine::QueryLog;
use crate::store::{EventAction, FeedbackEvent, Rating, Snapshot, VersionEvent, VersionRef};

pub const TOP_THEMES: usize = 10;
/// Theme for queries that cited nothing.
pub const UNCITED_THEME: &str = "(no citation)";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theme {
    /// `pub_id@vN` of the most cited publication, or [`UNCITED_THEME`].
    pub publication: String,
    pub title: Option<String>,
    pub queries: usize,
    /// Up to three example questions, oldest first.
    pub examples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedQuery {
    pub query_id: String,
    pub question: Option<String>,
    pub rating: Rating,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Digest {
    pub since: Option<Timestamp>,
    pub queries: usize,
    pub refused: usize,
    /// `refused / queries`; zero when there were no queries.
    pub refusal_rate: f64,
    pub up_votes: usize,
    pub down_votes: usize,
    pub themes: Vec<Theme>,
    pub flagged: Vec<FlaggedQuery>,
}

/// The publication cited most often by one answer; ties go to the smallest id.
fn main_publication(log: &QueryLog) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for chunk in &log.cited_chunks {
        let r = chunk
            .rsplit_once("#c")
            .map_or(chunk.as_str(), |(head, _)| head);
        *counts.entry(r).or_default() += 1;
    }
    let (head, _) = counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)))?;
    let (pub_id, version) = head.rsplit_once("#v")?;
    Some(VersionRef::new(pub_id, version.parse().ok()?).to_string())
}

pub fn feedback_digest(
    events: &[VersionEvent],
    feedback: &[FeedbackEvent],
    snap: &Snapshot,
    since: Option<Timestamp>,
) -> Digest {
    let after = |t: &Timestamp| since.is_none_or(|s| *t >= s);
    let mut questions: BTreeMap<&str, String> = BTreeMap::new();
    let mut themes: BTreeMap<String, Theme> = BTreeMap::new();
    let (mut queries, mut refused) = (0, 0);

    for e in events.iter().filter(|e| e.action == EventAction::Query) {
        let Ok(log) = serde_json::from_str::<QueryLog>(&e.details) else {
            tracing::warn!(query_id = %e.subject_id, "query event with unreadable details");
            continue;
        };
        questions.insert(&e.subject_id, log.question.clone());
        if !after(&e.timestamp) {
            continue;
        }
        queries += 1;
        refused += usize::from(log.refused);
        let key = main_publication(&log).unwrap_or_else(|| UNCITED_THEME.to_string());
        let theme = themes.entry(key.clone()).or_insert_with(|| Theme {
            title: key
                .parse::<VersionRef>()
                .ok()
                .and_then(|r| snap.publication(&r))
                .map(|p| p.title.clone()),
            publication: key,
            queries: 0,
            examples: Vec::new(),
        });
        theme.queries += 1;
        if theme.examples.len() < 3 && !theme.examples.contains(&log.question) {
            theme.examples.push(log.question);
        }
    }

    let mut themes: Vec<Theme> = themes.into_values().collect();
    themes.sort_by(|a, b| {
        b.queries
            .cmp(&a.queries)
            .then(a.publication.cmp(&b.publication))
    });
    themes.truncate(TOP_THEMES);

    let recent: Vec<&FeedbackEvent> = feedback.iter().filter(|f| after(&f.timestamp)).collect();
    let flagged = recent
        .iter()
        .filter_map(|f| {
            Some(FlaggedQuery {
                query_id: f.query_id.clone(),
                question: questions.get(f.query_id.as_str()).cloned(),
                rating: f.rating,
                reason: f.flag_reason.clone()?,
            })
        })
        .collect();

    Digest {
        since,
        queries,
        refused,
        refusal_rate: if queries == 0 {
            0.0
        } else {
            refused as f64 / queries as f64
        },
        up_votes: recent.iter().filter(|f| f.rating == Rating::Up).count(),
        down_votes: recent.iter().filter(|f| f.rating == Rating::Down).count(),
        themes,
        flagged,
    }
}

impl Digest {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Reader activity digest\n\n");
        match self.since {
            Some(s) => writeln!(out, "Since {}.\n", s.to_rfc3339()).unwrap(),
            None => out.push_str("All recorded activity.\n\n"),
        }
        writeln!(out, "- Queries: {}", self.queries).unwrap();
        writeln!(
            out,
            "- Refused: {} (refusal rate {:.1}%)",
            self.refused,
            self.refusal_rate * 100.0
        )
        .unwrap();
        writeln!(out, "- Up-votes: {}", self.up_votes).unwrap();
        writeln!(out, "- Down-votes: {}", self.down_votes).unwrap();
        writeln!(out, "- Flagged queries: {}", self.flagged.len()).unwrap();

        out.push_str("\n## Top question themes\n\n");
        if self.themes.is_empty() {
            out.push_str("No questions in this period.\n");
        }
        for t in &self.themes {
            let label = match &t.title {
                Some(title) => format!("{} ({})", title, t.publication),
                None => t.publication.clone(),
            };
            writeln!(out, "- {label}: {} queries", t.queries).unwrap();
            for q in &t.examples {
                writeln!(out, "  - {q}").unwrap();
            }
        }

        out.push_str("\n## Flagged queries\n\n");
        if self.flagged.is_empty() {
            out.push_str("None.\n");
        }
        for f in &self.flagged {
            let q = f.question.as_deref().unwrap_or("(question not found)");
            let rating = match f.rating {
                Rating::Up => "up",
                Rating::Down => "down",
            };
            writeln!(out, "- {} [{rating}] {q}: {}", f.query_id, f.reason).unwrap();
        }
        out
    }
}
