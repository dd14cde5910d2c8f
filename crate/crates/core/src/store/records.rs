//! Record types persisted by the store.

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::graph::ClaimTriple;

/// A (pub_id, version) pair. Renders as `pub_id@vN`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VersionRef {
    pub pub_id: String,
    pub version: u32,
}

impl VersionRef {
    pub fn new(pub_id: impl Into<String>, version: u32) -> Self {
        VersionRef {
            pub_id: pub_id.into(),
            version,
        }
    }
}

impl fmt::Display for VersionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@v{}", self.pub_id, self.version)
    }
}

impl FromStr for VersionRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (id, v) = s
            .rsplit_once("@v")
            .ok_or_else(|| format!("expected <pub_id>@v<version>, got {s:?}"))?;
        let version: u32 = v.parse().map_err(|_| format!("bad version in {s:?}"))?;
        if id.is_empty() || version == 0 {
            return Err(format!("expected <pub_id>@v<version>, got {s:?}"));
        }
        Ok(VersionRef::new(id, version))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PubStatus {
    Validated,
    Flagged,
    Superseded,
}

impl PubStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PubStatus::Validated => "validated",
            PubStatus::Flagged => "flagged",
            PubStatus::Superseded => "superseded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Author {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orcid: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionNote {
    pub timestamp: Timestamp,
    pub actor: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    /// Model behind any generated fields; empty when nothing was generated.
    pub generator_model: String,
    pub created_at: Timestamp,
    pub revision_notes: Vec<RevisionNote>,
    /// Optional human review score, 1 to 5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_score: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Publication {
    pub pub_id: String,
    pub version: u32,
    pub title: String,
    pub authors: Vec<Author>,
    pub date: NaiveDate,
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
    pub references: Vec<String>,
    pub status: PubStatus,
    pub language: String,
    pub provenance: ProvenanceRecord,
}

impl Publication {
    pub fn version_ref(&self) -> VersionRef {
        VersionRef::new(self.pub_id.clone(), self.version)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Abstract,
    Methods,
    Results,
    Discussion,
    Other,
}

impl Section {
    pub fn as_str(self) -> &'static str {
        match self {
            Section::Abstract => "abstract",
            Section::Methods => "methods",
            Section::Results => "results",
            Section::Discussion => "discussion",
            Section::Other => "other",
        }
    }

    /// Heading used when rendering a section back to markdown.
    pub fn heading(self) -> &'static str {
        match self {
            Section::Abstract => "Abstract",
            Section::Methods => "Methods",
            Section::Results => "Results",
            Section::Discussion => "Discussion",
            Section::Other => "Other",
        }
    }

    /// Case-insensitive match of a heading or label. Anything unrecognised is `Other`.
    pub fn from_label(label: &str) -> Section {
        match label.trim().to_lowercase().as_str() {
            "abstract" => Section::Abstract,
            "methods" => Section::Methods,
            "results" => Section::Results,
            "discussion" => Section::Discussion,
            _ => Section::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub pub_id: String,
    pub version: u32,
    pub section: Section,
    pub ordinal: u32,
    pub text: String,
    pub word_count: u32,
}

impl Chunk {
    pub fn id_for(pub_id: &str, version: u32, ordinal: u32) -> String {
        format!("{pub_id}#v{version}#c{ordinal}")
    }

    pub fn version_ref(&self) -> VersionRef {
        VersionRef::new(self.pub_id.clone(), self.version)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub dataset_id: String,
    pub pub_id: String,
    pub version: u32,
    pub name: String,
    pub columns: Vec<Column>,
    /// Cells kept as submitted text; numeric columns are checked to parse as finite numbers.
    pub rows: Vec<Vec<String>>,
}

impl DatasetRecord {
    pub fn version_ref(&self) -> VersionRef {
        VersionRef::new(self.pub_id.clone(), self.version)
    }

    pub fn check(&self) -> Result<(), String> {
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != self.columns.len() {
                return Err(format!(
                    "row {r} has {} cells, expected {}",
                    row.len(),
                    self.columns.len()
                ));
            }
            for (cell, col) in row.iter().zip(&self.columns) {
                if col.kind == ColumnKind::Numeric && parse_finite(cell).is_none() {
                    return Err(format!(
                        "row {r} column {:?}: {cell:?} is not a finite number",
                        col.name
                    ));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn parse_finite(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventAction {
    Commit,
    Supersede,
    Flag,
    Feedback,
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionEvent {
    pub timestamp: Timestamp,
    pub actor: String,
    pub action: EventAction,
    pub subject_id: String,
    pub details: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rating {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub query_id: String,
    pub rating: Rating,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag_reason: Option<String>,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone)]
pub enum LogEvent {
    Version(VersionEvent),
    Feedback(FeedbackEvent),
}

/// Status transition appended to the publications file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusChange {
    pub pub_id: String,
    pub version: u32,
    pub status: PubStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superseded_by: Option<VersionRef>,
    pub timestamp: Timestamp,
}

/// A publication version with everything committed alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicationBundle {
    pub publication: Publication,
    pub chunks: Vec<Chunk>,
    pub claims: Vec<ClaimTriple>,
    pub datasets: Vec<DatasetRecord>,
}
