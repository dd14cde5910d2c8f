//! Submission parsing for the two accepted formats.
//!
//! Markdown conventions: the first level-1 heading is the title. Lines between the title
//! and the first level-2 heading may carry `Key: value` metadata (`Authors`, `Date`,
//! `Venue`, `Keywords`, `References`, `ID`, `DOI`, `Language`); several pairs may share a
//! line separated by ` | `. Level-2 headings name sections. `Claims` holds claim lines,
//! `References` holds one reference per line, and `Synthesis` / `Provenance` are
//! generated on export and ignored here.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::store::{Author, Column, Section};

use super::claims::{is_claim_line, DeclaredClaim};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    ApJson,
    Markdown,
}

impl FromStr for Format {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "ap-json" | "json" => Ok(Format::ApJson),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(ParseError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::ApJson => "ap-json",
            Format::Markdown => "markdown",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("payload is not valid UTF-8")]
    InvalidUtf8,
    #[error("unknown format {0:?} (expected ap-json or markdown)")]
    UnknownFormat(String),
    #[error("missing title")]
    MissingTitle,
    #[error("empty body: no section has text")]
    EmptyBody,
    #[error("malformed ap-json: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSection {
    pub label: Section,
    pub heading: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetInput {
    pub dataset_id: Option<String>,
    pub name: String,
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedDocument {
    /// Caller-supplied identifier (`pub_id`, else `doi`), if any.
    pub pub_id: Option<String>,
    pub title: String,
    pub authors: Vec<Author>,
    /// As submitted; the schema gate checks it is an ISO-8601 calendar date.
    pub date: String,
    pub keywords: Vec<String>,
    pub venue: Option<String>,
    pub references: Vec<String>,
    pub language: String,
    pub sections: Vec<ParsedSection>,
    pub claims_declared: Vec<DeclaredClaim>,
    pub datasets: Vec<DatasetInput>,
    pub review_score: Option<i64>,
    pub generator_model: String,
    /// Entity name to extra aliases, registered before claims are resolved.
    pub aliases: BTreeMap<String, Vec<String>>,
}

pub fn parse_submission(payload: &[u8], format: Format) -> Result<ParsedDocument, ParseError> {
    let text = std::str::from_utf8(payload).map_err(|_| ParseError::InvalidUtf8)?;
    let doc = match format {
        Format::ApJson => parse_ap_json(text)?,
        Format::Markdown => parse_markdown(text),
    };
    if doc.title.trim().is_empty() {
        return Err(ParseError::MissingTitle);
    }
    if doc.sections.iter().all(|s| s.text.trim().is_empty()) {
        return Err(ParseError::EmptyBody);
    }
    Ok(doc)
}

#[derive(Deserialize)]
struct ApJson {
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    authors: Vec<Author>,
    #[serde(default)]
    date: Option<String>,
    #[serde(default)]
    keywords: Vec<String>,
    #[serde(default)]
    venue: Option<String>,
    #[serde(default)]
    references: Vec<String>,
    #[serde(default)]
    sections: Vec<ApSection>,
    #[serde(default)]
    claims: Vec<String>,
    #[serde(default)]
    datasets: Vec<ApDataset>,
    #[serde(default)]
    review_score: Option<i64>,
    #[serde(default)]
    pub_id: Option<String>,
    #[serde(default)]
    doi: Option<String>,
    #[serde(default)]
    language: Option<String>,
    #[serde(default)]
    generator_model: Option<String>,
    #[serde(default)]
    aliases: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
struct ApSection {
    label: String,
    text: String,
}

#[derive(Deserialize)]
struct ApDataset {
    #[serde(default)]
    dataset_id: Option<String>,
    name: String,
    columns: Vec<Column>,
    #[serde(default)]
    rows: Vec<Vec<Value>>,
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

fn non_blank(s: Option<String>) -> Option<String> {
    s.map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
}

fn parse_ap_json(text: &str) -> Result<ParsedDocument, ParseError> {
    let raw: ApJson =
        serde_json::from_str(text).map_err(|e| ParseError::Malformed(e.to_string()))?;
    let sections = raw
        .sections
        .into_iter()
        .filter(|s| !s.text.trim().is_empty())
        .map(|s| ParsedSection {
            label: Section::from_label(&s.label),
            heading: s.label.trim().to_string(),
            text: s.text,
        })
        .collect();
    let claims_declared = raw
        .claims
        .into_iter()
        .enumerate()
        .map(|(i, text)| DeclaredClaim { line: i + 1, text })
        .collect();
    let datasets = raw
        .datasets
        .into_iter()
        .map(|d| DatasetInput {
            dataset_id: non_blank(d.dataset_id),
            name: d.name,
            columns: d.columns,
            rows: d
                .rows
                .iter()
                .map(|r| r.iter().map(cell_text).collect())
                .collect(),
        })
        .collect();
    Ok(ParsedDocument {
        pub_id: non_blank(raw.pub_id).or_else(|| non_blank(raw.doi)),
        title: raw.title.unwrap_or_default().trim().to_string(),
        authors: raw.authors,
        date: raw.date.unwrap_or_default().trim().to_string(),
        keywords: raw.keywords,
        venue: non_blank(raw.venue),
        references: raw
            .references
            .into_iter()
            .map(|r| r.trim().to_string())
            .filter(|r| !r.is_empty())
            .collect(),
        language: non_blank(raw.language).unwrap_or_else(|| "en".into()),
        sections,
        claims_declared,
        datasets,
        review_score: raw.review_score,
        generator_model: raw.generator_model.unwrap_or_default(),
        aliases: raw.aliases,
    })
}

fn doi_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"10\.\d{4,9}/[^\s\]\)>,;]+").unwrap())
}

fn link_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[[^\]]*\]\(([^)\s]+)\)|^\s*\[[^\]]+\]:\s*(\S+)").unwrap())
}

fn metadata_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^(authors?|date|venue|keywords|references|id|doi|language|review score|aliases):\s*(.*)$",
        )
        .unwrap()
    })
}

fn orcid_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(.*?)\s*\((\d{4}-\d{4}-\d{4}-\d{3}[\dX])\)$").unwrap())
}

/// A DOI when the text contains one, otherwise the trimmed text itself.
fn reference_from(text: &str) -> String {
    match doi_re().find(text) {
        Some(m) => m.as_str().trim_end_matches('.').to_string(),
        None => text.trim().to_string(),
    }
}

fn split_list(value: &str) -> Vec<String> {
    let sep = if value.contains(';') { ';' } else { ',' };
    value
        .split(sep)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_authors(value: &str) -> Vec<Author> {
    split_list(value)
        .into_iter()
        .map(|a| match orcid_re().captures(&a) {
            Some(c) => Author {
                name: c[1].to_string(),
                orcid: Some(c[2].to_string()),
            },
            None => Author {
                name: a,
                orcid: None,
            },
        })
        .collect()
}

enum Block {
    Body(ParsedSection),
    Claims,
    References,
    Ignored,
}

fn block_for(heading: &str) -> Block {
    match heading.trim().to_lowercase().as_str() {
        "claims" => Block::Claims,
        "references" => Block::References,
        "synthesis" | "provenance" => Block::Ignored,
        _ => Block::Body(ParsedSection {
            label: Section::from_label(heading),
            heading: heading.trim().to_string(),
            text: String::new(),
        }),
    }
}

fn strip_list_marker(line: &str) -> &str {
    let t = line.trim();
    for marker in ["- ", "* ", "+ "] {
        if let Some(rest) = t.strip_prefix(marker) {
            return rest.trim_start();
        }
    }
    t
}

fn heading_text(line: &str, level: usize) -> Option<&str> {
    let hashes = &line[..line.len() - line.trim_start_matches('#').len()];
    if hashes.len() != level {
        return None;
    }
    let rest = &line[level..];
    if !rest.starts_with(' ') && !rest.is_empty() {
        return None;
    }
    Some(rest.trim().trim_end_matches('#').trim())
}

pub(crate) fn parse_markdown(text: &str) -> ParsedDocument {
    let mut doc = ParsedDocument {
        language: "en".into(),
        ..Default::default()
    };
    let mut title: Option<String> = None;
    let mut preamble = ParsedSection {
        label: Section::Other,
        heading: String::new(),
        text: String::new(),
    };
    let mut current: Option<Block> = None;
    let mut blocks: Vec<Block> = Vec::new();
    let mut in_fence = false;

    let push_text = |target: &mut ParsedSection, line: &str| {
        target.text.push_str(line);
        target.text.push('\n');
    };

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
        }
        if !in_fence {
            if title.is_none() {
                if let Some(t) = heading_text(line, 1) {
                    title = Some(t.to_string());
                    continue;
                }
            }
            if let Some(h) = heading_text(line, 2).or_else(|| heading_text(line, 1)) {
                if let Some(b) = current.take() {
                    blocks.push(b);
                }
                current = Some(block_for(h));
                continue;
            }
        }

        match current.as_mut() {
            None => {
                let trimmed = line.trim();
                if trimmed.starts_with('>') {
                    continue;
                }
                if metadata_re().is_match(trimmed) {
                    for part in trimmed.split(" | ") {
                        if let Some(c) = metadata_re().captures(part.trim()) {
                            apply_metadata(&mut doc, &c[1], c[2].trim());
                        }
                    }
                    continue;
                }
                if title.is_some() {
                    collect_links(&mut doc, line);
                    push_text(&mut preamble, line);
                }
            }
            Some(Block::Body(section)) => {
                collect_links(&mut doc, line);
                let plain = if !in_fence && line.starts_with('#') {
                    line.trim_start_matches('#').trim_start()
                } else {
                    line
                };
                push_text(section, plain);
            }
            Some(Block::Claims) => {
                let item = strip_list_marker(line);
                if is_claim_line(item) {
                    doc.claims_declared.push(DeclaredClaim {
                        line: line_no,
                        text: item.to_string(),
                    });
                }
            }
            Some(Block::References) => {
                let item = strip_list_marker(line);
                if !item.is_empty() {
                    let item = item.trim_start_matches(|c: char| {
                        c == '[' || c.is_ascii_digit() || c == ']' || c == '.'
                    });
                    let link = link_re()
                        .captures(item)
                        .and_then(|c| c.get(1).or(c.get(2)))
                        .map(|m| m.as_str());
                    let r = match link {
                        Some(url) if doi_re().find(item).is_none() => url.to_string(),
                        _ => reference_from(item),
                    };
                    if !r.is_empty() && !doc.references.contains(&r) {
                        doc.references.push(r);
                    }
                }
            }
            Some(Block::Ignored) => {}
        }
    }
    if let Some(b) = current.take() {
        blocks.push(b);
    }

    doc.title = title.unwrap_or_default();
    if !preamble.text.trim().is_empty() {
        doc.sections.push(preamble);
    }
    for b in blocks {
        if let Block::Body(s) = b {
            if !s.text.trim().is_empty() {
                doc.sections.push(ParsedSection {
                    text: s.text.trim().to_string(),
                    ..s
                });
            }
        }
    }
    for s in &mut doc.sections {
        s.text = s.text.trim().to_string();
    }
    doc
}

fn apply_metadata(doc: &mut ParsedDocument, key: &str, value: &str) {
    match key.to_lowercase().as_str() {
        "author" | "authors" => doc.authors.extend(parse_authors(value)),
        "date" => doc.date = value.to_string(),
        "venue" => doc.venue = Some(value.to_string()).filter(|v| !v.is_empty()),
        "keywords" => doc.keywords.extend(split_list(value)),
        "references" => {
            for r in value.split(';').map(str::trim).filter(|r| !r.is_empty()) {
                let r = reference_from(r);
                if !doc.references.contains(&r) {
                    doc.references.push(r);
                }
            }
        }
        "id" | "doi" => doc.pub_id = Some(value.to_string()).filter(|v| !v.is_empty()),
        "language" => doc.language = value.to_string(),
        "review score" => doc.review_score = value.parse().ok(),
        // `Aliases: Vitamin B12 = cobalamin, B12; aspirin = acetylsalicylic acid`
        "aliases" => {
            for entry in value.split(';') {
                if let Some((name, rest)) = entry.split_once('=') {
                    let list = doc.aliases.entry(name.trim().to_string()).or_default();
                    list.extend(
                        rest.split(',')
                            .map(str::trim)
                            .filter(|a| !a.is_empty())
                            .map(String::from),
                    );
                }
            }
        }
        _ => {}
    }
}

fn collect_links(doc: &mut ParsedDocument, line: &str) {
    for c in link_re().captures_iter(line) {
        let Some(url) = c.get(1).or(c.get(2)).map(|m| m.as_str()) else {
            continue;
        };
        if url.starts_with('#') {
            continue;
        }
        let r = if url.contains("doi.org/") {
            reference_from(url)
        } else {
            url.to_string()
        };
        if !doc.references.contains(&r) {
            doc.references.push(r);
        }
    }
}
