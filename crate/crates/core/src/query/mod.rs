//! Retrieval-augmented answering: retrieve, compose within a zoom budget, verify, and
//! attach confidence, warnings, a derivation note and (at the data zoom) raw numbers.

mod dataset;
mod derivation;
mod export;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ClaimObject, ClaimTriple, GraphState, GroupKey};
use crate::index::{dot, normalize, SearchFilter, VectorIndex};
use crate::providers::{ComposeRequest, Composer, Embedder, Passage, ProviderError};
use crate::store::{Chunk, Snapshot, VersionRef};
use crate::synth::{pool_effects, Confidence, SynthesisRecord};
use crate::text::{content_tokens, tokens};
use crate::verify::{self, synthesis_warnings, ALL_FAILED_WARNING};

pub use dataset::{dataset_stats, ColumnStats};
pub use derivation::build_derivation;
pub use export::render_manuscript;

pub const REFUSAL_TEXT: &str =
    "The evidence available to this publication is inconclusive for this question.";
pub const REFUSAL_DERIVATION: &str = "No retrieved passage met the evidence threshold.";
pub const BACKEND_WARNING: &str = "composition backend unavailable";

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum Zoom {
    Headline,
    #[default]
    Abstract,
    Detailed,
    Data,
}

impl Zoom {
    pub const ALL: [Zoom; 4] = [Zoom::Headline, Zoom::Abstract, Zoom::Detailed, Zoom::Data];

    pub fn word_budget(self) -> usize {
        match self {
            Zoom::Headline => 25,
            Zoom::Abstract => 150,
            Zoom::Detailed | Zoom::Data => 400,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Zoom::Headline => "headline",
            Zoom::Abstract => "abstract",
            Zoom::Detailed => "detailed",
            Zoom::Data => "data",
        }
    }
}

impl fmt::Display for Zoom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Zoom {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Zoom::ALL
            .into_iter()
            .find(|z| z.as_str() == s.trim().to_lowercase())
            .ok_or_else(|| {
                format!("unknown zoom {s:?} (expected headline, abstract, detailed or data)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Citation {
    pub pub_id: String,
    pub version: u32,
    pub chunk_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub claim_id: String,
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub estimate: f64,
    pub se: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci95: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    pub pub_id: String,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTable {
    pub dataset_id: String,
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DataPoints {
    pub effects: Vec<EffectRow>,
    pub datasets: Vec<DatasetTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub query_id: String,
    pub question: String,
    pub zoom: Zoom,
    pub text: String,
    pub citations: Vec<Citation>,
    pub confidence: Confidence,
    pub confidence_score: f64,
    pub warnings: Vec<String>,
    pub derivation: String,
    pub data_points: Option<DataPoints>,
    pub refused: bool,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("retrieval failed: {0}")]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuerySettings {
    pub tau_refuse: f64,
    pub gamma: f64,
    pub k: usize,
    /// Only passages sharing a content token with the question count as evidence. Bucket
    /// collisions in the hashing embedder otherwise let unrelated short chunks clear
    /// `tau_refuse`.
    pub lexical_guard: bool,
}

impl Default for QuerySettings {
    fn default() -> Self {
        QuerySettings {
            tau_refuse: 0.25,
            gamma: 0.55,
            k: 8,
            lexical_guard: true,
        }
    }
}

/// Everything an answer reads, taken from one snapshot.
pub struct QueryContext<'a> {
    pub snap: &'a Snapshot,
    pub index: &'a VectorIndex,
    pub embedder: &'a dyn Embedder,
    pub composer: &'a dyn Composer,
    pub settings: QuerySettings,
}

/// Top-k non-superseded chunks for the question, hydrated from the snapshot.
pub fn retrieve(
    ctx: &QueryContext<'_>,
    question: &str,
    k: usize,
) -> Result<Vec<(Chunk, f64)>, QueryError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(QueryError::EmptyQuestion);
    }
    if ctx.index.is_empty() {
        return Ok(Vec::new());
    }
    let q = ctx.embedder.embed(question)?;
    let hits = ctx
        .index
        .search(&q, k.max(1), &SearchFilter::default())
        .map_err(|e| QueryError::Provider(ProviderError::BadResponse(e.to_string())))?;
    Ok(hits
        .into_iter()
        .filter_map(|h| ctx.snap.chunk(&h.chunk_id).map(|c| (c.clone(), h.score)))
        .filter(|(c, _)| !ctx.snap.is_superseded(&c.version_ref()))
        .collect())
}

pub fn refusal(query_id: &str, question: &str, zoom: Zoom, warnings: Vec<String>) -> Answer {
    Answer {
        query_id: query_id.to_string(),
        question: question.to_string(),
        zoom,
        text: REFUSAL_TEXT.to_string(),
        citations: Vec::new(),
        confidence: Confidence::Low,
        confidence_score: Confidence::Low.score(),
        warnings,
        derivation: REFUSAL_DERIVATION.to_string(),
        data_points: None,
        refused: true,
    }
}

fn phrase_in(haystack: &str, phrase: &str) -> bool {
    let needle = tokens(phrase).join(" ");
    !needle.is_empty() && haystack.contains(&format!(" {needle} "))
}

fn padded_tokens(text: &str) -> String {
    format!(" {} ", tokens(text).join(" "))
}

fn names_for(graph: &GraphState, object: &ClaimObject) -> Vec<String> {
    match object {
        ClaimObject::Entity(id) => graph
            .entity(id)
            .map(|e| e.aliases.iter().cloned().collect())
            .unwrap_or_default(),
        ClaimObject::Literal { .. } => vec![graph.display_object(object)],
    }
}

/// Synthesis groups whose subject and object are both named in the question.
fn matching_groups<'s>(snap: &'s Snapshot, question: &str) -> Vec<&'s SynthesisRecord> {
    let q = padded_tokens(question);
    let graph = snap.graph();
    snap.synthesis()
        .values()
        .filter(|r| {
            let subject_named = graph
                .entity(&r.group.subject)
                .is_some_and(|e| e.aliases.iter().any(|a| phrase_in(&q, a)));
            if !subject_named {
                return false;
            }
            let Some(claim) = graph.group_claims(&r.group, true).into_iter().next() else {
                return false;
            };
            names_for(graph, &claim.object)
                .iter()
                .any(|n| phrase_in(&q, n))
        })
        .collect()
}

fn claims_citing<'s>(graph: &'s GraphState, cited: &BTreeSet<String>) -> Vec<&'s ClaimTriple> {
    graph
        .claims()
        .filter(|c| graph.is_active(c) && c.source.chunk_ids.iter().any(|id| cited.contains(id)))
        .collect()
}

fn effect_rows(graph: &GraphState, claims: &[&ClaimTriple]) -> Vec<EffectRow> {
    claims
        .iter()
        .filter_map(|c| {
            let e = c.effect.as_ref()?;
            Some(EffectRow {
                claim_id: c.claim_id.clone(),
                subject: graph.display_entity(&c.subject),
                relation: c.relation.clone(),
                object: graph.display_object(&c.object),
                estimate: e.estimate,
                se: e.se,
                ci95: e.ci95,
                unit: e.unit.clone(),
                pub_id: c.source.pub_id.clone(),
                version: c.source.version,
            })
        })
        .collect()
}

fn calculator_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(?:average|pooled|mean|overall)\s+effect\s+of\s+(.+?)\s+on\s+(.+?)\s*[?.!]*\s*$").unwrap()
    })
}

struct Calculation {
    text: String,
    group: GroupKey,
}

/// Aggregate questions ("pooled effect of X on Y") answered from the claim graph.
fn calculate(snap: &Snapshot, question: &str) -> Option<Calculation> {
    let caps = calculator_re().captures(question)?;
    let graph = snap.graph();
    let subject = graph.resolve_entity(&caps[1]).ok()?.to_string();
    let object = graph.resolve_entity(&caps[2]).ok()?.to_string();
    let mut by_relation: BTreeMap<String, Vec<&ClaimTriple>> = BTreeMap::new();
    for c in graph
        .claims()
        .filter(|c| graph.is_active(c) && c.effect.is_some())
    {
        if c.subject == subject && c.object == ClaimObject::Entity(object.clone()) {
            by_relation.entry(c.relation.clone()).or_default().push(c);
        }
    }
    let (relation, claims) = by_relation
        .into_iter()
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))?;
    let pooled = pool_effects(&claims).ok()?;
    let [lo, hi] = pooled.ci95();
    let mut cited: Vec<String> = Vec::new();
    for c in &claims {
        for id in &c.source.chunk_ids {
            if !cited.contains(id) {
                cited.push(id.clone());
            }
        }
    }
    let marks: Vec<String> = cited.iter().map(|id| format!("[{id}]")).collect();
    let studies = if claims.len() == 1 {
        "1 study".to_string()
    } else {
        format!("{} studies", claims.len())
    };
    let text = format!(
        "The pooled effect of {} on {} ({relation}) across {studies} is {:.4} (95% CI {:.4} to {:.4}) {}.",
        graph.display_entity(&subject),
        graph.display_entity(&object),
        pooled.estimate,
        lo,
        hi,
        marks.join(" ")
    );
    let group = claims[0].group();
    Some(Calculation { text, group })
}

/// Answers `question` at `zoom`. Retrieval failures are errors; composition failures and
/// weak evidence produce refusals.
pub fn answer(
    ctx: &QueryContext<'_>,
    question: &str,
    zoom: Zoom,
    query_id: &str,
) -> Result<Answer, QueryError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(QueryError::EmptyQuestion);
    }
    let snap = ctx.snap;

    if let Some(calc) = calculate(snap, question) {
        let q = normalize(&ctx.embedder.embed(question)?);
        let findings = verify::verify_citations(&calc.text, snap, false);
        let fin = verify::finalize(&calc.text, &findings);
        if !fin.cited.is_empty() {
            let citations = citations_for(ctx, &fin.cited, &BTreeMap::new(), &q);
            let record = snap.synthesis_for(&calc.group);
            return Ok(assemble(
                ctx,
                question,
                zoom,
                query_id,
                fin.text,
                citations,
                record,
                Vec::new(),
            ));
        }
    }

    let mut retrieved = retrieve(ctx, question, ctx.settings.k)?;
    if ctx.settings.lexical_guard {
        let terms: BTreeSet<String> = content_tokens(question).into_iter().collect();
        retrieved.retain(|(c, _)| content_tokens(&c.text).iter().any(|t| terms.contains(t)));
    }
    let top = retrieved.first().map_or(0.0, |(_, s)| *s);
    if retrieved.is_empty() || top < ctx.settings.tau_refuse {
        return Ok(refusal(query_id, question, zoom, Vec::new()));
    }
    let passages: Vec<Passage> = retrieved
        .iter()
        .map(|(c, s)| Passage {
            chunk_id: c.chunk_id.clone(),
            text: c.text.clone(),
            score: *s,
        })
        .collect();
    let draft = match ctx.composer.compose(&ComposeRequest {
        question,
        zoom,
        passages: &passages,
    }) {
        Ok(d) => d,
        Err(e) => {
            tracing::warn!(error = %e, "composition failed");
            return Ok(refusal(
                query_id,
                question,
                zoom,
                vec![BACKEND_WARNING.to_string()],
            ));
        }
    };

    let mut findings = verify::verify_citations(&draft, snap, false);
    findings.extend(verify::verify_grounding(
        &draft,
        snap,
        ctx.index,
        ctx.embedder,
        ctx.settings.gamma,
    )?);
    let fin = verify::finalize(&draft, &findings);
    if fin.cited.is_empty() || fin.text.is_empty() {
        return Ok(refusal(
            query_id,
            question,
            zoom,
            vec![ALL_FAILED_WARNING.to_string()],
        ));
    }
    let scores: BTreeMap<String, f64> = retrieved
        .iter()
        .map(|(c, s)| (c.chunk_id.clone(), *s))
        .collect();
    let q = normalize(&ctx.embedder.embed(question)?);
    let citations = citations_for(ctx, &fin.cited, &scores, &q);

    let matched = matching_groups(snap, question);
    let cited_pubs: BTreeSet<VersionRef> = citations
        .iter()
        .map(|c| VersionRef::new(c.pub_id.clone(), c.version))
        .collect();
    let best = matched.into_iter().max_by(|a, b| {
        let touches = |r: &SynthesisRecord| {
            snap.graph()
                .group_claims(&r.group, false)
                .iter()
                .any(|c| cited_pubs.contains(&c.source.version_ref()))
        };
        (touches(a), a.n_studies)
            .cmp(&(touches(b), b.n_studies))
            .then(b.group.cmp(&a.group))
    });
    Ok(assemble(
        ctx,
        question,
        zoom,
        query_id,
        fin.text,
        citations,
        best,
        Vec::new(),
    ))
}

fn citations_for(
    ctx: &QueryContext<'_>,
    cited: &[String],
    scores: &BTreeMap<String, f64>,
    question_vec: &[f32],
) -> Vec<Citation> {
    cited
        .iter()
        .filter_map(|id| {
            let chunk = ctx.snap.chunk(id)?;
            let score = scores
                .get(id)
                .copied()
                .or_else(|| ctx.index.get(id).map(|e| dot(question_vec, &e.vector)))
                .unwrap_or(0.0);
            Some(Citation {
                pub_id: chunk.pub_id.clone(),
                version: chunk.version,
                chunk_id: id.clone(),
                score,
            })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    ctx: &QueryContext<'_>,
    question: &str,
    zoom: Zoom,
    query_id: &str,
    text: String,
    citations: Vec<Citation>,
    matched: Option<&SynthesisRecord>,
    mut warnings: Vec<String>,
) -> Answer {
    let snap = ctx.snap;
    let graph = snap.graph();
    let cited_ids: BTreeSet<String> = citations.iter().map(|c| c.chunk_id.clone()).collect();
    let cited_claims = claims_citing(graph, &cited_ids);

    let mut groups: BTreeSet<GroupKey> = cited_claims.iter().map(|c| c.group()).collect();
    if let Some(r) = matched {
        groups.insert(r.group.clone());
    }
    let records: Vec<&SynthesisRecord> = groups
        .iter()
        .filter_map(|g| snap.synthesis_for(g))
        .collect();
    for w in synthesis_warnings(&records) {
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    }

    let confidence = match matched {
        Some(r) => r.confidence,
        None => {
            let pubs: BTreeSet<&str> = citations.iter().map(|c| c.pub_id.as_str()).collect();
            match pubs.len() {
                0 | 1 => Confidence::Low,
                2 => Confidence::Medium,
                _ => Confidence::High,
            }
        }
    };

    let data_points = (zoom == Zoom::Data).then(|| {
        let mut claims = cited_claims.clone();
        if let Some(r) = matched {
            for c in graph.group_claims(&r.group, false) {
                if !claims.iter().any(|x| x.claim_id == c.claim_id) {
                    claims.push(c);
                }
            }
        }
        claims.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
        let versions: BTreeSet<VersionRef> = citations
            .iter()
            .map(|c| VersionRef::new(c.pub_id.clone(), c.version))
            .collect();
        let datasets = versions
            .iter()
            .flat_map(|r| snap.datasets_for(r))
            .map(|d| DatasetTable {
                dataset_id: d.dataset_id.clone(),
                name: d.name.clone(),
                columns: d.columns.iter().map(|c| c.name.clone()).collect(),
                rows: d.rows.clone(),
            })
            .collect();
        DataPoints {
            effects: effect_rows(graph, &claims),
            datasets,
        }
    });

    Answer {
        query_id: query_id.to_string(),
        question: question.to_string(),
        zoom,
        derivation: build_derivation(&citations, snap),
        text,
        citations,
        confidence,
        confidence_score: confidence.score(),
        warnings,
        data_points,
        refused: false,
    }
}
