//! Response bodies. Field names here are the public contract.

use std::collections::BTreeMap;

use apub_core::clock::Timestamp;
use apub_core::graph::{ClaimObject, Effect, Fact, FactsResult, GraphState, Polarity};
use apub_core::ingest::{is_doi, ValidationReport};
use apub_core::query::{Answer, DataPoints};
use apub_core::store::{
    Author, DatasetRecord, EventAction, ProvenanceRecord, PubStatus, Section, Snapshot,
    VersionEvent, VersionRef,
};
use apub_core::synth::{Confidence, SynthesisRecord};
use serde::Serialize;

fn doi_of(pub_id: &str) -> Option<String> {
    is_doi(pub_id).then(|| pub_id.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportingStudy {
    pub publication_id: String,
    pub version: u32,
    pub doi: Option<String>,
    pub chunk_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResponse {
    pub query_id: String,
    pub answer_summary: String,
    pub answer_detail: String,
    pub supporting_studies: Vec<SupportingStudy>,
    pub data_points: Option<DataPoints>,
    pub confidence_score: f64,
    pub confidence_label: Confidence,
    pub warnings: Vec<String>,
    pub derivation: String,
    pub refused: bool,
}

impl QueryResponse {
    /// `detail` is the answer at the requested zoom, `summary` the headline text.
    pub fn new(detail: &Answer, summary: &str) -> QueryResponse {
        let mut studies: Vec<SupportingStudy> = Vec::new();
        for c in &detail.citations {
            match studies
                .iter_mut()
                .find(|s| s.publication_id == c.pub_id && s.version == c.version)
            {
                Some(s) => {
                    if !s.chunk_ids.contains(&c.chunk_id) {
                        s.chunk_ids.push(c.chunk_id.clone());
                    }
                }
                None => studies.push(SupportingStudy {
                    publication_id: c.pub_id.clone(),
                    version: c.version,
                    doi: doi_of(&c.pub_id),
                    chunk_ids: vec![c.chunk_id.clone()],
                }),
            }
        }
        QueryResponse {
            query_id: detail.query_id.clone(),
            answer_summary: summary.to_string(),
            answer_detail: detail.text.clone(),
            supporting_studies: studies,
            data_points: detail.data_points.clone(),
            confidence_score: detail.confidence_score,
            confidence_label: detail.confidence,
            warnings: detail.warnings.clone(),
            derivation: detail.derivation.clone(),
            refused: detail.refused,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceView {
    pub publication_id: String,
    pub version: u32,
    pub doi: Option<String>,
    pub chunk_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisView {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub n_studies: usize,
    pub pooled_estimate: f64,
    pub pooled_se: f64,
    pub ci95: [f64; 2],
    pub agreement_ratio: f64,
    pub confidence_label: Confidence,
    pub confidence_score: f64,
    pub contradiction_flag: bool,
    pub computed_at: Timestamp,
    pub inputs: Vec<String>,
}

impl SynthesisView {
    pub fn new(r: &SynthesisRecord, graph: &GraphState) -> SynthesisView {
        let object = if r.group.object.starts_with("lit:") {
            r.group.object.clone()
        } else {
            graph.display_entity(&r.group.object)
        };
        SynthesisView {
            subject: graph.display_entity(&r.group.subject),
            relation: r.group.relation.clone(),
            object,
            n_studies: r.n_studies,
            pooled_estimate: r.pooled_estimate,
            pooled_se: r.pooled_se,
            ci95: r.ci95,
            agreement_ratio: r.agreement_ratio,
            confidence_label: r.confidence,
            confidence_score: r.confidence.score(),
            contradiction_flag: r.contradiction_flag,
            computed_at: r.computed_at,
            inputs: r.inputs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactView {
    pub claim_id: String,
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub effect: Option<Effect>,
    pub polarity: Polarity,
    pub source: SourceView,
    pub superseded: bool,
    pub asserted_at: Timestamp,
    pub synthesis: Option<SynthesisView>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactsResponse {
    pub facts: Vec<FactView>,
    pub synthesis: Vec<SynthesisView>,
    pub warnings: Vec<String>,
}

impl FactsResponse {
    pub fn new(result: &FactsResult, graph: &GraphState) -> FactsResponse {
        let view = |f: &Fact| {
            let c = &f.claim;
            FactView {
                claim_id: c.claim_id.clone(),
                subject: graph.display_entity(&c.subject),
                relation: c.relation.clone(),
                object: match &c.object {
                    ClaimObject::Entity(id) => graph.display_entity(id),
                    other => graph.display_object(other),
                },
                effect: c.effect.clone(),
                polarity: c.polarity,
                source: SourceView {
                    publication_id: c.source.pub_id.clone(),
                    version: c.source.version,
                    doi: doi_of(&c.source.pub_id),
                    chunk_ids: c.source.chunk_ids.clone(),
                },
                superseded: !graph.is_active(c),
                asserted_at: c.asserted_at,
                synthesis: f.synthesis.as_ref().map(|s| SynthesisView::new(s, graph)),
            }
        };
        let mut groups = BTreeMap::new();
        for f in &result.facts {
            if let Some(s) = &f.synthesis {
                groups.entry(s.group.clone()).or_insert(s);
            }
        }
        FactsResponse {
            facts: result.facts.iter().map(view).collect(),
            synthesis: groups
                .values()
                .map(|s| SynthesisView::new(s, graph))
                .collect(),
            warnings: result.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetResponse {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub superseded: bool,
}

impl DatasetResponse {
    pub fn new(d: &DatasetRecord, superseded: bool) -> DatasetResponse {
        DatasetResponse {
            name: d.name.clone(),
            columns: d.columns.iter().map(|c| c.name.clone()).collect(),
            rows: d.rows.clone(),
            superseded,
        }
    }
}

/// RFC 4180 rendering, preceded by a `# superseded` line when applicable.
pub fn dataset_csv(d: &DatasetRecord, superseded: bool) -> Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(d.columns.iter().map(|c| c.name.as_str()))?;
    for row in &d.rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    let body = String::from_utf8(bytes).expect("csv of UTF-8 cells is UTF-8");
    Ok(if superseded {
        format!("# superseded\r\n{body}")
    } else {
        body
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmitResponse {
    pub pub_id: Option<String>,
    pub version: Option<u32>,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChunkView {
    pub chunk_id: String,
    pub section: Section,
    pub ordinal: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub dataset_id: String,
    pub name: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventView {
    pub timestamp: Timestamp,
    pub actor: String,
    pub action: EventAction,
    pub details: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PublicationResponse {
    pub pub_id: String,
    pub version: u32,
    pub doi: Option<String>,
    pub title: String,
    pub authors: Vec<Author>,
    pub date: String,
    pub keywords: Vec<String>,
    pub venue: Option<String>,
    pub references: Vec<String>,
    pub language: String,
    pub status: PubStatus,
    pub superseded_by: Option<String>,
    pub versions: Vec<u32>,
    pub provenance: ProvenanceRecord,
    pub events: Vec<EventView>,
    pub chunks: Vec<ChunkView>,
    pub claims: usize,
    pub datasets: Vec<DatasetSummary>,
}

impl PublicationResponse {
    /// `None` when the version does not exist.
    pub fn new(
        snap: &Snapshot,
        r: &VersionRef,
        events: &[VersionEvent],
    ) -> Option<PublicationResponse> {
        let p = snap.publication(r)?;
        let subject = r.to_string();
        Some(PublicationResponse {
            pub_id: p.pub_id.clone(),
            version: p.version,
            doi: doi_of(&p.pub_id),
            title: p.title.clone(),
            authors: p.authors.clone(),
            date: p.date.to_string(),
            keywords: p.keywords.clone(),
            venue: p.venue.clone(),
            references: p.references.clone(),
            language: p.language.clone(),
            status: p.status,
            superseded_by: snap.superseded_by(r).map(|s| s.to_string()),
            versions: snap.versions(&p.pub_id),
            provenance: p.provenance.clone(),
            events: events
                .iter()
                .filter(|e| e.subject_id == subject && e.action != EventAction::Query)
                .map(|e| EventView {
                    timestamp: e.timestamp,
                    actor: e.actor.clone(),
                    action: e.action,
                    details: e.details.clone(),
                })
                .collect(),
            chunks: snap
                .chunks_for(r)
                .into_iter()
                .map(|c| ChunkView {
                    chunk_id: c.chunk_id.clone(),
                    section: c.section,
                    ordinal: c.ordinal,
                    text: c.text.clone(),
                })
                .collect(),
            claims: snap.graph().claims_for(r).len(),
            datasets: snap
                .datasets_for(r)
                .into_iter()
                .map(|d| DatasetSummary {
                    dataset_id: d.dataset_id.clone(),
                    name: d.name.clone(),
                    rows: d.rows.len(),
                })
                .collect(),
        })
    }
}
