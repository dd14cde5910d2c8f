//! Submission pipeline: parse, chunk, embed, extract claims, run the gates, and build the
//! records a commit needs. Nothing here writes; the engine commits the prepared result.

mod chunk;
mod claims;
mod parse;
mod validate;

use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

use crate::clock::Timestamp;
use crate::graph::{parse_literal, ClaimObject, ClaimSource, ClaimTriple, Entity, GraphState};
use crate::index::VectorIndex;
use crate::providers::{Composer, Embedder, ProviderError};
use crate::store::{
    Chunk, DatasetRecord, ProvenanceRecord, PubStatus, Publication, PublicationBundle,
    RevisionNote, Section, Snapshot,
};
use crate::text::{content_tokens, digest_hex};

pub use chunk::{chunk_document, ChunkPolicy, SplitLevel, MIN_CHUNK_WORDS};
pub use claims::{
    format_claim_line, is_claim_line, parse_claim_line, ClaimSpec, DeclaredClaim, CLAIM_PREFIX,
};
pub use parse::{
    parse_submission, DatasetInput, Format, ParseError, ParsedDocument, ParsedSection,
};
pub use validate::{
    check_contradictions, check_duplicates, check_references, check_schema, check_statistics,
    describe_claim, is_doi, parse_date, verdict_for, Finding, Gate, Severity, ValidationReport,
    Verdict,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("embedding failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("invalid chunk policy: {0}")]
    Policy(String),
}

#[derive(Debug, Clone)]
pub struct IngestSettings {
    pub policy: ChunkPolicy,
    pub duplicate_threshold: f64,
    /// Controlled relation vocabulary; relations outside it draw a schema warning.
    pub relation_vocabulary: Option<BTreeSet<String>>,
}

impl Default for IngestSettings {
    fn default() -> Self {
        IngestSettings {
            policy: ChunkPolicy::default(),
            duplicate_threshold: 0.95,
            relation_vocabulary: None,
        }
    }
}

/// Everything needed to commit one submission. `bundle` is `None` when rejected.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub report: ValidationReport,
    pub bundle: Option<PublicationBundle>,
    pub entities: Vec<Entity>,
    /// One embedding per chunk, in chunk order.
    pub vectors: Vec<Vec<f32>>,
}

impl Prepared {
    fn rejected(findings: Vec<Finding>) -> Self {
        Prepared {
            report: ValidationReport::from_findings(findings),
            bundle: None,
            entities: vec![],
            vectors: vec![],
        }
    }
}

/// Identifier for submissions without one: `ap:<12 hex of sha256(title, date)>`.
pub fn generated_pub_id(title: &str, date: &str) -> String {
    format!("ap:{}", digest_hex(&[title.trim(), date.trim()], 12))
}

/// Turns a parse failure into the rejection report a submission receives.
pub fn parse_failure_report(err: &ParseError) -> Option<ValidationReport> {
    match err {
        ParseError::MissingTitle | ParseError::EmptyBody => {
            Some(ValidationReport::from_findings(vec![Finding::new(
                Gate::Schema,
                Severity::Reject,
                err.to_string(),
                vec![],
            )]))
        }
        _ => None,
    }
}

/// Picks the chunk whose content tokens overlap most with the claim's subject and object
/// names; ties go to the lowest ordinal. Without overlap: first results chunk, else the
/// first chunk.
fn attribute(spec: &ClaimSpec, chunks: &[Chunk]) -> Option<String> {
    let wanted: BTreeSet<String> = content_tokens(&spec.subject)
        .into_iter()
        .chain(content_tokens(&spec.object))
        .collect();
    let mut best: Option<(usize, &Chunk)> = None;
    for c in chunks {
        let have: HashSet<String> = content_tokens(&c.text).into_iter().collect();
        let score = wanted.iter().filter(|t| have.contains(*t)).count();
        if score > 0 && best.is_none_or(|(s, _)| score > s) {
            best = Some((score, c));
        }
    }
    best.map(|(_, c)| c)
        .or_else(|| chunks.iter().find(|c| c.section == Section::Results))
        .or_else(|| chunks.first())
        .map(|c| c.chunk_id.clone())
}

struct ClaimBuild {
    claims: Vec<ClaimTriple>,
    entities: Vec<Entity>,
    schema: Vec<Finding>,
    statistics: Vec<Finding>,
    generated: bool,
}

fn build_claims(
    doc: &ParsedDocument,
    chunks: &[Chunk],
    graph: &mut GraphState,
    composer: &dyn Composer,
    settings: &IngestSettings,
    pub_id: &str,
    version: u32,
    now: Timestamp,
) -> ClaimBuild {
    let mut out = ClaimBuild {
        claims: vec![],
        entities: vec![],
        schema: vec![],
        statistics: vec![],
        generated: false,
    };
    for (name, aliases) in &doc.aliases {
        let id = match graph.resolve_or_create(name, true) {
            Ok((id, created)) => {
                out.entities.extend(created);
                id
            }
            Err(e) => {
                out.schema.push(Finding::new(
                    Gate::Schema,
                    Severity::Warn,
                    format!("alias entity {name:?}: {e}"),
                    vec![],
                ));
                continue;
            }
        };
        for alias in aliases {
            match graph.add_alias(&id, alias) {
                Ok(Some(updated)) => out.entities.push(updated),
                Ok(None) => {}
                Err(e) => out.schema.push(Finding::new(
                    Gate::Schema,
                    Severity::Warn,
                    format!("alias {alias:?} for {name:?}: {e}"),
                    vec![id.clone()],
                )),
            }
        }
    }
    let mut specs: Vec<ClaimSpec> = Vec::new();
    for declared in &doc.claims_declared {
        match parse_claim_line(&declared.text, false) {
            Ok(spec) => specs.push(spec),
            Err(e) => out.schema.push(Finding::new(
                Gate::Schema,
                Severity::Warn,
                format!(
                    "claim line {}: {e}: {}",
                    declared.line,
                    declared.text.trim()
                ),
                vec![],
            )),
        }
    }
    let declared_count = specs.len();
    let body: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    match composer.extract_claims(&body.join("\n\n")) {
        Ok(lines) => {
            for line in lines {
                match parse_claim_line(&line, true) {
                    Ok(spec) => specs.push(spec),
                    Err(e) => out.schema.push(Finding::new(
                        Gate::Schema,
                        Severity::Warn,
                        format!("generated claim line: {e}: {}", line.trim()),
                        vec![],
                    )),
                }
            }
        }
        Err(e) => out.schema.push(Finding::new(
            Gate::Schema,
            Severity::Info,
            format!("claim extraction skipped: {e}"),
            vec![],
        )),
    }
    out.generated = specs.len() > declared_count;

    let mut seen = HashSet::new();
    for spec in specs {
        let Some(chunk_id) = attribute(&spec, chunks) else {
            continue;
        };
        let mut resolve = |name: &str, out: &mut ClaimBuild| -> Option<String> {
            match graph.resolve_or_create(name, true) {
                Ok((id, created)) => {
                    out.entities.extend(created);
                    Some(id)
                }
                Err(e) => {
                    out.schema.push(Finding::new(
                        Gate::Schema,
                        Severity::Warn,
                        format!("claim entity {name:?}: {e}"),
                        vec![],
                    ));
                    None
                }
            }
        };
        let Some(subject) = resolve(&spec.subject, &mut out) else {
            continue;
        };
        let object = match parse_literal(&spec.object) {
            Some((value, unit)) => ClaimObject::Literal { value, unit },
            None => match resolve(&spec.object, &mut out) {
                Some(id) => ClaimObject::Entity(id),
                None => continue,
            },
        };
        let relation = crate::graph::normalize_relation(&spec.relation);
        if let Some(vocab) = &settings.relation_vocabulary {
            if !vocab.contains(&relation) {
                out.schema.push(Finding::new(
                    Gate::Schema,
                    Severity::Warn,
                    format!("relation {relation:?} is not in the controlled vocabulary"),
                    vec![],
                ));
            }
        }
        let mut claim = ClaimTriple {
            claim_id: String::new(),
            subject,
            relation,
            object,
            effect: spec.effect,
            polarity: spec.polarity,
            source: ClaimSource {
                pub_id: pub_id.to_string(),
                version,
                chunk_ids: vec![chunk_id],
            },
            asserted_at: now,
        };
        claim.claim_id = claim.compute_id();
        let stats = check_statistics(std::slice::from_ref(&claim), graph);
        if !stats.is_empty() {
            if let Some(e) = claim.effect.as_mut() {
                e.ci95 = None;
            }
            out.statistics.extend(stats);
        }
        if seen.insert(claim.claim_id.clone()) {
            out.claims.push(claim);
        }
    }
    out
}

fn build_datasets(
    doc: &ParsedDocument,
    snap: &Snapshot,
    pub_id: &str,
    version: u32,
) -> Result<Vec<DatasetRecord>, Vec<Finding>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    let mut ids = HashSet::new();
    for (i, d) in doc.datasets.iter().enumerate() {
        let dataset_id = d.dataset_id.clone().unwrap_or_else(|| {
            format!(
                "ds:{}",
                digest_hex(&[pub_id, &version.to_string(), &i.to_string(), &d.name], 12)
            )
        });
        let record = DatasetRecord {
            dataset_id: dataset_id.clone(),
            pub_id: pub_id.to_string(),
            version,
            name: d.name.clone(),
            columns: d.columns.clone(),
            rows: d.rows.clone(),
        };
        let reject =
            |m: String| Finding::new(Gate::Schema, Severity::Reject, m, vec![dataset_id.clone()]);
        if let Err(m) = record.check() {
            errors.push(reject(format!("dataset {:?}: {m}", d.name)));
        } else if snap.dataset(&dataset_id).is_some() || !ids.insert(dataset_id.clone()) {
            errors.push(reject(format!("dataset_id {dataset_id} already exists")));
        } else {
            out.push(record);
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

/// Runs the whole pipeline short of committing. `snap` and `index` must be the current
/// state under the writer lock so that the assigned version is the next one.
#[allow(clippy::too_many_arguments)]
pub fn prepare(
    doc: &ParsedDocument,
    snap: &Snapshot,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    composer: &dyn Composer,
    settings: &IngestSettings,
    actor: &str,
    now: Timestamp,
) -> Result<Prepared, IngestError> {
    settings.policy.check().map_err(IngestError::Policy)?;
    let mut schema = check_schema(doc);
    if schema.iter().any(|f| f.severity == Severity::Reject) {
        return Ok(Prepared::rejected(schema));
    }
    let date = parse_date(&doc.date).expect("schema gate checked the date");
    let pub_id = doc
        .pub_id
        .clone()
        .unwrap_or_else(|| generated_pub_id(&doc.title, &doc.date));
    let version = snap.latest_version(&pub_id).unwrap_or(0) + 1;

    let datasets = match build_datasets(doc, snap, &pub_id, version) {
        Ok(d) => d,
        Err(mut rejects) => {
            schema.append(&mut rejects);
            return Ok(Prepared::rejected(schema));
        }
    };

    let chunks = chunk_document(doc, &settings.policy, &pub_id, version);
    for c in chunks
        .iter()
        .filter(|c| c.word_count as usize > settings.policy.max_words)
    {
        schema.push(Finding::new(
            Gate::Schema,
            Severity::Warn,
            format!(
                "chunk {} has {} words, above the {} word limit (single sentence)",
                c.chunk_id, c.word_count, settings.policy.max_words
            ),
            vec![c.chunk_id.clone()],
        ));
    }
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let vectors = embedder.embed_batch(&texts)?;

    let mut graph = snap.graph().clone();
    let built = build_claims(
        doc, &chunks, &mut graph, composer, settings, &pub_id, version, now,
    );
    schema.extend(built.schema);

    let mut findings = schema;
    findings.extend(check_duplicates(
        &chunks,
        &vectors,
        index,
        settings.duplicate_threshold,
    ));
    findings.extend(check_references(&doc.references, snap));
    findings.extend(built.statistics);
    findings.extend(check_contradictions(&built.claims, &graph));
    let report = ValidationReport::from_findings(findings);

    let generator_model = if !doc.generator_model.is_empty() {
        doc.generator_model.clone()
    } else if built.generated {
        composer.model_id().to_string()
    } else {
        String::new()
    };
    let note = if version == 1 {
        "initial submission".to_string()
    } else {
        format!("revision {version}")
    };
    let publication = Publication {
        pub_id,
        version,
        title: doc.title.trim().to_string(),
        authors: doc.authors.clone(),
        date,
        keywords: doc.keywords.clone(),
        venue: doc.venue.clone(),
        references: doc.references.clone(),
        status: if report.verdict == Verdict::AcceptedFlagged {
            PubStatus::Flagged
        } else {
            PubStatus::Validated
        },
        language: doc.language.clone(),
        provenance: ProvenanceRecord {
            generator_model,
            created_at: now,
            revision_notes: vec![RevisionNote {
                timestamp: now,
                actor: actor.to_string(),
                note,
            }],
            review_score: doc.review_score.map(|s| s as u8),
        },
    };
    Ok(Prepared {
        report,
        bundle: Some(PublicationBundle {
            publication,
            chunks,
            claims: built.claims,
            datasets,
        }),
        entities: built.entities,
        vectors,
    })
}
