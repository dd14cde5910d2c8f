//! The composition root: one store, one in-memory index, and the providers, with a single
//! writer and snapshot readers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, Timestamp};
use crate::config::{ProviderMode, Settings};
use crate::graph::{FactPattern, FactsResult, GraphState, GroupKey};
use crate::index::{IndexEntry, IndexError, VectorIndex};
use crate::ingest::{self, IngestError, IngestSettings, ParsedDocument, ValidationReport};
use crate::providers::{
    Composer, Embedder, MockComposer, MockEmbedder, ProviderError, RemoteComposer, RemoteEmbedder,
};
use crate::query::{self, Answer, QueryContext, QueryError, QuerySettings, Zoom};
use crate::store::{
    self, EventAction, FeedbackEvent, LogEvent, Rating, Snapshot, Store, StoreError, StoreOptions,
    SynthesisUpdate, Transaction, VersionEvent, VersionRef,
};
use crate::synth::{refresh_synthesis, ConfidenceRules};

const INDEX_FILE_PREFIX: &str = "index-";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("index: {0}")]
    Index(#[from] IndexError),
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("unknown query id {0}")]
    UnknownQuery(String),
    #[error("embedder dimension {embedder} does not match index dimension {index}")]
    Dimension { embedder: usize, index: usize },
}

#[derive(Debug, Clone, Default)]
pub struct EngineSettings {
    pub ingest: IngestSettings,
    pub query: QuerySettings,
    pub rules: ConfidenceRules,
}

/// A consistent pair of store snapshot and index, plus a counter bumped on every change.
#[derive(Debug, Clone)]
pub struct View {
    pub snapshot: Arc<Snapshot>,
    pub index: Arc<VectorIndex>,
    pub generation: u64,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub report: ValidationReport,
    /// Set when something was committed.
    pub committed: Option<VersionRef>,
}

/// What a query event records, serialized into the event's details.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    pub question: String,
    pub zoom: Zoom,
    pub refused: bool,
    pub cited_chunks: Vec<String>,
    pub cited_pubs: Vec<String>,
    #[serde(default)]
    pub cache_hit: bool,
}

pub struct Engine {
    store: Store,
    view: RwLock<View>,
    writer: Mutex<()>,
    embedder: Arc<dyn Embedder>,
    composer: Arc<dyn Composer>,
    settings: EngineSettings,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("store", &self.store)
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// Loads the index from its snapshot file when it matches the store, re-embedding
    /// otherwise, and brings stored synthesis records in line with the current rules.
    pub fn open(
        store: Store,
        embedder: Arc<dyn Embedder>,
        composer: Arc<dyn Composer>,
        settings: EngineSettings,
    ) -> Result<Engine, EngineError> {
        let snap = store.snapshot();
        let index = match load_index(
            &index_path(&store, embedder.as_ref()),
            &snap,
            embedder.dimension(),
        ) {
            Some(index) => index,
            None => rebuild_index(&snap, embedder.as_ref())?,
        };
        let engine = Engine {
            view: RwLock::new(View {
                snapshot: snap,
                index: Arc::new(index),
                generation: 0,
            }),
            store,
            writer: Mutex::new(()),
            embedder,
            composer,
            settings,
        };
        engine.repair_synthesis()?;
        engine.persist_index();
        Ok(engine)
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn composer(&self) -> &Arc<dyn Composer> {
        &self.composer
    }

    pub fn now(&self) -> Timestamp {
        self.store.clock().now()
    }

    pub fn view(&self) -> View {
        self.view.read().unwrap().clone()
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.view().snapshot
    }

    pub fn generation(&self) -> u64 {
        self.view.read().unwrap().generation
    }

    /// Runs the pipeline and commits unless the report rejects. Writers are serialized.
    pub fn ingest(&self, doc: &ParsedDocument, actor: &str) -> Result<IngestOutcome, EngineError> {
        let _w = self.writer.lock().unwrap();
        let view = self.view();
        if self.embedder.dimension() != view.index.dimension() {
            return Err(EngineError::Dimension {
                embedder: self.embedder.dimension(),
                index: view.index.dimension(),
            });
        }
        let now = self.now();
        let prepared = ingest::prepare(
            doc,
            &view.snapshot,
            &view.index,
            self.embedder.as_ref(),
            self.composer.as_ref(),
            &self.settings.ingest,
            actor,
            now,
        )?;
        let Some(bundle) = prepared.bundle else {
            return Ok(IngestOutcome {
                report: prepared.report,
                committed: None,
            });
        };
        let r = bundle.publication.version_ref();

        let mut graph = view.snapshot.graph().clone();
        for e in &prepared.entities {
            graph.insert_entity(e.clone()).map_err(StoreError::from)?;
        }
        for c in &bundle.claims {
            graph.assert_claim(c.clone()).map_err(StoreError::from)?;
        }
        let touched: BTreeSet<GroupKey> = bundle.claims.iter().map(|c| c.group()).collect();
        let synthesis = self.synthesis_updates(&graph, &view.snapshot, touched, now, true);

        let report = prepared.report;
        let event = VersionEvent {
            timestamp: now,
            actor: actor.to_string(),
            action: EventAction::Commit,
            subject_id: r.to_string(),
            details: format!(
                "status={} verdict={} findings={}",
                bundle.publication.status.as_str(),
                report.verdict.as_str(),
                report.findings.len()
            ),
        };
        let chunks = bundle.chunks.clone();
        let snapshot = self.store.commit(Transaction {
            entities: prepared.entities,
            bundle: Some(bundle),
            synthesis,
            events: vec![event],
            ..Default::default()
        })?;

        let mut index = (*view.index).clone();
        for (chunk, vector) in chunks.iter().zip(prepared.vectors) {
            index.upsert(IndexEntry {
                chunk_id: chunk.chunk_id.clone(),
                vector,
                pub_id: chunk.pub_id.clone(),
                version: chunk.version,
                superseded: false,
            })?;
        }
        self.publish(snapshot, index);
        Ok(IngestOutcome {
            report,
            committed: Some(r),
        })
    }

    /// Marks `old` superseded by `new`, refreshes the synthesis of every group `old`
    /// contributed to, and hides its chunks from default retrieval. `false` when `old`
    /// was already superseded.
    pub fn supersede(
        &self,
        old: &VersionRef,
        new: &VersionRef,
        actor: &str,
    ) -> Result<bool, EngineError> {
        let _w = self.writer.lock().unwrap();
        let view = self.view();
        let now = self.now();
        let Some(change) = store::supersede_change(&view.snapshot, old, new, now)? else {
            return Ok(false);
        };
        let mut graph = view.snapshot.graph().clone();
        graph.mark_superseded(old.clone());
        let touched: BTreeSet<GroupKey> = view
            .snapshot
            .graph()
            .claims_for(old)
            .iter()
            .map(|c| c.group())
            .collect();
        let synthesis = self.synthesis_updates(&graph, &view.snapshot, touched, now, true);
        let event = store::supersede_event(old, new, actor, now);
        let snapshot = self.store.commit(Transaction {
            status_changes: vec![change],
            synthesis,
            events: vec![event],
            ..Default::default()
        })?;
        let mut index = (*view.index).clone();
        index.set_superseded(&old.pub_id, old.version, true);
        self.publish(snapshot, index);
        Ok(true)
    }

    /// Answers without logging. Callers that serve the answer must also call `log_query`.
    pub fn answer(
        &self,
        question: &str,
        zoom: Zoom,
        query_id: &str,
    ) -> Result<Answer, EngineError> {
        let view = self.view();
        let ctx = QueryContext {
            snap: &view.snapshot,
            index: &view.index,
            embedder: self.embedder.as_ref(),
            composer: self.composer.as_ref(),
            settings: self.settings.query,
        };
        Ok(query::answer(&ctx, question, zoom, query_id)?)
    }

    /// Answers with a fresh query id and logs the query event.
    pub fn query(&self, question: &str, zoom: Zoom, actor: &str) -> Result<Answer, EngineError> {
        let answer = self.answer(question, zoom, &new_query_id())?;
        self.log_query(&answer, actor, false)?;
        Ok(answer)
    }

    pub fn log_query(
        &self,
        answer: &Answer,
        actor: &str,
        cache_hit: bool,
    ) -> Result<(), EngineError> {
        let mut cited_pubs: Vec<String> = Vec::new();
        for c in &answer.citations {
            let r = VersionRef::new(c.pub_id.clone(), c.version).to_string();
            if !cited_pubs.contains(&r) {
                cited_pubs.push(r);
            }
        }
        let log = QueryLog {
            question: answer.question.clone(),
            zoom: answer.zoom,
            refused: answer.refused,
            cited_chunks: answer
                .citations
                .iter()
                .map(|c| c.chunk_id.clone())
                .collect(),
            cited_pubs,
            cache_hit,
        };
        self.store.append_event(LogEvent::Version(VersionEvent {
            timestamp: self.now(),
            actor: actor.to_string(),
            action: EventAction::Query,
            subject_id: answer.query_id.clone(),
            details: serde_json::to_string(&log).expect("query log serializes"),
        }))?;
        Ok(())
    }

    pub fn feedback(
        &self,
        query_id: &str,
        rating: Rating,
        flag_reason: Option<String>,
    ) -> Result<FeedbackEvent, EngineError> {
        if !self.store.has_query(query_id) {
            return Err(EngineError::UnknownQuery(query_id.to_string()));
        }
        let event = FeedbackEvent {
            query_id: query_id.to_string(),
            rating,
            flag_reason: flag_reason
                .map(|r| r.trim().to_string())
                .filter(|r| !r.is_empty()),
            timestamp: self.now(),
        };
        match self.store.append_event(LogEvent::Feedback(event))? {
            LogEvent::Feedback(f) => Ok(f),
            LogEvent::Version(_) => unreachable!("feedback in, feedback out"),
        }
    }

    pub fn facts(&self, pattern: &FactPattern, include_superseded: bool) -> FactsResult {
        let snap = self.snapshot();
        snap.graph()
            .query_facts(pattern, include_superseded, snap.synthesis())
    }

    fn publish(&self, snapshot: Arc<Snapshot>, index: VectorIndex) {
        {
            let mut view = self.view.write().unwrap();
            view.snapshot = snapshot;
            view.index = Arc::new(index);
            view.generation += 1;
        }
        self.persist_index();
    }

    /// Best effort: a stale or missing file only costs a re-embed on the next open.
    fn persist_index(&self) {
        let path = index_path(&self.store, self.embedder.as_ref());
        let index = self.view().index;
        let tmp = path.with_extension("tmp");
        let result = fs::File::create(&tmp)
            .map_err(IndexError::from)
            .and_then(|f| index.write_snapshot(BufWriter::new(f)))
            .and_then(|_| fs::rename(&tmp, &path).map_err(IndexError::from));
        if let Err(e) = result {
            tracing::warn!(path = %path.display(), error = %e, "could not persist the index snapshot");
        }
    }

    fn synthesis_updates(
        &self,
        graph: &GraphState,
        snap: &Snapshot,
        groups: BTreeSet<GroupKey>,
        now: Timestamp,
        force: bool,
    ) -> Vec<SynthesisUpdate> {
        let mut out = Vec::new();
        for group in groups {
            let existing = snap.synthesis_for(&group);
            match refresh_synthesis(&group, graph, &self.settings.rules, now) {
                Ok(Some(rec)) => {
                    if force || !existing.is_some_and(|e| e.same_content(&rec)) {
                        out.push(SynthesisUpdate::Upsert(rec));
                    }
                }
                Ok(None) => {
                    if existing.is_some() {
                        out.push(SynthesisUpdate::Remove(group));
                    }
                }
                Err(e) => tracing::warn!(group = ?group, error = %e, "synthesis skipped"),
            }
        }
        out
    }

    fn repair_synthesis(&self) -> Result<(), EngineError> {
        let _w = self.writer.lock().unwrap();
        let view = self.view();
        let snap = &view.snapshot;
        let mut groups: BTreeSet<GroupKey> = snap.graph().group_keys().cloned().collect();
        groups.extend(snap.synthesis().keys().cloned());
        let updates = self.synthesis_updates(snap.graph(), snap, groups, self.now(), false);
        if updates.is_empty() {
            return Ok(());
        }
        tracing::info!(count = updates.len(), "repairing stored synthesis records");
        let snapshot = self.store.commit(Transaction {
            synthesis: updates,
            ..Default::default()
        })?;
        self.publish(snapshot, (*view.index).clone());
        Ok(())
    }
}

/// Opens the store and providers a [`Settings`] value describes.
pub fn open_from_settings(
    settings: &Settings,
    clock: Option<Arc<dyn Clock>>,
) -> Result<Engine, EngineError> {
    let mut options = StoreOptions {
        recover: settings.store.recover,
        ..Default::default()
    };
    if let Some(clock) = clock {
        options.clock = clock;
    }
    let store = Store::open_with(&settings.store.path, options)?;
    for line in store.recovered_lines() {
        tracing::warn!(%line, "skipped while recovering the store");
    }
    let (embedder, composer): (Arc<dyn Embedder>, Arc<dyn Composer>) = match settings.providers.mode
    {
        ProviderMode::Mock => (
            Arc::new(MockEmbedder::new(settings.index.dimension)),
            Arc::new(MockComposer),
        ),
        ProviderMode::Remote => {
            let config = settings.remote_config();
            (
                Arc::new(RemoteEmbedder::new(config.clone())?),
                Arc::new(RemoteComposer::new(config)?),
            )
        }
    };
    let engine_settings = EngineSettings {
        ingest: settings.ingest_settings(),
        query: settings.query_settings(),
        rules: settings.confidence_rules(),
    };
    Engine::open(store, embedder, composer, engine_settings)
}

pub fn new_query_id() -> String {
    format!("q-{}", uuid::Uuid::new_v4().simple())
}

fn index_path(store: &Store, embedder: &dyn Embedder) -> PathBuf {
    let model: String = embedder
        .model_id()
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    store.root().join(format!(
        "{INDEX_FILE_PREFIX}{model}-d{}.bin",
        embedder.dimension()
    ))
}

/// The snapshot is used only when it covers exactly the store's chunks with the right flags.
fn load_index(path: &PathBuf, snap: &Snapshot, dimension: usize) -> Option<VectorIndex> {
    let file = fs::File::open(path).ok()?;
    let index = match VectorIndex::read_snapshot(std::io::BufReader::new(file)) {
        Ok(i) => i,
        Err(e) => {
            tracing::warn!(path = %path.display(), error = %e, "ignoring unreadable index snapshot");
            return None;
        }
    };
    if index.dimension() != dimension || index.len() != snap.chunks().count() {
        return None;
    }
    let consistent = snap.chunks().all(|c| {
        index
            .get(&c.chunk_id)
            .is_some_and(|e| e.superseded == snap.is_superseded(&c.version_ref()))
    });
    consistent.then_some(index)
}

fn rebuild_index(snap: &Snapshot, embedder: &dyn Embedder) -> Result<VectorIndex, EngineError> {
    let mut index = VectorIndex::new(embedder.dimension());
    let chunks: Vec<_> = snap.chunks().collect();
    if chunks.is_empty() {
        return Ok(index);
    }
    tracing::info!(chunks = chunks.len(), "embedding stored chunks");
    let mut by_pub: BTreeMap<VersionRef, Vec<_>> = BTreeMap::new();
    for c in chunks {
        by_pub.entry(c.version_ref()).or_default().push(c);
    }
    for (r, chunks) in by_pub {
        let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        let superseded = snap.is_superseded(&r);
        for (c, vector) in chunks.into_iter().zip(vectors) {
            index.upsert(IndexEntry {
                chunk_id: c.chunk_id.clone(),
                vector,
                pub_id: c.pub_id.clone(),
                version: c.version,
                superseded,
            })?;
        }
    }
    Ok(index)
}
