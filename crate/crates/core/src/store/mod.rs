//! Versioned, append-only persistence.
//!
//! One line-delimited JSON file per record kind lives under the store root. Every line
//! carries `kind` and `schema_version`. Nothing is ever rewritten: status transitions,
//! alias additions and synthesis refreshes are appended and the last record wins on load.
//!
//! A publication line is the commit marker for its version. Chunks, claims and datasets
//! are written before it, so records left behind by a failed commit are ignored on open.
//! Writers are serialized through one mutex; readers take an `Arc<Snapshot>`.

mod records;
mod snapshot;

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::{Clock, SystemClock, Timestamp};
use crate::graph::{ClaimTriple, Entity, GraphError};
use crate::synth::SynthesisRecord;
use crate::text::word_count;

pub use records::*;
pub use snapshot::{Snapshot, SynthesisUpdate};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{file}:{line}: corrupted record: {message}")]
    Corrupt {
        file: String,
        line: usize,
        message: String,
    },
    #[error("publication {0} already exists")]
    Duplicate(VersionRef),
    #[error("invariant violated by {record}: {message}")]
    Invariant { record: String, message: String },
    #[error("unknown publication {0}")]
    UnknownPublication(String),
    #[error("unknown version {0}")]
    UnknownVersion(VersionRef),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl StoreError {
    fn invariant(record: impl ToString, message: impl Into<String>) -> Self {
        StoreError::Invariant {
            record: record.to_string(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum FileKind {
    Entities,
    Publications,
    Chunks,
    Datasets,
    Claims,
    Synthesis,
    Events,
    Feedback,
}

impl FileKind {
    const ALL: [FileKind; 8] = [
        FileKind::Entities,
        FileKind::Publications,
        FileKind::Chunks,
        FileKind::Datasets,
        FileKind::Claims,
        FileKind::Synthesis,
        FileKind::Events,
        FileKind::Feedback,
    ];

    fn file_name(self) -> &'static str {
        match self {
            FileKind::Entities => "entities.jsonl",
            FileKind::Publications => "publications.jsonl",
            FileKind::Chunks => "chunks.jsonl",
            FileKind::Datasets => "datasets.jsonl",
            FileKind::Claims => "claims.jsonl",
            FileKind::Synthesis => "synthesis.jsonl",
            FileKind::Events => "events.jsonl",
            FileKind::Feedback => "feedback.jsonl",
        }
    }
}

#[derive(Serialize)]
struct LineOut<'a, T: Serialize> {
    kind: &'a str,
    schema_version: u32,
    #[serde(flatten)]
    record: &'a T,
}

fn encode<T: Serialize>(kind: &str, record: &T) -> String {
    serde_json::to_string(&LineOut {
        kind,
        schema_version: SCHEMA_VERSION,
        record,
    })
    .expect("records serialize to JSON")
}

#[derive(Debug, Serialize, Deserialize)]
struct SynthesisRemoval {
    group: crate::graph::GroupKey,
    timestamp: Timestamp,
}

/// Decoded line: its kind plus the raw object.
struct RawLine {
    line: usize,
    kind: String,
    value: Value,
}

fn decode<T: DeserializeOwned>(file: &str, raw: &RawLine) -> Result<T> {
    T::deserialize(&raw.value).map_err(|e| StoreError::Corrupt {
        file: file.to_string(),
        line: raw.line,
        message: format!("{} record: {e}", raw.kind),
    })
}

/// How to open a store.
#[derive(Clone)]
pub struct StoreOptions {
    /// Skip malformed lines (truncating a damaged tail) instead of failing.
    pub recover: bool,
    pub clock: Arc<dyn Clock>,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            recover: false,
            clock: Arc::new(SystemClock),
        }
    }
}

struct FileSet {
    root: PathBuf,
    handles: BTreeMap<FileKind, (File, u64)>,
    fault_after_lines: Option<usize>,
}

impl FileSet {
    fn path(&self, kind: FileKind) -> PathBuf {
        self.root.join(kind.file_name())
    }

    fn io_err(&self, kind: FileKind, source: io::Error) -> StoreError {
        StoreError::Io {
            path: self.path(kind),
            source,
        }
    }

    /// Appends all lines or none: on failure every touched file is truncated back.
    fn write_batch(&mut self, lines: &[(FileKind, String)]) -> Result<()> {
        let mut start: BTreeMap<FileKind, u64> = BTreeMap::new();
        for (kind, _) in lines {
            start.entry(*kind).or_insert(self.handles[kind].1);
        }
        let outcome = self.write_lines(lines);
        if let Err(e) = outcome {
            for (kind, len) in &start {
                let (file, cur) = self.handles.get_mut(kind).expect("opened at startup");
                let _ = file.set_len(*len);
                *cur = *len;
            }
            return Err(e);
        }
        for kind in start.keys() {
            let (file, _) = &self.handles[kind];
            file.sync_data().map_err(|e| self.io_err(*kind, e))?;
        }
        Ok(())
    }

    fn write_lines(&mut self, lines: &[(FileKind, String)]) -> Result<()> {
        for (kind, line) in lines {
            let mut bytes = Vec::with_capacity(line.len() + 1);
            bytes.extend_from_slice(line.as_bytes());
            bytes.push(b'\n');
            if let Some(remaining) = self.fault_after_lines.as_mut() {
                if *remaining == 0 {
                    let (file, len) = self.handles.get_mut(kind).expect("opened at startup");
                    let half = &bytes[..bytes.len() / 2];
                    let _ = file.write_all(half);
                    *len += half.len() as u64;
                    return Err(self.io_err(*kind, io::Error::other("injected write failure")));
                }
                *remaining -= 1;
            }
            let (file, len) = self.handles.get_mut(kind).expect("opened at startup");
            if let Err(e) = file.write_all(&bytes) {
                return Err(self.io_err(*kind, e));
            }
            *len += bytes.len() as u64;
        }
        Ok(())
    }
}

#[derive(Default)]
struct EventLog {
    events: Vec<VersionEvent>,
    feedback: Vec<FeedbackEvent>,
    query_ids: HashSet<String>,
}

impl EventLog {
    fn last_event_ts(&self) -> Option<Timestamp> {
        self.events.last().map(|e| e.timestamp)
    }

    fn last_feedback_ts(&self) -> Option<Timestamp> {
        self.feedback.last().map(|e| e.timestamp)
    }

    /// Clamps a timestamp that would run backwards, keeping the original in `details`.
    fn clamp_event(&self, mut e: VersionEvent) -> VersionEvent {
        if let Some(last) = self.last_event_ts() {
            if e.timestamp < last {
                let original = e
                    .timestamp
                    .to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true);
                if !e.details.is_empty() {
                    e.details.push(' ');
                }
                e.details
                    .push_str(&format!("(clock skew: original timestamp {original})"));
                e.timestamp = last;
            }
        }
        e
    }

    fn clamp_feedback(&self, mut f: FeedbackEvent) -> FeedbackEvent {
        if let Some(last) = self.last_feedback_ts() {
            if f.timestamp < last {
                f.timestamp = last;
            }
        }
        f
    }

    fn push_event(&mut self, e: VersionEvent) {
        if e.action == EventAction::Query {
            self.query_ids.insert(e.subject_id.clone());
        }
        self.events.push(e);
    }
}

/// A batch of records committed together.
#[derive(Debug, Clone, Default)]
pub struct Transaction {
    pub entities: Vec<Entity>,
    pub bundle: Option<PublicationBundle>,
    pub status_changes: Vec<StatusChange>,
    pub synthesis: Vec<SynthesisUpdate>,
    pub events: Vec<VersionEvent>,
}

pub struct Store {
    root: PathBuf,
    files: Mutex<FileSet>,
    snapshot: RwLock<Arc<Snapshot>>,
    log: Mutex<EventLog>,
    clock: Arc<dyn Clock>,
    recovered: Vec<String>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("root", &self.root)
            .finish_non_exhaustive()
    }
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Store> {
        Store::open_with(root, StoreOptions::default())
    }

    pub fn open_with(root: impl AsRef<Path>, options: StoreOptions) -> Result<Store> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|source| StoreError::Io {
            path: root.clone(),
            source,
        })?;

        let mut recovered = Vec::new();
        let mut raw: BTreeMap<FileKind, Vec<RawLine>> = BTreeMap::new();
        for kind in FileKind::ALL {
            let path = root.join(kind.file_name());
            raw.insert(
                kind,
                read_lines(&path, kind, options.recover, &mut recovered)?,
            );
        }

        let (snapshot, log) = load(&raw)?;

        let mut handles = BTreeMap::new();
        for kind in FileKind::ALL {
            let path = root.join(kind.file_name());
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|source| StoreError::Io {
                    path: path.clone(),
                    source,
                })?;
            let len = file
                .metadata()
                .map_err(|source| StoreError::Io {
                    path: path.clone(),
                    source,
                })?
                .len();
            handles.insert(kind, (file, len));
        }

        Ok(Store {
            files: Mutex::new(FileSet {
                root: root.clone(),
                handles,
                fault_after_lines: None,
            }),
            root,
            snapshot: RwLock::new(Arc::new(snapshot)),
            log: Mutex::new(log),
            clock: options.clock,
            recovered,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Lines skipped while opening in recovery mode, as `file:line: reason`.
    pub fn recovered_lines(&self) -> &[String] {
        &self.recovered
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap().clone()
    }

    /// Makes the write path fail after `lines` more record lines (a half line is written
    /// first). Test hook for commit atomicity.
    #[doc(hidden)]
    pub fn inject_write_failure(&self, lines: Option<usize>) {
        self.files.lock().unwrap().fault_after_lines = lines;
    }

    pub fn put_publication(&self, bundle: PublicationBundle, actor: &str) -> Result<VersionRef> {
        let r = bundle.publication.version_ref();
        let event = VersionEvent {
            timestamp: self.clock.now(),
            actor: actor.to_string(),
            action: EventAction::Commit,
            subject_id: r.to_string(),
            details: format!("status={}", bundle.publication.status.as_str()),
        };
        self.commit(Transaction {
            bundle: Some(bundle),
            events: vec![event],
            ..Default::default()
        })?;
        Ok(r)
    }

    /// Without a version, the latest non-superseded version.
    pub fn get_publication(&self, pub_id: &str, version: Option<u32>) -> Result<PublicationBundle> {
        resolve_bundle(&self.snapshot(), pub_id, version)
    }

    /// Returns `false` when `old` was already superseded (no new event is written).
    pub fn mark_superseded(&self, old: &VersionRef, new: &VersionRef, actor: &str) -> Result<bool> {
        let snap = self.snapshot();
        let Some(change) = supersede_change(&snap, old, new, self.clock.now())? else {
            return Ok(false);
        };
        let event = supersede_event(old, new, actor, change.timestamp);
        self.commit(Transaction {
            status_changes: vec![change],
            events: vec![event],
            ..Default::default()
        })?;
        Ok(true)
    }

    pub fn append_event(&self, event: LogEvent) -> Result<LogEvent> {
        let mut files = self.files.lock().unwrap();
        let mut log = self.log.lock().unwrap();
        match event {
            LogEvent::Version(e) => {
                let e = log.clamp_event(e);
                files.write_batch(&[(FileKind::Events, encode("event", &e))])?;
                log.push_event(e.clone());
                Ok(LogEvent::Version(e))
            }
            LogEvent::Feedback(f) => {
                let f = log.clamp_feedback(f);
                files.write_batch(&[(FileKind::Feedback, encode("feedback", &f))])?;
                log.feedback.push(f.clone());
                Ok(LogEvent::Feedback(f))
            }
        }
    }

    pub fn events(&self) -> Vec<VersionEvent> {
        self.log.lock().unwrap().events.clone()
    }

    pub fn feedback(&self) -> Vec<FeedbackEvent> {
        self.log.lock().unwrap().feedback.clone()
    }

    pub fn event_count(&self) -> usize {
        self.log.lock().unwrap().events.len()
    }

    pub fn has_query(&self, query_id: &str) -> bool {
        self.log.lock().unwrap().query_ids.contains(query_id)
    }

    /// Validates and durably appends a batch, then publishes the new snapshot.
    pub fn commit(&self, txn: Transaction) -> Result<Arc<Snapshot>> {
        let mut files = self.files.lock().unwrap();
        let current = self.snapshot();
        let mut next = (*current).clone();
        let mut lines: Vec<(FileKind, String)> = Vec::new();

        for entity in &txn.entities {
            next.graph.insert_entity(entity.clone())?;
            let stored = next.graph.entity(&entity.entity_id).expect("just inserted");
            lines.push((FileKind::Entities, encode("entity", stored)));
        }

        if let Some(bundle) = &txn.bundle {
            let bundle = validate_bundle(&next, bundle)?;
            for d in &bundle.datasets {
                lines.push((FileKind::Datasets, encode("dataset", d)));
                next.insert_dataset(d.clone());
            }
            for c in &bundle.chunks {
                lines.push((FileKind::Chunks, encode("chunk", c)));
                next.insert_chunk(c.clone());
            }
            for c in &bundle.claims {
                lines.push((FileKind::Claims, encode("claim", c)));
                next.graph.assert_claim(c.clone())?;
            }
            lines.push((
                FileKind::Publications,
                encode("publication", &bundle.publication),
            ));
            next.insert_publication(bundle.publication.clone());
        }

        for change in &txn.status_changes {
            let r = VersionRef::new(change.pub_id.clone(), change.version);
            if next.publication(&r).is_none() {
                return Err(StoreError::UnknownVersion(r));
            }
            if change.status == PubStatus::Superseded {
                match &change.superseded_by {
                    Some(by) if next.publication(by).is_some() && by != &r => {}
                    _ => {
                        return Err(StoreError::invariant(
                            &r,
                            "superseded status needs an existing, distinct successor",
                        ))
                    }
                }
            }
            lines.push((FileKind::Publications, encode("status", change)));
            next.apply_status(change);
        }

        for update in &txn.synthesis {
            let line = match update {
                SynthesisUpdate::Upsert(rec) => encode("synthesis", rec),
                SynthesisUpdate::Remove(group) => encode(
                    "synthesis_removed",
                    &SynthesisRemoval {
                        group: group.clone(),
                        timestamp: self.clock.now(),
                    },
                ),
            };
            lines.push((FileKind::Synthesis, line));
            next.apply_synthesis(update);
        }

        let mut log = self.log.lock().unwrap();
        let mut staged = Vec::new();
        for e in &txn.events {
            let mut clamped = log.clamp_event(e.clone());
            if let Some(prev) = staged.last().map(|p: &VersionEvent| p.timestamp) {
                if clamped.timestamp < prev {
                    clamped.timestamp = prev;
                }
            }
            lines.push((FileKind::Events, encode("event", &clamped)));
            staged.push(clamped);
        }

        files.write_batch(&lines)?;
        for e in staged {
            log.push_event(e);
        }
        let next = Arc::new(next);
        *self.snapshot.write().unwrap() = next.clone();
        Ok(next)
    }
}

pub(crate) fn resolve_bundle(
    snap: &Snapshot,
    pub_id: &str,
    version: Option<u32>,
) -> Result<PublicationBundle> {
    let version = match version {
        Some(v) => v,
        None => {
            if snap.latest_version(pub_id).is_none() {
                return Err(StoreError::UnknownPublication(pub_id.to_string()));
            }
            snap.latest_active(pub_id).ok_or_else(|| {
                StoreError::UnknownPublication(format!("{pub_id} (every version is superseded)"))
            })?
        }
    };
    let r = VersionRef::new(pub_id, version);
    if snap.latest_version(pub_id).is_none() {
        return Err(StoreError::UnknownPublication(pub_id.to_string()));
    }
    snap.bundle(&r).ok_or(StoreError::UnknownVersion(r))
}

/// The status change for superseding `old` by `new`, or `None` when already superseded.
pub(crate) fn supersede_change(
    snap: &Snapshot,
    old: &VersionRef,
    new: &VersionRef,
    now: Timestamp,
) -> Result<Option<StatusChange>> {
    if old == new {
        return Err(StoreError::invariant(
            old,
            "a version cannot supersede itself",
        ));
    }
    if snap.publication(old).is_none() {
        return Err(StoreError::UnknownVersion(old.clone()));
    }
    if snap.publication(new).is_none() {
        return Err(StoreError::UnknownVersion(new.clone()));
    }
    if snap.is_superseded(old) {
        return Ok(None);
    }
    Ok(Some(StatusChange {
        pub_id: old.pub_id.clone(),
        version: old.version,
        status: PubStatus::Superseded,
        superseded_by: Some(new.clone()),
        timestamp: now,
    }))
}

pub(crate) fn supersede_event(
    old: &VersionRef,
    new: &VersionRef,
    actor: &str,
    at: Timestamp,
) -> VersionEvent {
    VersionEvent {
        timestamp: at,
        actor: actor.to_string(),
        action: EventAction::Supersede,
        subject_id: old.to_string(),
        details: format!("superseded by {new}"),
    }
}

/// Checks every record invariant of a publication bundle against the pending snapshot.
/// Returns the bundle with claim ids recomputed.
fn validate_bundle(next: &Snapshot, bundle: &PublicationBundle) -> Result<PublicationBundle> {
    let p = &bundle.publication;
    let r = p.version_ref();
    if p.pub_id.trim().is_empty() {
        return Err(StoreError::invariant("publication", "pub_id is empty"));
    }
    if p.version < 1 {
        return Err(StoreError::invariant(&r, "version must be >= 1"));
    }
    if next.publication(&r).is_some() {
        return Err(StoreError::Duplicate(r));
    }
    let expected = next.latest_version(&p.pub_id).unwrap_or(0) + 1;
    if p.version != expected {
        return Err(StoreError::invariant(
            &r,
            format!("version gap: next version must be {expected}"),
        ));
    }
    if p.title.trim().is_empty() {
        return Err(StoreError::invariant(&r, "title is empty"));
    }
    if p.status == PubStatus::Superseded {
        return Err(StoreError::invariant(
            &r,
            "cannot commit a version already marked superseded",
        ));
    }
    if p.provenance
        .revision_notes
        .windows(2)
        .any(|w| w[1].timestamp < w[0].timestamp)
    {
        return Err(StoreError::invariant(
            &r,
            "revision notes out of timestamp order",
        ));
    }
    if let Some(score) = p.provenance.review_score {
        if !(1..=5).contains(&score) {
            return Err(StoreError::invariant(
                &r,
                "review_score must be between 1 and 5",
            ));
        }
    }

    let mut ordinals: Vec<u32> = Vec::with_capacity(bundle.chunks.len());
    let mut chunk_ids = HashSet::new();
    for c in &bundle.chunks {
        if c.pub_id != p.pub_id || c.version != p.version {
            return Err(StoreError::invariant(
                &c.chunk_id,
                format!("chunk belongs to {}@v{}", c.pub_id, c.version),
            ));
        }
        if c.chunk_id != Chunk::id_for(&c.pub_id, c.version, c.ordinal) {
            return Err(StoreError::invariant(
                &c.chunk_id,
                "chunk_id must be <pub_id>#v<version>#c<ordinal>",
            ));
        }
        if c.text.trim().is_empty() {
            return Err(StoreError::invariant(&c.chunk_id, "chunk text is empty"));
        }
        if c.word_count as usize != word_count(&c.text) {
            return Err(StoreError::invariant(
                &c.chunk_id,
                "word_count does not match text",
            ));
        }
        if !chunk_ids.insert(c.chunk_id.clone()) || next.chunk(&c.chunk_id).is_some() {
            return Err(StoreError::invariant(&c.chunk_id, "duplicate chunk_id"));
        }
        ordinals.push(c.ordinal);
    }
    ordinals.sort_unstable();
    if ordinals.iter().enumerate().any(|(i, o)| *o as usize != i) {
        return Err(StoreError::invariant(&r, "non-contiguous ordinals"));
    }

    let mut dataset_ids = HashSet::new();
    for d in &bundle.datasets {
        if d.pub_id != p.pub_id || d.version != p.version {
            return Err(StoreError::invariant(
                &d.dataset_id,
                "dataset belongs to another publication",
            ));
        }
        if !dataset_ids.insert(d.dataset_id.clone()) || next.dataset(&d.dataset_id).is_some() {
            return Err(StoreError::invariant(&d.dataset_id, "duplicate dataset_id"));
        }
        d.check()
            .map_err(|m| StoreError::invariant(&d.dataset_id, m))?;
    }

    let mut claims: Vec<ClaimTriple> = Vec::with_capacity(bundle.claims.len());
    let mut seen = HashSet::new();
    for c in &bundle.claims {
        let mut c = c.clone();
        c.claim_id = c.compute_id();
        if c.source.pub_id != p.pub_id || c.source.version != p.version {
            return Err(StoreError::invariant(
                &c.claim_id,
                "claim source is another publication",
            ));
        }
        if let Some(missing) = c
            .source
            .chunk_ids
            .iter()
            .find(|id| !chunk_ids.contains(*id))
        {
            return Err(StoreError::invariant(
                &c.claim_id,
                format!("source chunk {missing} not in this publication"),
            ));
        }
        next.graph.check_claim(&c)?;
        if seen.insert(c.claim_id.clone()) {
            claims.push(c);
        }
    }

    Ok(PublicationBundle {
        publication: p.clone(),
        chunks: bundle.chunks.clone(),
        claims,
        datasets: bundle.datasets.clone(),
    })
}

fn read_lines(
    path: &Path,
    kind: FileKind,
    recover: bool,
    recovered: &mut Vec<String>,
) -> Result<Vec<RawLine>> {
    let name = kind.file_name();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(StoreError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let mut out = Vec::new();
    let mut good_len = 0usize;
    let mut offset = 0usize;
    let mut line_no = 0usize;
    let mut tail_damaged = false;
    while offset < bytes.len() {
        line_no += 1;
        let (segment, terminated) = match bytes[offset..].iter().position(|b| *b == b'\n') {
            Some(i) => (&bytes[offset..offset + i], true),
            None => (&bytes[offset..], false),
        };
        let next_offset = offset + segment.len() + usize::from(terminated);
        let parsed = if !terminated {
            Err("truncated record (missing line terminator)".to_string())
        } else {
            parse_line(segment)
        };
        match parsed {
            Ok((kind, value)) => {
                out.push(RawLine {
                    line: line_no,
                    kind,
                    value,
                });
                good_len = next_offset;
            }
            Err(message) => {
                if !recover {
                    return Err(StoreError::Corrupt {
                        file: name.to_string(),
                        line: line_no,
                        message,
                    });
                }
                recovered.push(format!("{name}:{line_no}: {message}"));
                if next_offset >= bytes.len() {
                    tail_damaged = true;
                } else {
                    good_len = next_offset;
                }
            }
        }
        offset = next_offset;
    }
    if tail_damaged {
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|source| StoreError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        file.set_len(good_len as u64)
            .map_err(|source| StoreError::Io {
                path: path.to_path_buf(),
                source,
            })?;
    }
    Ok(out)
}

fn parse_line(segment: &[u8]) -> std::result::Result<(String, Value), String> {
    let text = std::str::from_utf8(segment).map_err(|e| format!("invalid UTF-8: {e}"))?;
    let value: Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let kind = value
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| "missing kind".to_string())?
        .to_string();
    match value.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(format!("unsupported schema_version {v}")),
        None => return Err("missing schema_version".into()),
    }
    Ok((kind, value))
}

fn load(raw: &BTreeMap<FileKind, Vec<RawLine>>) -> Result<(Snapshot, EventLog)> {
    let mut snap = Snapshot::default();
    let unexpected = |kind: FileKind, l: &RawLine| StoreError::Corrupt {
        file: kind.file_name().to_string(),
        line: l.line,
        message: format!("unexpected record kind {:?}", l.kind),
    };

    let name = FileKind::Entities.file_name();
    for l in &raw[&FileKind::Entities] {
        if l.kind != "entity" {
            return Err(unexpected(FileKind::Entities, l));
        }
        let e: Entity = decode(name, l)?;
        snap.graph
            .insert_entity(e)
            .map_err(|err| StoreError::Corrupt {
                file: name.to_string(),
                line: l.line,
                message: err.to_string(),
            })?;
    }

    let name = FileKind::Publications.file_name();
    let mut statuses = Vec::new();
    for l in &raw[&FileKind::Publications] {
        match l.kind.as_str() {
            "publication" => snap.insert_publication(decode::<Publication>(name, l)?),
            "status" => statuses.push(decode::<StatusChange>(name, l)?),
            _ => return Err(unexpected(FileKind::Publications, l)),
        }
    }
    for s in &statuses {
        snap.apply_status(s);
    }
    let committed = |r: &VersionRef, snap: &Snapshot| snap.publication(r).is_some();

    let name = FileKind::Chunks.file_name();
    for l in &raw[&FileKind::Chunks] {
        if l.kind != "chunk" {
            return Err(unexpected(FileKind::Chunks, l));
        }
        let c: Chunk = decode(name, l)?;
        if committed(&c.version_ref(), &snap) {
            snap.insert_chunk(c);
        }
    }

    let name = FileKind::Datasets.file_name();
    for l in &raw[&FileKind::Datasets] {
        if l.kind != "dataset" {
            return Err(unexpected(FileKind::Datasets, l));
        }
        let d: DatasetRecord = decode(name, l)?;
        if committed(&d.version_ref(), &snap) {
            snap.insert_dataset(d);
        }
    }

    let name = FileKind::Claims.file_name();
    for l in &raw[&FileKind::Claims] {
        if l.kind != "claim" {
            return Err(unexpected(FileKind::Claims, l));
        }
        let c: ClaimTriple = decode(name, l)?;
        if committed(&c.source.version_ref(), &snap) {
            snap.graph
                .assert_claim(c)
                .map_err(|err| StoreError::Corrupt {
                    file: name.to_string(),
                    line: l.line,
                    message: err.to_string(),
                })?;
        }
    }

    let name = FileKind::Synthesis.file_name();
    for l in &raw[&FileKind::Synthesis] {
        match l.kind.as_str() {
            "synthesis" => {
                let rec: SynthesisRecord = decode(name, l)?;
                snap.apply_synthesis(&SynthesisUpdate::Upsert(rec));
            }
            "synthesis_removed" => {
                let rm: SynthesisRemoval = decode(name, l)?;
                snap.apply_synthesis(&SynthesisUpdate::Remove(rm.group));
            }
            _ => return Err(unexpected(FileKind::Synthesis, l)),
        }
    }

    let mut log = EventLog::default();
    let name = FileKind::Events.file_name();
    for l in &raw[&FileKind::Events] {
        if l.kind != "event" {
            return Err(unexpected(FileKind::Events, l));
        }
        log.push_event(decode(name, l)?);
    }
    let name = FileKind::Feedback.file_name();
    for l in &raw[&FileKind::Feedback] {
        if l.kind != "feedback" {
            return Err(unexpected(FileKind::Feedback, l));
        }
        log.feedback.push(decode(name, l)?);
    }
    Ok((snap, log))
}
