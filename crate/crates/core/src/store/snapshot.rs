use std::collections::BTreeMap;

use crate::graph::{ClaimTriple, GraphState, GroupKey};
use crate::synth::SynthesisRecord;

use super::records::*;

/// Immutable view of everything committed, shared by readers behind an `Arc`.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub(crate) publications: BTreeMap<VersionRef, Publication>,
    pub(crate) superseded_by: BTreeMap<VersionRef, VersionRef>,
    pub(crate) chunks: BTreeMap<String, Chunk>,
    pub(crate) chunks_by_pub: BTreeMap<VersionRef, Vec<String>>,
    pub(crate) datasets: BTreeMap<String, DatasetRecord>,
    pub(crate) graph: GraphState,
    pub(crate) synthesis: BTreeMap<GroupKey, SynthesisRecord>,
}

impl Snapshot {
    pub fn publication_count(&self) -> usize {
        self.publications.len()
    }

    pub fn publications(&self) -> impl Iterator<Item = &Publication> {
        self.publications.values()
    }

    pub fn publication(&self, r: &VersionRef) -> Option<&Publication> {
        self.publications.get(r)
    }

    pub fn versions(&self, pub_id: &str) -> Vec<u32> {
        self.publications
            .range(VersionRef::new(pub_id, 0)..=VersionRef::new(pub_id, u32::MAX))
            .map(|(r, _)| r.version)
            .collect()
    }

    pub fn latest_version(&self, pub_id: &str) -> Option<u32> {
        self.versions(pub_id).into_iter().max()
    }

    /// Latest version that is not superseded.
    pub fn latest_active(&self, pub_id: &str) -> Option<u32> {
        self.versions(pub_id)
            .into_iter()
            .rev()
            .find(|v| !self.is_superseded(&VersionRef::new(pub_id, *v)))
    }

    pub fn is_superseded(&self, r: &VersionRef) -> bool {
        self.superseded_by.contains_key(r)
    }

    pub fn superseded_by(&self, r: &VersionRef) -> Option<&VersionRef> {
        self.superseded_by.get(r)
    }

    pub fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.chunks.get(id)
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.values()
    }

    /// Chunks of a version in ordinal order.
    pub fn chunks_for(&self, r: &VersionRef) -> Vec<&Chunk> {
        let mut out: Vec<&Chunk> = self
            .chunks_by_pub
            .get(r)
            .into_iter()
            .flatten()
            .filter_map(|id| self.chunks.get(id))
            .collect();
        out.sort_by_key(|c| c.ordinal);
        out
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetRecord> {
        self.datasets.get(id)
    }

    pub fn datasets(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.datasets.values()
    }

    pub fn datasets_for(&self, r: &VersionRef) -> Vec<&DatasetRecord> {
        self.datasets
            .values()
            .filter(|d| d.pub_id == r.pub_id && d.version == r.version)
            .collect()
    }

    pub fn graph(&self) -> &GraphState {
        &self.graph
    }

    pub fn synthesis(&self) -> &BTreeMap<GroupKey, SynthesisRecord> {
        &self.synthesis
    }

    pub fn synthesis_for(&self, group: &GroupKey) -> Option<&SynthesisRecord> {
        self.synthesis.get(group)
    }

    pub fn bundle(&self, r: &VersionRef) -> Option<PublicationBundle> {
        let publication = self.publications.get(r)?.clone();
        let claims: Vec<ClaimTriple> = self.graph.claims_for(r).into_iter().cloned().collect();
        Some(PublicationBundle {
            publication,
            chunks: self.chunks_for(r).into_iter().cloned().collect(),
            claims,
            datasets: self.datasets_for(r).into_iter().cloned().collect(),
        })
    }

    pub(crate) fn insert_publication(&mut self, p: Publication) {
        let r = p.version_ref();
        if p.status == PubStatus::Superseded {
            self.graph.mark_superseded(r.clone());
        }
        self.publications.insert(r, p);
    }

    pub(crate) fn apply_status(&mut self, change: &StatusChange) {
        let r = VersionRef::new(change.pub_id.clone(), change.version);
        if let Some(p) = self.publications.get_mut(&r) {
            p.status = change.status;
        }
        if change.status == PubStatus::Superseded {
            if let Some(by) = &change.superseded_by {
                self.superseded_by.insert(r.clone(), by.clone());
            }
            self.graph.mark_superseded(r);
        }
    }

    pub(crate) fn insert_chunk(&mut self, c: Chunk) {
        let ids = self.chunks_by_pub.entry(c.version_ref()).or_default();
        if !ids.contains(&c.chunk_id) {
            ids.push(c.chunk_id.clone());
        }
        self.chunks.insert(c.chunk_id.clone(), c);
    }

    pub(crate) fn insert_dataset(&mut self, d: DatasetRecord) {
        self.datasets.insert(d.dataset_id.clone(), d);
    }

    pub(crate) fn apply_synthesis(&mut self, update: &SynthesisUpdate) {
        match update {
            SynthesisUpdate::Upsert(rec) => {
                self.synthesis.insert(rec.group.clone(), rec.clone());
            }
            SynthesisUpdate::Remove(group) => {
                self.synthesis.remove(group);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisUpdate {
    Upsert(SynthesisRecord),
    Remove(GroupKey),
}
