//! Exact cosine search over chunk embeddings.
//!
//! Vectors are normalized on insert, so a score is the dot product of two unit vectors
//! accumulated in double precision. Search scans every entry and orders by
//! (score descending, chunk_id ascending).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Read, Write};
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch d={got}, index d={expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("invalid index snapshot: {0}")]
    BadSnapshot(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub vector: Vec<f32>,
    pub pub_id: String,
    pub version: u32,
    pub superseded: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchFilter {
    pub include_superseded: bool,
    /// Restrict to these publications when present.
    pub pub_ids: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub chunk_id: String,
    pub score: f64,
}

/// Dot product in f64. Equals cosine similarity for unit vectors.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum()
}

/// Scales to unit length; the zero vector stays zero.
pub fn normalize(v: &[f32]) -> Vec<f32> {
    let norm = v
        .iter()
        .map(|x| f64::from(*x) * f64::from(*x))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (f64::from(*x) / norm) as f32).collect()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    dot(&normalize(a), &normalize(b))
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dimension: usize,
    entries: BTreeMap<String, Arc<IndexEntry>>,
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"APIDX001";

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        VectorIndex {
            dimension,
            entries: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, chunk_id: &str) -> Option<&IndexEntry> {
        self.entries.get(chunk_id).map(Arc::as_ref)
    }

    pub fn entries(&self) -> impl Iterator<Item = &IndexEntry> {
        self.entries.values().map(Arc::as_ref)
    }

    /// Replaces any entry with the same chunk_id. The vector is stored normalized.
    pub fn upsert(&mut self, mut entry: IndexEntry) -> Result<(), IndexError> {
        self.check_dimension(entry.vector.len())?;
        entry.vector = normalize(&entry.vector);
        self.entries.insert(entry.chunk_id.clone(), Arc::new(entry));
        Ok(())
    }

    pub fn search(
        &self,
        query: &[f32],
        k: usize,
        filter: &SearchFilter,
    ) -> Result<Vec<Hit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        self.check_dimension(query.len())?;
        let q = normalize(query);
        let mut hits: Vec<Hit> = self
            .entries
            .values()
            .filter(|e| filter.include_superseded || !e.superseded)
            .filter(|e| {
                filter
                    .pub_ids
                    .as_ref()
                    .is_none_or(|ids| ids.contains(&e.pub_id))
            })
            .map(|e| Hit {
                chunk_id: e.chunk_id.clone(),
                score: dot(&q, &e.vector),
            })
            .collect();
        let order = |a: &Hit, b: &Hit| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.chunk_id.cmp(&b.chunk_id))
        };
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_by(order);
        Ok(hits)
    }

    pub fn remove_publication(&mut self, pub_id: &str, version: u32) -> usize {
        let before = self.entries.len();
        self.entries
            .retain(|_, e| !(e.pub_id == pub_id && e.version == version));
        before - self.entries.len()
    }

    /// Sets the superseded flag on every entry of a version; returns how many changed.
    pub fn set_superseded(&mut self, pub_id: &str, version: u32, superseded: bool) -> usize {
        let mut changed = 0;
        for entry in self.entries.values_mut() {
            if entry.pub_id == pub_id && entry.version == version && entry.superseded != superseded
            {
                Arc::make_mut(entry).superseded = superseded;
                changed += 1;
            }
        }
        changed
    }

    fn check_dimension(&self, got: usize) -> Result<(), IndexError> {
        if got != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got,
            });
        }
        Ok(())
    }

    /// Binary snapshot: magic, dimension and count (u64 LE), `count × dimension` f32 LE
    /// vectors, then per entry the superseded flag, version, and length-prefixed
    /// chunk_id and pub_id.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<(), IndexError> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&(self.dimension as u64).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in self.entries.values() {
            for x in &e.vector {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        for e in self.entries.values() {
            w.write_all(&[u8::from(e.superseded)])?;
            w.write_all(&e.version.to_le_bytes())?;
            for s in [&e.chunk_id, &e.pub_id] {
                w.write_all(&(s.len() as u32).to_le_bytes())?;
                w.write_all(s.as_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<VectorIndex, IndexError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor {
            bytes: &bytes,
            pos: 0,
        };
        if cur.take(8)? != SNAPSHOT_MAGIC {
            return Err(IndexError::BadSnapshot("bad magic".into()));
        }
        let dimension = cur.u64()? as usize;
        let count = cur.u64()? as usize;
        let needed = count
            .checked_mul(dimension)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| IndexError::BadSnapshot("header overflow".into()))?;
        if needed > bytes.len() {
            return Err(IndexError::BadSnapshot(format!(
                "count {count} × dimension {dimension} exceeds file size"
            )));
        }
        let mut vectors = Vec::with_capacity(count);
        for _ in 0..count {
            let raw = cur.take(dimension * 4)?;
            vectors.push(
                raw.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect::<Vec<_>>(),
            );
        }
        let mut index = VectorIndex::new(dimension);
        for vector in vectors {
            let superseded = cur.take(1)?[0] != 0;
            let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
            let chunk_id = cur.string()?;
            let pub_id = cur.string()?;
            if index.entries.contains_key(&chunk_id) {
                return Err(IndexError::BadSnapshot(format!(
                    "duplicate chunk_id {chunk_id}"
                )));
            }
            index.entries.insert(
                chunk_id.clone(),
                Arc::new(IndexEntry {
                    chunk_id,
                    vector,
                    pub_id,
                    version,
                    superseded,
                }),
            );
        }
        if cur.pos != bytes.len() {
            return Err(IndexError::BadSnapshot("trailing bytes".into()));
        }
        Ok(index)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| IndexError::BadSnapshot("unexpected end of data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|e| IndexError::BadSnapshot(e.to_string()))
    }
}
