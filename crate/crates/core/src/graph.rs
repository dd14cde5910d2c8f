//! Entity registry with alias resolution, claim triples, fact pattern queries and
//! contradiction detection.
//!
//! Aliases are stored normalized (trimmed, whitespace collapsed, lowercased) and map to
//! exactly one entity. Claims are grouped by `(subject, relation, object)`; a claim whose
//! source publication version is superseded is hidden from default queries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::store::VersionRef;
use crate::synth::SynthesisRecord;
use crate::text::{digest_hex, normalize_name};

/// Half-width multiplier of a 95% normal interval.
pub const Z95: f64 = 1.96;

/// Absolute tolerance when comparing a reported 95% interval against `estimate ± 1.96·se`.
pub const CI_TOLERANCE: f64 = 0.005;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("entity name is empty after normalization")]
    EmptyName,
    #[error("unknown entity: {0}")]
    UnknownEntity(String),
    #[error("alias {alias:?} already belongs to {owner}, cannot add it to {requested}")]
    AliasConflict {
        alias: String,
        owner: String,
        requested: String,
    },
    #[error("relation is empty after normalization")]
    EmptyRelation,
    #[error("claim {claim}: reported ci95 [{lo}, {hi}] inconsistent with estimate ± 1.96·se, expected [{exp_lo:.4}, {exp_hi:.4}]")]
    CiInconsistent {
        claim: String,
        lo: f64,
        hi: f64,
        exp_lo: f64,
        exp_hi: f64,
    },
    #[error("claim {claim}: {message}")]
    InvalidEffect { claim: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub entity_id: String,
    pub canonical_name: String,
    /// Normalized aliases; always contains the normalized canonical name.
    pub aliases: BTreeSet<String>,
    /// Opaque ontology identifiers such as `CHEBI:30411`.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub external_ids: BTreeSet<String>,
}

impl Entity {
    pub fn new(canonical_name: &str) -> Result<Entity, GraphError> {
        let norm = normalize_name(canonical_name);
        if norm.is_empty() {
            return Err(GraphError::EmptyName);
        }
        Ok(Entity {
            entity_id: format!("ent:{}", digest_hex(&[&norm], 12)),
            canonical_name: crate::text::normalize_whitespace(canonical_name),
            aliases: BTreeSet::from([norm]),
            external_ids: BTreeSet::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    Supports,
    Refutes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub estimate: f64,
    pub se: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci95: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl Effect {
    /// `estimate ± 1.96·se`.
    pub fn interval(&self) -> [f64; 2] {
        [self.estimate - Z95 * self.se, self.estimate + Z95 * self.se]
    }

    /// Returns the expected interval when the reported one deviates beyond tolerance.
    pub fn ci_mismatch(&self) -> Option<[f64; 2]> {
        let [lo, hi] = self.ci95?;
        let [exp_lo, exp_hi] = self.interval();
        if (lo - exp_lo).abs() > CI_TOLERANCE || (hi - exp_hi).abs() > CI_TOLERANCE {
            Some([exp_lo, exp_hi])
        } else {
            None
        }
    }
}

/// Either an entity id or a typed numeric literal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClaimObject {
    Entity(String),
    Literal { value: f64, unit: String },
}

impl ClaimObject {
    /// Stable string used for grouping and ordering.
    pub fn key(&self) -> String {
        match self {
            ClaimObject::Entity(id) => id.clone(),
            ClaimObject::Literal { value, unit } => format!("lit:{value}:{unit}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimSource {
    pub pub_id: String,
    pub version: u32,
    pub chunk_ids: Vec<String>,
}

impl ClaimSource {
    pub fn version_ref(&self) -> VersionRef {
        VersionRef::new(self.pub_id.clone(), self.version)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimTriple {
    pub claim_id: String,
    pub subject: String,
    pub relation: String,
    pub object: ClaimObject,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect: Option<Effect>,
    #[serde(default)]
    pub polarity: Polarity,
    pub source: ClaimSource,
    pub asserted_at: Timestamp,
}

impl ClaimTriple {
    /// Digest of (subject, relation, object, source). Independent of `asserted_at`.
    pub fn compute_id(&self) -> String {
        let object = self.object.key();
        let version = self.source.version.to_string();
        let chunks = self.source.chunk_ids.join(",");
        let digest = digest_hex(
            &[
                &self.subject,
                &self.relation,
                &object,
                &self.source.pub_id,
                &version,
                &chunks,
            ],
            16,
        );
        format!("clm:{digest}")
    }

    pub fn group(&self) -> GroupKey {
        GroupKey {
            subject: self.subject.clone(),
            relation: self.relation.clone(),
            object: self.object.key(),
        }
    }

    /// +1 / -1 / 0 from the effect estimate, or from polarity when there is no effect.
    pub fn direction(&self) -> i8 {
        match &self.effect {
            Some(e) if e.estimate > 0.0 => 1,
            Some(e) if e.estimate < 0.0 => -1,
            Some(_) => 0,
            None => match self.polarity {
                Polarity::Supports => 1,
                Polarity::Refutes => -1,
            },
        }
    }
}

/// Identity of a claim group: subject entity id, relation token, object key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.relation, self.object)
    }
}

/// Names (not ids) for subject and object; any subset may be present.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactPattern {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
}

impl FactPattern {
    pub fn is_empty(&self) -> bool {
        let blank = |f: &Option<String>| f.as_deref().is_none_or(|s| s.trim().is_empty());
        blank(&self.subject) && blank(&self.relation) && blank(&self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fact {
    pub claim: ClaimTriple,
    pub synthesis: Option<SynthesisRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FactsResult {
    pub facts: Vec<Fact>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Contradiction {
    pub first: String,
    pub second: String,
    pub reason: String,
}

pub const REASON_EFFECTS: &str = "opposite effect directions with disjoint 95% intervals";
pub const REASON_POLARITY: &str = "supports vs refutes on the same triple";

/// Lowercase, with runs of whitespace or hyphens turned into single underscores.
pub fn normalize_relation(relation: &str) -> String {
    let lowered = relation.trim().to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    for part in lowered.split(|c: char| c.is_whitespace() || c == '-' || c == '_') {
        if part.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push('_');
        }
        out.push_str(part);
    }
    out
}

/// Parses `<number>[ <unit>]` or `<number>%` as a literal object.
pub fn parse_literal(text: &str) -> Option<(f64, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"^([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)(?:\s+(\S.*)|(%))?$").unwrap()
    });
    let caps = re.captures(text.trim())?;
    let value: f64 = caps[1].parse().ok()?;
    if !value.is_finite() {
        return None;
    }
    let unit = caps
        .get(2)
        .or_else(|| caps.get(3))
        .map(|m| m.as_str().trim().to_string())
        .unwrap_or_default();
    Some((value, unit))
}

/// Pairwise conflict rule shared by ingestion and synthesis.
pub fn conflict_reason(a: &ClaimTriple, b: &ClaimTriple) -> Option<&'static str> {
    if let (Some(ea), Some(eb)) = (&a.effect, &b.effect) {
        let opposite =
            (ea.estimate > 0.0 && eb.estimate < 0.0) || (ea.estimate < 0.0 && eb.estimate > 0.0);
        let [alo, ahi] = ea.interval();
        let [blo, bhi] = eb.interval();
        if opposite && (ahi < blo || bhi < alo) {
            return Some(REASON_EFFECTS);
        }
    }
    if a.polarity != b.polarity {
        return Some(REASON_POLARITY);
    }
    None
}

/// In-memory graph state. Mutations validate invariants; persistence is the store's job.
#[derive(Debug, Clone, Default)]
pub struct GraphState {
    entities: BTreeMap<String, Entity>,
    alias_index: HashMap<String, String>,
    claims: BTreeMap<String, ClaimTriple>,
    groups: BTreeMap<GroupKey, BTreeSet<String>>,
    superseded: BTreeSet<VersionRef>,
}

impl GraphState {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn claim(&self, id: &str) -> Option<&ClaimTriple> {
        self.claims.get(id)
    }

    pub fn claims(&self) -> impl Iterator<Item = &ClaimTriple> {
        self.claims.values()
    }

    pub fn is_superseded(&self, r: &VersionRef) -> bool {
        self.superseded.contains(r)
    }

    pub fn is_active(&self, claim: &ClaimTriple) -> bool {
        !self.superseded.contains(&claim.source.version_ref())
    }

    pub(crate) fn mark_superseded(&mut self, r: VersionRef) {
        self.superseded.insert(r);
    }

    /// Name for display: canonical entity name or the literal rendered with its unit.
    pub fn display_object(&self, object: &ClaimObject) -> String {
        match object {
            ClaimObject::Entity(id) => self.display_entity(id),
            ClaimObject::Literal { value, unit } if unit.is_empty() => format!("{value}"),
            ClaimObject::Literal { value, unit } if unit == "%" => format!("{value}%"),
            ClaimObject::Literal { value, unit } => format!("{value} {unit}"),
        }
    }

    pub fn display_entity(&self, id: &str) -> String {
        self.entities
            .get(id)
            .map_or_else(|| id.to_string(), |e| e.canonical_name.clone())
    }

    pub fn resolve_entity(&self, name: &str) -> Result<&str, GraphError> {
        let norm = normalize_name(name);
        if norm.is_empty() {
            return Err(GraphError::EmptyName);
        }
        self.alias_index
            .get(&norm)
            .map(String::as_str)
            .ok_or_else(|| GraphError::UnknownEntity(name.trim().to_string()))
    }

    /// Resolves `name`, creating a provisional entity when absent and allowed.
    /// Returns the id plus the entity record when one was created.
    pub fn resolve_or_create(
        &mut self,
        name: &str,
        create_if_missing: bool,
    ) -> Result<(String, Option<Entity>), GraphError> {
        match self.resolve_entity(name) {
            Ok(id) => Ok((id.to_string(), None)),
            Err(GraphError::UnknownEntity(_)) if create_if_missing => {
                let mut entity = Entity::new(name)?;
                while self.entities.contains_key(&entity.entity_id) {
                    entity.entity_id.push('x');
                }
                self.insert_entity(entity.clone())?;
                Ok((entity.entity_id.clone(), Some(entity)))
            }
            Err(e) => Err(e),
        }
    }

    /// Inserts or replaces an entity record, enforcing alias injectivity.
    pub fn insert_entity(&mut self, mut entity: Entity) -> Result<(), GraphError> {
        let canonical = normalize_name(&entity.canonical_name);
        if canonical.is_empty() {
            return Err(GraphError::EmptyName);
        }
        entity.aliases = entity
            .aliases
            .iter()
            .map(|a| normalize_name(a))
            .filter(|a| !a.is_empty())
            .collect();
        entity.aliases.insert(canonical);
        for alias in &entity.aliases {
            if let Some(owner) = self.alias_index.get(alias) {
                if owner != &entity.entity_id {
                    return Err(GraphError::AliasConflict {
                        alias: alias.clone(),
                        owner: owner.clone(),
                        requested: entity.entity_id.clone(),
                    });
                }
            }
        }
        for alias in &entity.aliases {
            self.alias_index
                .insert(alias.clone(), entity.entity_id.clone());
        }
        self.entities.insert(entity.entity_id.clone(), entity);
        Ok(())
    }

    /// Adds an alias. Returns the updated entity when something changed, `None` for a no-op.
    pub fn add_alias(
        &mut self,
        entity_id: &str,
        alias: &str,
    ) -> Result<Option<Entity>, GraphError> {
        let norm = normalize_name(alias);
        if norm.is_empty() {
            return Err(GraphError::EmptyName);
        }
        if !self.entities.contains_key(entity_id) {
            return Err(GraphError::UnknownEntity(entity_id.to_string()));
        }
        match self.alias_index.get(&norm) {
            Some(owner) if owner == entity_id => return Ok(None),
            Some(owner) => {
                return Err(GraphError::AliasConflict {
                    alias: norm,
                    owner: owner.clone(),
                    requested: entity_id.to_string(),
                })
            }
            None => {}
        }
        let entity = self.entities.get_mut(entity_id).expect("checked above");
        entity.aliases.insert(norm.clone());
        self.alias_index.insert(norm, entity_id.to_string());
        Ok(Some(entity.clone()))
    }

    /// Validates a claim against the registry and the CI invariant without storing it.
    pub fn check_claim(&self, claim: &ClaimTriple) -> Result<(), GraphError> {
        if !self.entities.contains_key(&claim.subject) {
            return Err(GraphError::UnknownEntity(claim.subject.clone()));
        }
        if let ClaimObject::Entity(id) = &claim.object {
            if !self.entities.contains_key(id) {
                return Err(GraphError::UnknownEntity(id.clone()));
            }
        }
        if claim.relation.is_empty() || normalize_relation(&claim.relation) != claim.relation {
            return Err(GraphError::EmptyRelation);
        }
        if let Some(effect) = &claim.effect {
            if !effect.estimate.is_finite() || !(effect.se.is_finite() && effect.se > 0.0) {
                return Err(GraphError::InvalidEffect {
                    claim: claim.claim_id.clone(),
                    message: "estimate must be finite and se positive".into(),
                });
            }
            if let Some([exp_lo, exp_hi]) = effect.ci_mismatch() {
                let [lo, hi] = effect.ci95.unwrap();
                return Err(GraphError::CiInconsistent {
                    claim: claim.claim_id.clone(),
                    lo,
                    hi,
                    exp_lo,
                    exp_hi,
                });
            }
        }
        Ok(())
    }

    /// Stores a claim, assigning its deterministic id. Re-asserting an identical claim is a no-op.
    pub fn assert_claim(&mut self, mut claim: ClaimTriple) -> Result<String, GraphError> {
        claim.claim_id = claim.compute_id();
        self.check_claim(&claim)?;
        let id = claim.claim_id.clone();
        if self.claims.contains_key(&id) {
            return Ok(id);
        }
        self.groups
            .entry(claim.group())
            .or_default()
            .insert(id.clone());
        self.claims.insert(id.clone(), claim);
        Ok(id)
    }

    pub fn group_keys(&self) -> impl Iterator<Item = &GroupKey> {
        self.groups.keys()
    }

    /// Claims of one group, sorted by claim id.
    pub fn group_claims(&self, group: &GroupKey, include_superseded: bool) -> Vec<&ClaimTriple> {
        self.groups
            .get(group)
            .into_iter()
            .flatten()
            .filter_map(|id| self.claims.get(id))
            .filter(|c| include_superseded || self.is_active(c))
            .collect()
    }

    pub fn claims_for(&self, r: &VersionRef) -> Vec<&ClaimTriple> {
        self.claims
            .values()
            .filter(|c| c.source.pub_id == r.pub_id && c.source.version == r.version)
            .collect()
    }

    fn resolve_object(&self, name: &str) -> Option<String> {
        if let Ok(id) = self.resolve_entity(name) {
            return Some(id.to_string());
        }
        parse_literal(name).map(|(value, unit)| ClaimObject::Literal { value, unit }.key())
    }

    /// Claims matching every present pattern field, ordered by
    /// (subject, relation, object, asserted_at, claim_id).
    pub fn query_facts(
        &self,
        pattern: &FactPattern,
        include_superseded: bool,
        synthesis: &BTreeMap<GroupKey, SynthesisRecord>,
    ) -> FactsResult {
        let present = |f: &Option<String>| {
            f.as_deref()
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
        };
        let mut warnings = Vec::new();

        let subject = match present(&pattern.subject) {
            Some(name) => match self.resolve_entity(&name) {
                Ok(id) => Some(id.to_string()),
                Err(_) => {
                    warnings.push(format!("unknown entity: {name}"));
                    None
                }
            },
            None => None,
        };
        let object = match present(&pattern.object) {
            Some(name) => match self.resolve_object(&name) {
                Some(key) => Some(key),
                None => {
                    warnings.push(format!("unknown entity: {name}"));
                    None
                }
            },
            None => None,
        };
        if !warnings.is_empty() {
            return FactsResult {
                facts: Vec::new(),
                warnings,
            };
        }
        let relation = present(&pattern.relation).map(|r| normalize_relation(&r));

        let mut matched: Vec<&ClaimTriple> = self
            .claims
            .values()
            .filter(|c| subject.as_ref().is_none_or(|s| &c.subject == s))
            .filter(|c| relation.as_ref().is_none_or(|r| &c.relation == r))
            .filter(|c| object.as_ref().is_none_or(|o| &c.object.key() == o))
            .filter(|c| include_superseded || self.is_active(c))
            .collect();
        matched.sort_by(|a, b| {
            (
                &a.subject,
                &a.relation,
                a.object.key(),
                a.asserted_at,
                &a.claim_id,
            )
                .cmp(&(
                    &b.subject,
                    &b.relation,
                    b.object.key(),
                    b.asserted_at,
                    &b.claim_id,
                ))
        });
        let facts = matched
            .into_iter()
            .map(|c| Fact {
                claim: c.clone(),
                synthesis: synthesis.get(&c.group()).cloned(),
            })
            .collect();
        FactsResult { facts, warnings }
    }

    /// Every conflicting pair of active claims sharing subject, relation and object.
    pub fn detect_contradictions(&self, subject: &str, relation: &str) -> Vec<Contradiction> {
        let mut out = Vec::new();
        for (key, _) in self
            .groups
            .iter()
            .filter(|(k, _)| k.subject == subject && k.relation == relation)
        {
            out.extend(self.group_contradictions(key));
        }
        out
    }

    pub fn group_contradictions(&self, group: &GroupKey) -> Vec<Contradiction> {
        let claims = self.group_claims(group, false);
        let mut out = Vec::new();
        for (i, a) in claims.iter().enumerate() {
            for b in &claims[i + 1..] {
                if let Some(reason) = conflict_reason(a, b) {
                    out.push(Contradiction {
                        first: a.claim_id.clone(),
                        second: b.claim_id.clone(),
                        reason: reason.to_string(),
                    });
                }
            }
        }
        out
    }
}
