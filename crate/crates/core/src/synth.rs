//! Evidence synthesis per claim group: fixed-effect inverse-variance pooling,
//! sign agreement, and a rule-table confidence label.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::graph::{ClaimTriple, GraphState, GroupKey, Z95};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("cannot pool an empty set of effects")]
    Empty,
    #[error("claim {0} has a non-positive or non-finite standard error")]
    BadStandardError(String),
    #[error("claim {0} has a non-finite estimate")]
    BadEstimate(String),
    #[error("claim {0} carries no effect")]
    MissingEffect(String),
    #[error("group {group} mixes units: {units:?}")]
    MixedUnits { group: String, units: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Low,
    Medium,
    High,
}

impl Confidence {
    /// Fixed numeric mapping exposed as `confidence_score`.
    pub fn score(self) -> f64 {
        match self {
            Confidence::Low => 0.25,
            Confidence::Medium => 0.60,
            Confidence::High => 0.90,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Confidence::Low => "low",
            Confidence::Medium => "medium",
            Confidence::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub group: GroupKey,
    pub n_studies: usize,
    pub pooled_estimate: f64,
    pub pooled_se: f64,
    pub ci95: [f64; 2],
    pub agreement_ratio: f64,
    pub confidence: Confidence,
    pub contradiction_flag: bool,
    pub computed_at: Timestamp,
    pub inputs: Vec<String>,
}

impl SynthesisRecord {
    /// True when both records agree on everything but `computed_at`.
    pub fn same_content(&self, other: &SynthesisRecord) -> bool {
        let mut a = self.clone();
        a.computed_at = other.computed_at;
        &a == other
    }

    pub fn dissenting(&self) -> usize {
        let agreeing = (self.agreement_ratio * self.n_studies as f64).round() as usize;
        self.n_studies.saturating_sub(agreeing)
    }
}

/// Thresholds of the confidence table. Evaluated contradiction, then `n < medium_min_n`,
/// then the high row, then the medium row; anything else is low.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceRules {
    pub medium_min_n: usize,
    pub medium_min_agreement: f64,
    pub high_min_n: usize,
    pub high_min_agreement: f64,
}

impl Default for ConfidenceRules {
    fn default() -> Self {
        ConfidenceRules {
            medium_min_n: 2,
            medium_min_agreement: 0.75,
            high_min_n: 6,
            high_min_agreement: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pooled {
    pub estimate: f64,
    pub se: f64,
}

impl Pooled {
    pub fn ci95(&self) -> [f64; 2] {
        [self.estimate - Z95 * self.se, self.estimate + Z95 * self.se]
    }
}

/// Inverse-variance pooling over `(estimate, se)` pairs: w = 1/se², estimate = Σwx/Σw,
/// se = √(1/Σw). Inputs are summed in sorted order so the result is permutation invariant.
pub fn pool(effects: &[(f64, f64)]) -> Result<Pooled, SynthError> {
    if effects.is_empty() {
        return Err(SynthError::Empty);
    }
    let mut sorted = effects.to_vec();
    for (i, &(x, se)) in sorted.iter().enumerate() {
        if !x.is_finite() {
            return Err(SynthError::BadEstimate(format!("#{i}")));
        }
        if !(se.is_finite() && se > 0.0) {
            return Err(SynthError::BadStandardError(format!("#{i}")));
        }
    }
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (mut sum_w, mut sum_wx) = (0.0f64, 0.0f64);
    for (x, se) in sorted {
        let w = 1.0 / (se * se);
        sum_w += w;
        sum_wx += w * x;
    }
    Ok(Pooled {
        estimate: sum_wx / sum_w,
        se: (1.0 / sum_w).sqrt(),
    })
}

/// Pools the effects of `claims`; every claim must carry an effect with a common unit.
pub fn pool_effects(claims: &[&ClaimTriple]) -> Result<Pooled, SynthError> {
    if claims.is_empty() {
        return Err(SynthError::Empty);
    }
    let mut pairs = Vec::with_capacity(claims.len());
    let mut units: Vec<String> = Vec::new();
    for c in claims {
        let e = c
            .effect
            .as_ref()
            .ok_or_else(|| SynthError::MissingEffect(c.claim_id.clone()))?;
        if !e.estimate.is_finite() {
            return Err(SynthError::BadEstimate(c.claim_id.clone()));
        }
        if !(e.se.is_finite() && e.se > 0.0) {
            return Err(SynthError::BadStandardError(c.claim_id.clone()));
        }
        let unit = e.unit.clone().unwrap_or_default();
        if !units.contains(&unit) {
            units.push(unit);
        }
        pairs.push((e.estimate, e.se));
    }
    if units.len() > 1 {
        units.sort();
        return Err(SynthError::MixedUnits {
            group: claims[0].group().to_string(),
            units,
        });
    }
    pool(&pairs)
}

/// Share of claims whose direction matches the majority direction. Exact ties give 0.5.
pub fn agreement_ratio(claims: &[&ClaimTriple]) -> f64 {
    if claims.is_empty() {
        return 0.0;
    }
    let mut counts = [0usize; 3];
    for c in claims {
        counts[(c.direction() + 1) as usize] += 1;
    }
    let mut sorted = counts;
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    if sorted[0] == sorted[1] {
        return 0.5;
    }
    sorted[0] as f64 / claims.len() as f64
}

pub fn confidence_label(
    n_studies: usize,
    agreement: f64,
    ci95: [f64; 2],
    contradiction_flag: bool,
    rules: &ConfidenceRules,
) -> Confidence {
    let excludes_zero = ci95[0] > 0.0 || ci95[1] < 0.0;
    if contradiction_flag || n_studies < rules.medium_min_n {
        return Confidence::Low;
    }
    if n_studies >= rules.high_min_n && agreement >= rules.high_min_agreement && excludes_zero {
        return Confidence::High;
    }
    if agreement >= rules.medium_min_agreement && excludes_zero {
        return Confidence::Medium;
    }
    Confidence::Low
}

/// Recomputes the record for `group` from the active claims in `graph`.
///
/// `Ok(None)` means the group should have no record: every claim is superseded or none
/// carries an effect. Polarity-only claims count toward `n_studies` and agreement.
pub fn refresh_synthesis(
    group: &GroupKey,
    graph: &GraphState,
    rules: &ConfidenceRules,
    now: Timestamp,
) -> Result<Option<SynthesisRecord>, SynthError> {
    let claims = graph.group_claims(group, false);
    let with_effect: Vec<&ClaimTriple> = claims
        .iter()
        .copied()
        .filter(|c| c.effect.is_some())
        .collect();
    if with_effect.is_empty() {
        return Ok(None);
    }
    let pooled = pool_effects(&with_effect)?;
    let agreement = agreement_ratio(&claims);
    let contradiction_flag = !graph.group_contradictions(group).is_empty();
    let ci95 = pooled.ci95();
    let mut inputs: Vec<String> = claims.iter().map(|c| c.claim_id.clone()).collect();
    inputs.sort();
    Ok(Some(SynthesisRecord {
        group: group.clone(),
        n_studies: claims.len(),
        pooled_estimate: pooled.estimate,
        pooled_se: pooled.se,
        ci95,
        agreement_ratio: agreement,
        confidence: confidence_label(claims.len(), agreement, ci95, contradiction_flag, rules),
        contradiction_flag,
        computed_at: now,
        inputs,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ClaimObject, ClaimSource, Effect, Polarity};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn effect_claim(id: &str, estimate: f64, se: f64) -> ClaimTriple {
        ClaimTriple {
            claim_id: id.into(),
            subject: "ent:s".into(),
            relation: "r".into(),
            object: ClaimObject::Entity("ent:o".into()),
            effect: Some(Effect {
                estimate,
                se,
                ci95: None,
                unit: None,
            }),
            polarity: Polarity::Supports,
            source: ClaimSource {
                pub_id: id.into(),
                version: 1,
                chunk_ids: vec![],
            },
            asserted_at: Utc.timestamp_opt(0, 0).unwrap(),
        }
    }

    fn signs(pos: usize, neg: usize) -> Vec<ClaimTriple> {
        (0..pos)
            .map(|i| effect_claim(&format!("p{i}"), 0.1, 0.1))
            .chain((0..neg).map(|i| effect_claim(&format!("n{i}"), -0.1, 0.1)))
            .collect()
    }

    #[test]
    fn pooling_worked_examples() {
        let one = pool(&[(0.05, 0.02)]).unwrap();
        assert_eq!(one.estimate, 0.05);
        assert!((one.se - 0.02).abs() < 1e-15);

        // w = 2500, 625 -> 150 / 3125
        let two = pool(&[(0.04, 0.02), (0.08, 0.04)]).unwrap();
        assert!((two.estimate - 0.048).abs() < 1e-12);
        assert!((two.se - (1.0f64 / 3125.0).sqrt()).abs() < 1e-15);
        assert!((two.se - 0.017889).abs() < 1e-6);

        let equal = pool(&[(0.05, 0.1), (0.07, 0.1)]).unwrap();
        assert!((equal.estimate - 0.06).abs() < 1e-12);
        assert!((equal.se - 0.1 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pooling_errors() {
        assert_eq!(pool(&[]), Err(SynthError::Empty));
        assert!(matches!(
            pool(&[(0.1, 0.0)]),
            Err(SynthError::BadStandardError(_))
        ));
        assert!(matches!(
            pool(&[(0.1, -1.0)]),
            Err(SynthError::BadStandardError(_))
        ));
        let mut a = effect_claim("a", 0.1, 0.1);
        let mut b = effect_claim("b", 0.1, 0.1);
        a.effect.as_mut().unwrap().unit = Some("mg".into());
        b.effect.as_mut().unwrap().unit = Some("g".into());
        assert!(matches!(
            pool_effects(&[&a, &b]),
            Err(SynthError::MixedUnits { .. })
        ));
    }

    #[test]
    fn agreement_examples() {
        let all = signs(4, 0);
        assert_eq!(agreement_ratio(&all.iter().collect::<Vec<_>>()), 1.0);
        let three_one = signs(3, 1);
        assert_eq!(agreement_ratio(&three_one.iter().collect::<Vec<_>>()), 0.75);
        let tie = signs(1, 1);
        assert_eq!(agreement_ratio(&tie.iter().collect::<Vec<_>>()), 0.5);
    }

    #[test]
    fn label_rows() {
        let rules = ConfidenceRules::default();
        assert_eq!(
            confidence_label(1, 1.0, [0.02, 0.09], false, &rules),
            Confidence::Low
        );
        assert_eq!(
            confidence_label(3, 1.0, [0.01, 0.07], false, &rules),
            Confidence::Medium
        );
        assert_eq!(
            confidence_label(6, 1.0, [0.02, 0.09], false, &rules),
            Confidence::High
        );
        assert_eq!(
            confidence_label(6, 1.0, [0.02, 0.09], true, &rules),
            Confidence::Low
        );
        assert_eq!(
            confidence_label(3, 1.0, [-0.01, 0.07], false, &rules),
            Confidence::Low
        );
        assert_eq!(
            confidence_label(3, 0.5, [0.01, 0.07], false, &rules),
            Confidence::Low
        );
        // With the high row lowered to n >= 4, five unanimous studies are high.
        let four = ConfidenceRules {
            high_min_n: 4,
            ..rules
        };
        assert_eq!(
            confidence_label(5, 1.0, [0.02, 0.09], false, &four),
            Confidence::High
        );
        assert_eq!(
            confidence_label(5, 1.0, [0.02, 0.09], false, &rules),
            Confidence::Medium
        );
    }

    #[test]
    fn scores_are_fixed() {
        assert_eq!(Confidence::Low.score(), 0.25);
        assert_eq!(Confidence::Medium.score(), 0.60);
        assert_eq!(Confidence::High.score(), 0.90);
    }

    fn brute_force(effects: &[(f64, f64)]) -> (f64, f64) {
        let weights: Vec<f64> = effects.iter().map(|(_, se)| 1.0 / se.powi(2)).collect();
        let total: f64 = weights.iter().sum();
        let mean = effects
            .iter()
            .zip(&weights)
            .map(|((x, _), w)| x * w)
            .sum::<f64>()
            / total;
        (mean, total.recip().sqrt())
    }

    proptest! {
        #[test]
        fn pool_matches_weighted_mean(effects in prop::collection::vec((-5.0f64..5.0, 1e-3f64..10.0), 1..100)) {
            let p = pool(&effects).unwrap();
            let (mean, se) = brute_force(&effects);
            let scale = effects.iter().map(|(x, _)| x.abs()).fold(1e-12, f64::max);
            prop_assert!((p.estimate - mean).abs() <= 1e-9 * scale);
            prop_assert!((p.se - se).abs() <= 1e-9 * se);
        }

        #[test]
        fn pool_is_permutation_invariant(mut effects in prop::collection::vec((-5.0f64..5.0, 1e-3f64..10.0), 1..40), seed in any::<u64>()) {
            let before = pool(&effects).unwrap();
            let n = effects.len();
            for i in (1..n).rev() {
                let j = (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize;
                effects.swap(i, j);
            }
            prop_assert_eq!(before, pool(&effects).unwrap());
        }

        #[test]
        fn adding_a_study_never_widens(effects in prop::collection::vec((-5.0f64..5.0, 1e-3f64..10.0), 1..40), extra in (-5.0f64..5.0, 1e-3f64..10.0)) {
            let before = pool(&effects).unwrap();
            let mut more = effects.clone();
            more.push(extra);
            prop_assert!(pool(&more).unwrap().se <= before.se);
        }

        #[test]
        fn label_monotone_in_n(n in 1usize..12) {
            let rules = ConfidenceRules::default();
            let a = confidence_label(n, 1.0, [0.01, 0.1], false, &rules);
            let b = confidence_label(n + 1, 1.0, [0.01, 0.1], false, &rules);
            prop_assert!(a <= b);
        }
    }
}
