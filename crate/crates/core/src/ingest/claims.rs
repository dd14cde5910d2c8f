//! Claim line grammar:
//! `CLAIM: <subject> | <relation> | <object> [| effect=<num>] [| se=<num>]
//!  [| ci95=<lo>,<hi>] [| polarity=supports|refutes] [| unit=<text>]`.

use std::fmt::Write as _;

use crate::graph::{normalize_relation, Effect, Polarity};

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimSpec {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub effect: Option<Effect>,
    pub polarity: Polarity,
}

/// A claim line as it appeared in the submission. `line` is 1-based within the payload
/// for markdown, or the position in the `claims` array for ap-json.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeclaredClaim {
    pub line: usize,
    pub text: String,
}

pub const CLAIM_PREFIX: &str = "CLAIM:";

pub fn is_claim_line(line: &str) -> bool {
    let t = line.trim_start();
    t.len() >= CLAIM_PREFIX.len() && t[..CLAIM_PREFIX.len()].eq_ignore_ascii_case(CLAIM_PREFIX)
}

fn parse_number(key: &str, value: &str) -> Result<f64, String> {
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| format!("{key}={value:?} is not a number"))?;
    if !v.is_finite() {
        return Err(format!("{key} must be finite"));
    }
    Ok(v)
}

/// Parses one claim line. The `CLAIM:` prefix is required unless `prefix_optional`.
pub fn parse_claim_line(line: &str, prefix_optional: bool) -> Result<ClaimSpec, String> {
    let mut body = line.trim();
    if is_claim_line(body) {
        body = &body[CLAIM_PREFIX.len()..];
    } else if !prefix_optional {
        return Err("missing CLAIM: prefix".into());
    }
    let fields: Vec<&str> = body.split('|').map(str::trim).collect();
    if fields.len() < 3 {
        return Err("expected `subject | relation | object`".into());
    }
    let (subject, relation, object) = (fields[0], fields[1], fields[2]);
    if subject.is_empty() || object.is_empty() || normalize_relation(relation).is_empty() {
        return Err("subject, relation and object must be non-empty".into());
    }

    let mut estimate = None;
    let mut se = None;
    let mut ci95 = None;
    let mut unit = None;
    let mut polarity = None;
    for field in &fields[3..] {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got {field:?}"))?;
        let key = key.trim().to_lowercase();
        let value = value.trim();
        let duplicate = match key.as_str() {
            "effect" => estimate.replace(parse_number("effect", value)?).is_some(),
            "se" => {
                let v = parse_number("se", value)?;
                if v <= 0.0 {
                    return Err("se must be positive".into());
                }
                se.replace(v).is_some()
            }
            "ci95" => {
                let (lo, hi) = value.split_once(',').ok_or("ci95 must be <lo>,<hi>")?;
                let lo = parse_number("ci95", lo)?;
                let hi = parse_number("ci95", hi)?;
                if lo > hi {
                    return Err("ci95 lower bound exceeds upper bound".into());
                }
                ci95.replace([lo, hi]).is_some()
            }
            "polarity" => {
                let p = match value.to_lowercase().as_str() {
                    "supports" => Polarity::Supports,
                    "refutes" => Polarity::Refutes,
                    other => return Err(format!("unknown polarity {other:?}")),
                };
                polarity.replace(p).is_some()
            }
            "unit" => {
                if value.is_empty() {
                    return Err("unit is empty".into());
                }
                unit.replace(value.to_string()).is_some()
            }
            other => return Err(format!("unknown field {other:?}")),
        };
        if duplicate {
            return Err(format!("field {key} given twice"));
        }
    }

    let effect = match (estimate, se) {
        (Some(estimate), Some(se)) => Some(Effect {
            estimate,
            se,
            ci95,
            unit,
        }),
        (None, None) if ci95.is_none() && unit.is_none() => None,
        (Some(_), None) => return Err("effect requires se".into()),
        _ => return Err("se, ci95 and unit require effect".into()),
    };
    Ok(ClaimSpec {
        subject: subject.to_string(),
        relation: relation.to_string(),
        object: object.to_string(),
        effect,
        polarity: polarity.unwrap_or_default(),
    })
}

/// Renders a claim back to a grammar line.
pub fn format_claim_line(
    subject: &str,
    relation: &str,
    object: &str,
    effect: Option<&Effect>,
    polarity: Polarity,
) -> String {
    let mut out = format!("{CLAIM_PREFIX} {subject} | {relation} | {object}");
    if let Some(e) = effect {
        let _ = write!(out, " | effect={} | se={}", e.estimate, e.se);
        if let Some([lo, hi]) = e.ci95 {
            let _ = write!(out, " | ci95={lo},{hi}");
        }
        if let Some(unit) = &e.unit {
            let _ = write!(out, " | unit={unit}");
        }
    }
    if polarity == Polarity::Refutes {
        out.push_str(" | polarity=refutes");
    }
    out
}
