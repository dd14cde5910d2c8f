use std::collections::BTreeSet;

use chrono::Datelike;

use crate::store::{PubStatus, Snapshot, VersionRef};

use super::Citation;

fn plural(n: usize, one: &str, many: &str) -> String {
    format!("{n} {}", if n == 1 { one } else { many })
}

/// Fixed-template account of the evidence behind an answer.
pub fn build_derivation(citations: &[Citation], snap: &Snapshot) -> String {
    let versions: BTreeSet<VersionRef> = citations
        .iter()
        .map(|c| VersionRef::new(c.pub_id.clone(), c.version))
        .collect();
    let pubs: Vec<_> = versions
        .iter()
        .filter_map(|r| snap.publication(r))
        .collect();
    let years: BTreeSet<i32> = pubs.iter().map(|p| p.date.year()).collect();
    let range = match (years.first(), years.last()) {
        (Some(a), Some(b)) if a == b => format!("{a}"),
        (Some(a), Some(b)) => format!("{a}–{b}"),
        _ => "unknown".into(),
    };
    let distinct_pubs: BTreeSet<&str> = versions.iter().map(|r| r.pub_id.as_str()).collect();
    let mut out = format!(
        "This answer is based on {} from {} dated {range}.",
        plural(citations.len(), "passage", "passages"),
        plural(distinct_pubs.len(), "publication", "publications"),
    );
    let flagged = pubs
        .iter()
        .filter(|p| p.status == PubStatus::Flagged)
        .count();
    if flagged > 0 {
        out.push_str(&format!(
            " {} validation warnings.",
            plural(
                flagged,
                "cited publication carries",
                "cited publications carry"
            )
        ));
    }
    out
}
