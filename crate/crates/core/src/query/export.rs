use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::ingest::format_claim_line;
use crate::store::{PublicationBundle, Snapshot};

/// Print-ready markdown for one publication version. The output parses back as a
/// markdown submission with the same title, section sequence and claim lines.
pub fn render_manuscript(bundle: &PublicationBundle, snap: &Snapshot) -> String {
    let p = &bundle.publication;
    let graph = snap.graph();
    let mut out = String::new();
    let _ = writeln!(out, "# {}\n", p.title);
    if let Some(by) = snap.superseded_by(&p.version_ref()) {
        let _ = writeln!(out, "> SUPERSEDED by {by}\n");
    }
    let _ = writeln!(out, "ID: {}", p.pub_id);
    if !p.authors.is_empty() {
        let authors: Vec<String> = p
            .authors
            .iter()
            .map(|a| match &a.orcid {
                Some(o) => format!("{} ({o})", a.name),
                None => a.name.clone(),
            })
            .collect();
        let _ = writeln!(out, "Authors: {}", authors.join("; "));
    }
    match &p.venue {
        Some(v) => {
            let _ = writeln!(out, "Date: {} | Venue: {v}", p.date);
        }
        None => {
            let _ = writeln!(out, "Date: {}", p.date);
        }
    }
    if !p.keywords.is_empty() {
        let sep = if p.keywords.iter().any(|k| k.contains(',')) {
            "; "
        } else {
            ", "
        };
        let _ = writeln!(out, "Keywords: {}", p.keywords.join(sep));
    }
    if !p.references.is_empty() {
        let _ = writeln!(out, "References: {}", p.references.join("; "));
    }
    if p.language != "en" {
        let _ = writeln!(out, "Language: {}", p.language);
    }

    let mut current = None;
    for chunk in &bundle.chunks {
        if current != Some(chunk.section) {
            let _ = write!(out, "\n## {}\n", chunk.section.heading());
            current = Some(chunk.section);
        }
        let _ = write!(out, "\n{}\n", chunk.text);
    }

    if !bundle.claims.is_empty() {
        out.push_str("\n## Claims\n\n");
        for c in &bundle.claims {
            let line = format_claim_line(
                &graph.display_entity(&c.subject),
                &c.relation,
                &graph.display_object(&c.object),
                c.effect.as_ref(),
                c.polarity,
            );
            let _ = writeln!(out, "{line}");
        }
    }

    let groups: BTreeSet<_> = bundle.claims.iter().map(|c| c.group()).collect();
    let records: Vec<_> = groups
        .iter()
        .filter_map(|g| snap.synthesis_for(g))
        .collect();
    if !records.is_empty() {
        out.push_str("\n## Synthesis\n\n");
        for r in records {
            let object = graph
                .claims()
                .find(|c| c.group() == r.group)
                .map(|c| graph.display_object(&c.object))
                .unwrap_or_else(|| r.group.object.clone());
            let _ = writeln!(
                out,
                "- {} | {} | {}: pooled estimate {:.4} (95% CI {:.4} to {:.4}), {} studies, agreement {:.2}, confidence {}{}",
                graph.display_entity(&r.group.subject),
                r.group.relation,
                object,
                r.pooled_estimate,
                r.ci95[0],
                r.ci95[1],
                r.n_studies,
                r.agreement_ratio,
                r.confidence.as_str(),
                if r.contradiction_flag { ", conflicting evidence" } else { "" },
            );
        }
    }

    out.push_str("\n## Provenance\n\n");
    let _ = writeln!(out, "- Version: {}", p.version);
    let _ = writeln!(out, "- Status: {}", p.status.as_str());
    let model = if p.provenance.generator_model.is_empty() {
        "none"
    } else {
        &p.provenance.generator_model
    };
    let _ = writeln!(out, "- Generator model: {model}");
    let _ = writeln!(
        out,
        "- Created: {}",
        p.provenance
            .created_at
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    );
    if let Some(score) = p.provenance.review_score {
        let _ = writeln!(out, "- Review score: {score}");
    }
    for note in &p.provenance.revision_notes {
        let _ = writeln!(
            out,
            "- Revision {} by {}: {}",
            note.timestamp
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            note.actor,
            note.note
        );
    }
    out
}
