//! `apub`: ingest, query, serve and maintain an agentic publication store.
//!
//! Exit codes: 0 success, 3 accepted with flags, 4 rejected, 1 failure, 2 usage.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use apub_core::config::Settings;
use apub_core::digest::feedback_digest;
use apub_core::engine::{new_query_id, open_from_settings, Engine};
use apub_core::graph::FactPattern;
use apub_core::ingest::{
    parse_failure_report, parse_submission, Format, ValidationReport, Verdict,
};
use apub_core::query::{dataset_stats, render_manuscript, Zoom};
use apub_core::store::VersionRef;
use apub_server::wire::{FactsResponse, QueryResponse, SubmitResponse};
use apub_server::AppState;
use chrono::{NaiveDate, TimeZone, Utc};
use clap::{Parser, Subcommand};

const EXIT_FLAGGED: u8 = 3;
const EXIT_REJECTED: u8 = 4;
const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "apub", version, about = "Agentic publication engine")]
struct Cli {
    /// TOML config file. `AP_<SECTION>_<KEY>` variables override it; flags override both.
    #[arg(long, global = true, env = "AP_CONFIG")]
    config: Option<PathBuf>,
    /// Store directory (overrides store.path).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate and commit a submission.
    Ingest {
        file: PathBuf,
        /// ap-json or markdown; guessed from the extension when omitted.
        #[arg(long)]
        format: Option<String>,
    },
    /// Ask a question.
    Query {
        question: String,
        #[arg(long, default_value = "abstract")]
        zoom: String,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        addr: Option<String>,
    },
    /// List facts matching a pattern.
    Facts {
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        relation: Option<String>,
        #[arg(long)]
        object: Option<String>,
        #[arg(long)]
        include_superseded: bool,
    },
    /// Mark one version superseded by another.
    Supersede {
        /// `pub_id@vN`
        old: String,
        /// `pub_id@vM`
        #[arg(long = "by")]
        by: String,
    },
    /// Render a publication as print-ready markdown.
    Export {
        pub_id: String,
        #[arg(long)]
        version: Option<u32>,
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
    },
    /// Summarise reader activity for the author.
    Digest {
        /// Only activity on or after this date (YYYY-MM-DD) or RFC 3339 time.
        #[arg(long)]
        since: Option<String>,
    },
    /// Per-column statistics of a dataset.
    Stats { dataset_id: String },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(String),
}

impl<E: std::fmt::Display> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Failure(e.to_string())
    }
}

type CliResult = Result<u8, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Failure(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = Settings::load(cli.config.as_deref())?;
    if let Some(store) = &cli.store {
        s.store.path = store.clone();
    }
    Ok(s)
}

fn engine(settings: &Settings) -> Result<Engine, CliError> {
    Ok(open_from_settings(settings, None)?)
}

fn emit_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let settings = settings(&cli)?;
    match &cli.command {
        Command::Ingest { file, format } => ingest(&settings, file, format.as_deref(), cli.json),
        Command::Query { question, zoom } => {
            let zoom: Zoom = zoom.parse().map_err(usage)?;
            query(&settings, question, zoom, cli.json)
        }
        Command::Serve { addr } => serve(&settings, addr.as_deref()),
        Command::Facts {
            subject,
            relation,
            object,
            include_superseded,
        } => {
            let pattern = FactPattern {
                subject: subject.clone(),
                relation: relation.clone(),
                object: object.clone(),
            };
            if pattern.is_empty() {
                return Err(usage(
                    "give at least one of --subject, --relation, --object",
                ));
            }
            facts(&settings, &pattern, *include_superseded, cli.json)
        }
        Command::Supersede { old, by } => {
            let old: VersionRef = old.parse().map_err(usage)?;
            let new: VersionRef = by.parse().map_err(usage)?;
            let engine = engine(&settings)?;
            let changed = engine.supersede(&old, &new, "cli")?;
            if cli.json {
                emit_json(
                    &serde_json::json!({"superseded": old.to_string(), "by": new.to_string(), "changed": changed}),
                )?;
            } else if changed {
                println!("superseded {old} by {new}");
            } else {
                println!("{old} was already superseded");
            }
            Ok(0)
        }
        Command::Export {
            pub_id,
            version,
            output,
        } => export(&settings, pub_id, *version, output.as_deref()),
        Command::Digest { since } => digest(&settings, since.as_deref(), cli.json),
        Command::Stats { dataset_id } => stats(&settings, dataset_id, cli.json),
    }
}

fn guess_format(file: &Path, format: Option<&str>) -> Result<Format, CliError> {
    match format {
        Some(f) => f
            .parse()
            .map_err(|e: apub_core::ingest::ParseError| usage(e.to_string())),
        None => Ok(match file.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::ApJson,
            _ => Format::Markdown,
        }),
    }
}

fn verdict_code(report: &ValidationReport) -> u8 {
    match report.verdict {
        Verdict::Accepted => 0,
        Verdict::AcceptedFlagged => EXIT_FLAGGED,
        Verdict::Rejected => EXIT_REJECTED,
    }
}

fn ingest(settings: &Settings, file: &Path, format: Option<&str>, json: bool) -> CliResult {
    let format = guess_format(file, format)?;
    let bytes =
        std::fs::read(file).map_err(|e| CliError::Failure(format!("{}: {e}", file.display())))?;
    let (committed, report, datasets) = match parse_submission(&bytes, format) {
        Ok(doc) => {
            let engine = engine(settings)?;
            let out = engine.ingest(&doc, "cli")?;
            let snap = engine.snapshot();
            let datasets: Vec<String> = out
                .committed
                .as_ref()
                .map(|r| {
                    snap.datasets_for(r)
                        .iter()
                        .map(|d| d.dataset_id.clone())
                        .collect()
                })
                .unwrap_or_default();
            (out.committed, out.report, datasets)
        }
        Err(e) => match parse_failure_report(&e) {
            Some(report) => (None, report, Vec::new()),
            None => return Err(CliError::Failure(format!("{}: {e}", file.display()))),
        },
    };
    if json {
        emit_json(&SubmitResponse {
            pub_id: committed.as_ref().map(|r| r.pub_id.clone()),
            version: committed.as_ref().map(|r| r.version),
            report: report.clone(),
        })?;
    } else {
        match &committed {
            Some(r) => println!("{} {r}", report.verdict.as_str()),
            None => println!("{}", report.verdict.as_str()),
        }
        for id in &datasets {
            println!("  dataset {id}");
        }
        for f in &report.findings {
            println!(
                "  [{}] {}: {}",
                f.severity.as_str(),
                f.gate.as_str(),
                f.message
            );
        }
    }
    Ok(verdict_code(&report))
}

fn query(settings: &Settings, question: &str, zoom: Zoom, json: bool) -> CliResult {
    if question.trim().is_empty() {
        return Err(usage("question is empty"));
    }
    let engine = engine(settings)?;
    let answer = engine.answer(question, zoom, &new_query_id())?;
    engine.log_query(&answer, "cli", false)?;
    if json {
        let summary = if zoom == Zoom::Headline || answer.refused {
            answer.text.clone()
        } else {
            engine.answer(question, Zoom::Headline, "")?.text
        };
        emit_json(&QueryResponse::new(&answer, &summary))?;
        return Ok(0);
    }
    let snap = engine.snapshot();
    let mut out = format!("{}\n", answer.text);
    if !answer.citations.is_empty() {
        out.push_str("\nCitations:\n");
        for c in &answer.citations {
            let r = VersionRef::new(c.pub_id.clone(), c.version);
            let title = snap.publication(&r).map_or("", |p| p.title.as_str());
            writeln!(out, "  [{}] {title} ({r})", c.chunk_id).unwrap();
        }
    }
    writeln!(
        out,
        "\nConfidence: {} ({:.2})",
        answer.confidence.as_str(),
        answer.confidence_score
    )
    .unwrap();
    for w in &answer.warnings {
        writeln!(out, "Warning: {w}").unwrap();
    }
    writeln!(out, "{}", answer.derivation).unwrap();
    writeln!(out, "Query id: {}", answer.query_id).unwrap();
    print!("{out}");
    Ok(0)
}

fn serve(settings: &Settings, addr: Option<&str>) -> CliResult {
    let addr = addr.unwrap_or(&settings.server.addr).to_string();
    let engine = Arc::new(engine(settings)?);
    let state = Arc::new(AppState::new(engine, settings)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(apub_server::serve(state, &addr))?;
    Ok(0)
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .iter()
            .map(String::as_str)
            .collect(),
    );
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

fn facts(
    settings: &Settings,
    pattern: &FactPattern,
    include_superseded: bool,
    json: bool,
) -> CliResult {
    let engine = engine(settings)?;
    let snap = engine.snapshot();
    let result = engine.facts(pattern, include_superseded);
    let response = FactsResponse::new(&result, snap.graph());
    if json {
        emit_json(&response)?;
        return Ok(0);
    }
    let fmt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.4}"));
    let rows: Vec<Vec<String>> = response
        .facts
        .iter()
        .map(|f| {
            vec![
                f.subject.clone(),
                f.relation.clone(),
                f.object.clone(),
                fmt(f.effect.as_ref().map(|e| e.estimate)),
                fmt(f.effect.as_ref().map(|e| e.se)),
                format!("{}@v{}", f.source.publication_id, f.source.version),
                f.synthesis
                    .as_ref()
                    .map_or(String::new(), |s| s.confidence_label.as_str().to_string()),
                if f.superseded {
                    "yes".into()
                } else {
                    String::new()
                },
            ]
        })
        .collect();
    print!(
        "{}",
        table(
            &[
                "subject",
                "relation",
                "object",
                "estimate",
                "se",
                "source",
                "confidence",
                "superseded"
            ],
            &rows
        )
    );
    for w in &response.warnings {
        eprintln!("warning: {w}");
    }
    Ok(0)
}

fn export(
    settings: &Settings,
    pub_id: &str,
    version: Option<u32>,
    output: Option<&Path>,
) -> CliResult {
    let engine = engine(settings)?;
    let snap = engine.snapshot();
    let version = version
        .or_else(|| snap.latest_active(pub_id))
        .or_else(|| snap.latest_version(pub_id))
        .ok_or_else(|| CliError::Failure(format!("unknown publication {pub_id:?}")))?;
    let r = VersionRef::new(pub_id, version);
    let bundle = snap
        .bundle(&r)
        .ok_or_else(|| CliError::Failure(format!("unknown publication version {r}")))?;
    let text = render_manuscript(&bundle, &snap);
    match output {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn parse_since(since: &str) -> Result<apub_core::clock::Timestamp, CliError> {
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(since) {
        return Ok(t.with_timezone(&Utc));
    }
    let d = NaiveDate::parse_from_str(since, "%Y-%m-%d").map_err(|_| {
        usage(format!(
            "--since expects YYYY-MM-DD or an RFC 3339 time, got {since:?}"
        ))
    })?;
    Ok(Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).expect("midnight exists")))
}

fn digest(settings: &Settings, since: Option<&str>, json: bool) -> CliResult {
    let since = since.map(parse_since).transpose()?;
    let engine = engine(settings)?;
    let store = engine.store();
    let d = feedback_digest(
        &store.events(),
        &store.feedback(),
        &engine.snapshot(),
        since,
    );
    if json {
        emit_json(&d)?;
    } else {
        print!("{}", d.to_markdown());
    }
    Ok(0)
}

fn stats(settings: &Settings, dataset_id: &str, json: bool) -> CliResult {
    let engine = engine(settings)?;
    let snap = engine.snapshot();
    let d = snap
        .dataset(dataset_id)
        .ok_or_else(|| CliError::Failure(format!("unknown dataset {dataset_id:?}")))?;
    let cols = dataset_stats(d);
    if json {
        emit_json(
            &serde_json::json!({"dataset_id": d.dataset_id, "name": d.name, "rows": d.rows.len(), "columns": cols}),
        )?;
        return Ok(0);
    }
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    let rows: Vec<Vec<String>> = cols
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                format!("{:?}", c.kind).to_lowercase(),
                c.count.to_string(),
                fmt(c.mean),
                fmt(c.min),
                fmt(c.max),
            ]
        })
        .collect();
    println!("{} ({} rows)", d.name, d.rows.len());
    print!(
        "{}",
        table(&["column", "kind", "count", "mean", "min", "max"], &rows)
    );
    Ok(0)
}
