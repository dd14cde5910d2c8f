mod common;

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use common::fixtures::{aspirin_study, science_corpus};
use common::{apub, arg, dataset_study, Workspace};
use serde_json::{json, Value};

#[test]
fn ingest_exit_codes_follow_the_verdict() {
    let ws = Workspace::new();
    let clean = ws.write_json("clean.json", &aspirin_study(1, -0.1, 0.02));
    let run = ws.run(&["ingest", arg(&clean)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.starts_with("accepted ap:"), "{}", run.stdout);

    let mut flagged = aspirin_study(2, -0.1, 0.02);
    flagged["references"] = json!(["an unpublished conversation"]);
    let p = ws.write_json("flagged.json", &flagged);
    let run = ws.run(&["ingest", arg(&p)]);
    assert_eq!(run.code, 3, "{}{}", run.stdout, run.stderr);
    assert!(
        run.stdout.starts_with("accepted_flagged ap:"),
        "{}",
        run.stdout
    );
    assert!(
        run.stdout
            .contains("[warn] reference: unresolvable reference"),
        "{}",
        run.stdout
    );

    let mut bad_date = aspirin_study(3, -0.1, 0.02);
    bad_date["date"] = json!("2020-13-45");
    let p = ws.write_json("bad_date.json", &bad_date);
    let run = ws.run(&["ingest", arg(&p)]);
    assert_eq!(run.code, 4, "{}{}", run.stdout, run.stderr);
    assert!(run.stdout.starts_with("rejected\n"), "{}", run.stdout);

    let untitled = ws.write("untitled.md", "Just a paragraph with no heading at all.\n");
    let run = ws.run(&["ingest", arg(&untitled)]);
    assert_eq!(run.code, 4, "{}{}", run.stdout, run.stderr);

    let run = ws.run(&["ingest", arg(&ws.path("missing.json"))]);
    assert_eq!(run.code, 1);
    assert!(run.stderr.starts_with("error: "), "{}", run.stderr);
    assert!(run.stdout.is_empty());

    let run = ws.run(&["ingest", arg(&clean), "--format", "docx"]);
    assert_eq!(run.code, 2, "{}", run.stderr);
    let run = ws.run(&["query", "aspirin", "--zoom", "enormous"]);
    assert_eq!(run.code, 2, "{}", run.stderr);
    let run = ws.run(&["frobnicate"]);
    assert_eq!(run.code, 2, "{}", run.stderr);
    let run = ws.run(&["facts"]);
    assert_eq!(run.code, 2, "{}", run.stderr);
    let run = ws.run(&["supersede", "not-a-ref", "--by", "ap:x@v1"]);
    assert_eq!(run.code, 2, "{}", run.stderr);
}

#[test]
fn markdown_ingest_is_chosen_by_extension() {
    let ws = Workspace::new();
    let md = "# Metformin and glycemic control\n\nDate: 2022-05-05\n\n## Results\n\nMetformin improved glycemic control in adults with type 2 diabetes.\n";
    let p = ws.write("study.md", md);
    let run = ws.run(&["--json", "ingest", arg(&p)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.json()["report"]["verdict"], "accepted");
    // Forcing ap-json on markdown text is a parse failure, not a verdict.
    let run = ws.run(&["ingest", arg(&p), "--format", "ap-json"]);
    assert_eq!(run.code, 1, "{}", run.stdout);
}

#[test]
fn json_output_is_pure() {
    let ws = Workspace::new();
    let r = ws.ingest("study.json", &aspirin_study(1, -0.1, 0.02));
    let d = ws.ingest("data.json", &dataset_study());
    let runs = [
        ws.run(&["--json", "query", "Does aspirin reduce stroke risk?"]),
        ws.run(&[
            "--json",
            "query",
            "Does aspirin reduce stroke risk?",
            "--zoom",
            "data",
        ]),
        ws.run(&["--json", "query", "Which volcano erupted in 1783?"]),
        ws.run(&["--json", "facts", "--subject", "aspirin"]),
        ws.run(&["--json", "digest"]),
        ws.run(&["--json", "stats", "ds:clinic"]),
        ws.run(&["--json", "supersede", &r, "--by", &d]),
    ];
    for run in &runs {
        assert_eq!(run.code, 0, "{}", run.stderr);
        let v: Value = run.json();
        assert!(v.is_object(), "{v}");
    }
    let answer = runs[0].json();
    assert_eq!(answer["refused"], false);
    assert!(answer["query_id"].as_str().unwrap().starts_with("q-"));
    let keys: Vec<&str> = answer
        .as_object()
        .unwrap()
        .keys()
        .map(String::as_str)
        .collect();
    for k in [
        "answer_summary",
        "answer_detail",
        "supporting_studies",
        "data_points",
        "confidence_score",
        "confidence_label",
        "warnings",
    ] {
        assert!(keys.contains(&k), "missing {k} in {keys:?}");
    }
    assert_eq!(runs[2].json()["refused"], true);
    assert_eq!(runs[3].json()["facts"][0]["relation"], "reduces_risk");
    assert_eq!(runs[4].json()["queries"], 3, "{}", runs[4].stdout);
    assert_eq!(
        runs[6].json(),
        json!({"superseded": r, "by": d, "changed": true})
    );

    let self_supersede = ws.run(&["--json", "supersede", &d, "--by", &d]);
    assert_eq!(self_supersede.code, 1);
    assert!(self_supersede.stdout.is_empty());
}

#[test]
fn supersede_then_query_refuses_withdrawn_evidence() {
    let ws = Workspace::new();
    let old = ws.ingest("old.json", &aspirin_study(1, -0.1, 0.02));
    let unrelated = ws.ingest("new.json", &dataset_study());
    let q = "Does aspirin reduce stroke risk?";
    let before = ws.run(&["--json", "query", q]).json();
    assert_eq!(before["refused"], false);

    let run = ws.run(&["supersede", &old, "--by", &unrelated]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.stdout, format!("superseded {old} by {unrelated}\n"));
    let again = ws.run(&["supersede", &old, "--by", &unrelated]);
    assert_eq!(again.stdout, format!("{old} was already superseded\n"));

    let after = ws.run(&["--json", "query", q]).json();
    assert_eq!(after["refused"], true, "{after}");
    assert_eq!(after["supporting_studies"], json!([]));
    let facts = ws.run(&["--json", "facts", "--subject", "aspirin"]).json();
    assert_eq!(facts["facts"], json!([]));
    let all = ws
        .run(&[
            "--json",
            "facts",
            "--subject",
            "aspirin",
            "--include-superseded",
        ])
        .json();
    assert_eq!(all["facts"][0]["superseded"], true);
}

#[test]
fn text_query_lists_citations_and_confidence() {
    let ws = Workspace::new();
    for (n, study) in science_corpus().iter().take(5).enumerate() {
        ws.ingest(&format!("s{n}.json"), study);
    }
    let run = ws.run(&["query", "Does aspirin reduce stroke risk?"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(
        run.stdout.contains("\nCitations:\n  [ap:"),
        "{}",
        run.stdout
    );
    assert!(run.stdout.contains("\nConfidence: "), "{}", run.stdout);
    assert!(run.stdout.contains("Query id: q-"), "{}", run.stdout);

    let refused = ws.run(&["query", "Which volcano erupted in 1783?"]);
    assert_eq!(refused.code, 0);
    assert!(!refused.stdout.contains("Citations:"), "{}", refused.stdout);
}

#[test]
fn export_writes_the_manuscript() {
    let ws = Workspace::new();
    let r = ws.ingest("study.json", &dataset_study());
    let pub_id = r.split('@').next().unwrap();
    let out = ws.path("export.md");
    let run = ws.run(&["export", pub_id, "-o", arg(&out)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(
        text.starts_with("# Blood pressure readings under low sodium diets\n"),
        "{text}"
    );
    assert!(text.contains("Systolic blood pressure fell under the low sodium diet"));

    let stdout = ws.run(&["export", pub_id, "--version", "1"]);
    assert_eq!(stdout.stdout, text);

    // The export is itself a valid submission.
    let other = Workspace::new();
    let p = other.write("export.md", &text);
    let run = other.run(&["ingest", arg(&p)]);
    assert!(
        run.code == 0 || run.code == 3,
        "{}{}",
        run.stdout,
        run.stderr
    );

    let run = ws.run(&["export", pub_id, "--version", "9"]);
    assert_eq!(run.code, 1);
    assert!(
        run.stderr.contains("unknown publication version"),
        "{}",
        run.stderr
    );
}

#[test]
fn stats_summarises_columns() {
    let ws = Workspace::new();
    ws.ingest("study.json", &dataset_study());
    let run = ws.run(&["stats", "ds:clinic"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(
        run.stdout.starts_with("clinic readings (3 rows)\n"),
        "{}",
        run.stdout
    );
    let v = ws.run(&["--json", "stats", "ds:clinic"]).json();
    assert_eq!(v["rows"], 3);
    let systolic = &v["columns"][2];
    let mean = systolic["mean"].as_f64().unwrap();
    assert!(
        (mean - (141.5 + 138.0 + 133.25) / 3.0).abs() < 1e-9,
        "{systolic}"
    );
    assert_eq!(systolic["min"], 133.25);
    assert_eq!(systolic["max"], 141.5);
    let run = ws.run(&["stats", "ds:none"]);
    assert_eq!(run.code, 1);
}

#[test]
fn digest_reports_activity_since_a_date() {
    let ws = Workspace::new();
    ws.ingest("study.json", &aspirin_study(1, -0.1, 0.02));
    ws.run(&["query", "Does aspirin reduce stroke risk?"]);
    let md = ws.run(&["digest"]);
    assert_eq!(md.code, 0, "{}", md.stderr);
    assert!(md.stdout.contains("- Queries: 1"), "{}", md.stdout);
    let future = ws
        .run(&["--json", "digest", "--since", "2999-01-01"])
        .json();
    assert_eq!(future["queries"], 0, "{future}");
    let bad = ws.run(&["digest", "--since", "last tuesday"]);
    assert_eq!(bad.code, 2);
}

#[test]
fn config_precedence_is_flag_then_env_then_file() {
    let ws = Workspace::new();
    let study = ws.write_json("s.json", &aspirin_study(1, -0.1, 0.02));
    let from_file = ws.path("from_file");
    let from_env = ws.path("from_env");
    let from_flag = ws.path("from_flag");
    let config = ws.write(
        "apub.toml",
        &format!("[store]\npath = {:?}\n", arg(&from_file)),
    );

    let run = |env: Option<&std::path::Path>, flag: Option<&std::path::Path>| {
        let mut cmd = apub();
        cmd.env("AP_CONFIG", &config);
        if let Some(e) = env {
            cmd.env("AP_STORE_PATH", e);
        }
        if let Some(f) = flag {
            cmd.arg("--store").arg(f);
        }
        let out = cmd.args(["ingest", arg(&study)]).output().unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let has_store =
        |p: &std::path::Path| p.is_dir() && std::fs::read_dir(p).unwrap().next().is_some();

    run(None, None);
    assert!(has_store(&from_file));
    run(Some(&from_env), None);
    assert!(has_store(&from_env));
    run(Some(&from_env), Some(&from_flag));
    assert!(has_store(&from_flag));

    let bad = ws.write("bad.toml", "[query]\ntop_k = \"many\"\n");
    let out = apub()
        .arg("--config")
        .arg(&bad)
        .args(["digest"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn http(addr: &str, request: &str) -> Option<String> {
    let mut s = TcpStream::connect(addr).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(10))).ok()?;
    s.write_all(request.as_bytes()).ok()?;
    let mut out = String::new();
    s.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn serve_answers_http_queries() {
    let ws = Workspace::new();
    ws.ingest("study.json", &aspirin_study(1, -0.1, 0.02));
    let addr = format!("127.0.0.1:{}", free_port());
    let mut child = apub()
        .arg("--store")
        .arg(ws.store())
        .args(["serve", "--addr", &addr])
        .spawn()
        .unwrap();
    let body = r#"{"question":"Does aspirin reduce stroke risk?"}"#;
    let request = format!(
        "POST /v1/query HTTP/1.1\r\nHost: test\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let deadline = Instant::now() + Duration::from_secs(20);
    let reply = loop {
        if let Some(r) = http(&addr, &request) {
            break r;
        }
        assert!(Instant::now() < deadline, "server never came up on {addr}");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.to_lowercase().contains("x-cache: miss"), "{reply}");
    let json_start = reply.find("\r\n\r\n").unwrap() + 4;
    let v: Value = serde_json::from_str(&reply[json_start..]).unwrap();
    assert_eq!(v["refused"], false, "{v}");
}
