mod common;

use apub_core::store::VersionRef;
use axum::http::{Method, StatusCode};
use chrono::Duration;
use common::fixtures::{aspirin_study, design_manuscript};
use common::*;
use serde_json::json;

const QUERY_FIELDS: [&str; 10] = [
    "answer_detail",
    "answer_summary",
    "confidence_label",
    "confidence_score",
    "data_points",
    "derivation",
    "query_id",
    "refused",
    "supporting_studies",
    "warnings",
];

fn ok(r: Result<(), String>) {
    if let Err(e) = r {
        panic!("{e}");
    }
}

fn demo_server() -> TestServer {
    let s = TestServer::new();
    s.ingest_markdown(&design_manuscript());
    for n in 0..3 {
        s.ingest(&aspirin_study(n, -0.1 - 0.01 * n as f64, 0.03));
    }
    s
}

#[tokio::test]
async fn query_success_matches_golden_and_schema() {
    let s = demo_server();
    let r = s.query("What is an Agentic Publication?", None).await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    assert_eq!(object_keys(&body), QUERY_FIELDS);
    assert!(!body["refused"].as_bool().unwrap());
    assert!(!body["supporting_studies"].as_array().unwrap().is_empty());
    for study in body["supporting_studies"].as_array().unwrap() {
        assert_eq!(
            object_keys(study),
            ["chunk_ids", "doi", "publication_id", "version"]
        );
    }
    ok(golden("query_ok", &r, &["x-cache"]));

    let headline = s
        .query("What is an Agentic Publication?", Some("headline"))
        .await
        .json();
    assert_eq!(headline["answer_summary"], headline["answer_detail"]);
    assert_eq!(headline["answer_summary"], body["answer_summary"]);
}

#[tokio::test]
async fn data_zoom_and_refusal_goldens() {
    let s = demo_server();
    let data = s
        .query(
            "What is the pooled effect of aspirin on stroke?",
            Some("data"),
        )
        .await;
    assert_eq!(data.status, StatusCode::OK);
    let points = &data.json()["data_points"];
    assert_eq!(points["effects"].as_array().unwrap().len(), 3);
    ok(golden("query_data", &data, &["x-cache"]));

    let refused = s
        .query("What is the airspeed of an unladen swallow?", None)
        .await;
    assert_eq!(refused.status, StatusCode::OK);
    let body = refused.json();
    assert_eq!(body["refused"], true);
    assert_eq!(body["confidence_label"], "low");
    assert_eq!(object_keys(&body), QUERY_FIELDS);
    ok(golden("query_refused", &refused, &["x-cache"]));
}

#[tokio::test]
async fn query_errors() {
    let s = demo_server();
    let empty = s.query("   ", None).await;
    assert_eq!(empty.status, StatusCode::BAD_REQUEST);
    ok(golden("query_empty", &empty, &[]));
    let zoom = s.query("What is it?", Some("panoramic")).await;
    assert_eq!(zoom.status, StatusCode::BAD_REQUEST);
    ok(golden("query_unknown_zoom", &zoom, &[]));
    let bad = s
        .call(
            Method::POST,
            "/v1/query",
            &[("content-type", "application/json")],
            Some(b"{not json".to_vec()),
        )
        .await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    assert_eq!(bad.json()["error"]["code"], "malformed_body");
    assert_eq!(s.query_events(), 0, "rejected requests log nothing");
}

#[tokio::test]
async fn facts_endpoint() {
    let s = TestServer::new();
    for doc in compound_studies() {
        s.ingest(&doc);
    }
    let r = s
        .get("/v1/facts?subject=CompoundX&relation=affects&object=DiseaseY")
        .await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    assert_eq!(object_keys(&body), ["facts", "synthesis", "warnings"]);
    assert_eq!(body["facts"].as_array().unwrap().len(), 2);
    assert_eq!(body["synthesis"].as_array().unwrap().len(), 1);
    assert_eq!(body["facts"][0]["synthesis"]["n_studies"], 2);
    ok(golden("facts_ok", &r, &[]));

    let unknown = s.get("/v1/facts?subject=unknown-entity").await;
    assert_eq!(unknown.status, StatusCode::OK);
    assert_eq!(
        unknown.json()["warnings"],
        json!(["unknown entity: unknown-entity"])
    );
    ok(golden("facts_unknown_entity", &unknown, &[]));

    let none = s.get("/v1/facts").await;
    assert_eq!(none.status, StatusCode::BAD_REQUEST);
    ok(golden("facts_no_pattern", &none, &[]));
    let blank = s.get("/v1/facts?subject=%20%20").await;
    assert_eq!(blank.status, StatusCode::BAD_REQUEST);
    let bad_flag = s
        .get("/v1/facts?subject=CompoundX&include_superseded=maybe")
        .await;
    assert_eq!(bad_flag.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn data_endpoint() {
    let s = TestServer::new();
    let r = s.ingest(&dataset_study());
    let snap = s.state.engine.snapshot();
    let id = snap.datasets_for(&r)[0].dataset_id.clone();

    let json_reply = s.get(&format!("/v1/data/{id}")).await;
    assert_eq!(json_reply.status, StatusCode::OK);
    ok(golden("data_json", &json_reply, &["content-type"]));
    let csv_reply = s.get(&format!("/v1/data/{id}?format=csv")).await;
    assert_eq!(csv_reply.status, StatusCode::OK);
    assert!(csv_reply.text().contains("\"Lagos, Ikeja\",1,141.5\r\n"));
    ok(golden("data_csv", &csv_reply, &["content-type"]));

    // the same cells through both formats
    let body = json_reply.json();
    let mut reader = csv::Reader::from_reader(csv_reply.body.as_slice());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(json!(header), body["columns"]);
    let rows: Vec<Vec<String>> = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    assert_eq!(json!(rows), body["rows"]);

    let missing = s.get("/v1/data/ds:nothing").await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
    ok(golden("data_not_found", &missing, &[]));
    let fmt = s.get(&format!("/v1/data/{id}?format=xlsx")).await;
    assert_eq!(fmt.status, StatusCode::BAD_REQUEST);
    ok(golden("data_bad_format", &fmt, &[]));

    let mut v2 = dataset_study();
    v2["sections"][1]["text"] =
        "Revised readings confirmed the systolic blood pressure drop.".into();
    v2["pub_id"] = r.pub_id.clone().into();
    let new = s.ingest(&v2);
    assert!(s.state.engine.supersede(&r, &new, "editor").unwrap());
    let old_json = s.get(&format!("/v1/data/{id}")).await.json();
    assert_eq!(old_json["superseded"], true);
    let old_csv = s.get(&format!("/v1/data/{id}?format=csv")).await.text();
    assert!(
        old_csv.starts_with("# superseded\r\nsite,week,systolic\r\n"),
        "{old_csv}"
    );
}

#[tokio::test]
async fn submit_endpoint() {
    let s = TestServer::with(
        AuthMode {
            enabled: true,
            keyed_reads: false,
        },
        |_| {},
    );
    let key = [("x-api-key", CONTRIBUTOR_KEY)];
    let clean = s
        .post_json("/v1/submit", &key, &aspirin_study(0, -0.1, 0.03))
        .await;
    assert_eq!(clean.status, StatusCode::CREATED);
    assert_eq!(clean.json()["report"]["verdict"], "accepted");
    ok(golden("submit_accepted", &clean, &[]));

    let mut bad_ci = aspirin_study(1, 0.05, 0.02);
    bad_ci["claims"] =
        json!(["CLAIM: aspirin | reduces_risk | stroke | effect=0.05 | se=0.02 | ci95=0.2,0.4"]);
    let flagged = s.post_json("/v1/submit", &key, &bad_ci).await;
    assert_eq!(flagged.status, StatusCode::CREATED);
    let body = flagged.json();
    assert_eq!(body["report"]["verdict"], "accepted_flagged");
    assert!(body["report"]["findings"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f["gate"] == "statistics"));
    ok(golden("submit_flagged", &flagged, &[]));

    let before = s.state.engine.snapshot().publication_count();
    let mut untitled = aspirin_study(2, -0.1, 0.03);
    untitled["title"] = "".into();
    let rejected = s.post_json("/v1/submit", &key, &untitled).await;
    assert_eq!(rejected.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(rejected.json()["report"]["findings"][0]["gate"], "schema");
    ok(golden("submit_rejected", &rejected, &[]));
    assert_eq!(s.state.engine.snapshot().publication_count(), before);

    let no_key = s
        .post_json("/v1/submit", &[], &aspirin_study(3, -0.1, 0.03))
        .await;
    assert_eq!(no_key.status, StatusCode::UNAUTHORIZED);
    ok(golden("submit_unauthorized", &no_key, &[]));
    let reader = s
        .post_json(
            "/v1/submit",
            &[("x-api-key", READER_KEY)],
            &aspirin_study(3, -0.1, 0.03),
        )
        .await;
    assert_eq!(reader.status, StatusCode::FORBIDDEN);
    ok(golden("submit_forbidden", &reader, &[]));
    let malformed = s
        .call(Method::POST, "/v1/submit", &key, Some(b"[1, 2".to_vec()))
        .await;
    assert_eq!(malformed.status, StatusCode::BAD_REQUEST);
    ok(golden("submit_malformed", &malformed, &[]));

    let md = "# Exercise and blood pressure\n\nDate: 2023-03-03\n\n## Results\n\nBrisk walking lowered resting blood pressure over eight weeks.\n";
    let via_md = s
        .call(
            Method::POST,
            "/v1/submit",
            &[("x-api-key", ADMIN_KEY), ("content-type", "text/markdown")],
            Some(md.as_bytes().to_vec()),
        )
        .await;
    assert_eq!(via_md.status, StatusCode::CREATED);
    let id = via_md.json()["pub_id"].as_str().unwrap().to_string();
    let events = s.state.engine.store().events();
    let commit = events
        .iter()
        .find(|e| e.subject_id == format!("{id}@v1"))
        .unwrap();
    assert_eq!(
        commit.actor, "editor",
        "the key's name is recorded as the actor"
    );
}

#[tokio::test]
async fn feedback_endpoint() {
    let s = demo_server();
    let qid = s
        .query("What is an Agentic Publication?", None)
        .await
        .json()["query_id"]
        .as_str()
        .unwrap()
        .to_string();
    let r = s
        .post_json(
            "/v1/feedback",
            &[],
            &json!({"query_id": qid, "rating": "down", "flag_reason": "missing the key caveat"}),
        )
        .await;
    assert_eq!(r.status, StatusCode::NO_CONTENT);
    assert!(r.body.is_empty());
    ok(golden("feedback_ok", &r, &[]));
    let fb = s.state.engine.store().feedback();
    assert_eq!(fb.len(), 1);
    assert_eq!(fb[0].flag_reason.as_deref(), Some("missing the key caveat"));

    let unknown = s
        .post_json(
            "/v1/feedback",
            &[],
            &json!({"query_id": "q-never-issued", "rating": "up"}),
        )
        .await;
    assert_eq!(unknown.status, StatusCode::NOT_FOUND);
    ok(golden("feedback_unknown_query", &unknown, &[]));
    let sideways = s
        .post_json(
            "/v1/feedback",
            &[],
            &json!({"query_id": qid, "rating": "sideways"}),
        )
        .await;
    assert_eq!(sideways.status, StatusCode::BAD_REQUEST);
    ok(golden("feedback_bad_rating", &sideways, &[]));
    assert_eq!(s.state.engine.store().feedback().len(), 1);
}

#[tokio::test]
async fn publications_endpoint() {
    let s = TestServer::new();
    let v1 = s.ingest(&aspirin_study(0, -0.1, 0.03));
    let r = s.get(&format!("/v1/publications/{}", v1.pub_id)).await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    assert_eq!(body["status"], "validated");
    assert_eq!(body["events"].as_array().unwrap().len(), 1);
    assert_eq!(body["events"][0]["action"], "commit");
    ok(golden("publication_ok", &r, &[]));

    let other = s.ingest(&aspirin_study(1, -0.12, 0.03));
    assert!(s.state.engine.supersede(&v1, &other, "editor").unwrap());
    let after = s.get(&format!("/v1/publications/{}", v1.pub_id)).await;
    let body = after.json();
    assert_eq!(body["status"], "superseded");
    assert_eq!(body["superseded_by"], other.to_string());
    ok(golden("publication_superseded", &after, &[]));

    let missing = s.get("/v1/publications/ap:000000000000").await;
    assert_eq!(missing.status, StatusCode::NOT_FOUND);
    ok(golden("publication_not_found", &missing, &[]));
    let bad_version = s
        .get(&format!("/v1/publications/{}?version=9", v1.pub_id))
        .await;
    assert_eq!(bad_version.status, StatusCode::NOT_FOUND);

    let mut doi = aspirin_study(2, -0.1, 0.03);
    doi["pub_id"] = "10.5555/apub.2025.001".into();
    s.ingest(&doi);
    let by_doi = s
        .get("/v1/publications/10.5555/apub.2025.001?version=1")
        .await;
    assert_eq!(by_doi.status, StatusCode::OK);
    assert_eq!(by_doi.json()["doi"], "10.5555/apub.2025.001");
}

#[tokio::test]
async fn cache_hits_then_flushes_on_commit_and_expires() {
    let s = demo_server();
    let q = "Does aspirin reduce stroke?";
    let first = s.query(q, None).await;
    assert_eq!(first.header("x-cache"), Some("miss"));
    let second = s.query("  does ASPIRIN reduce   stroke? ", None).await;
    assert_eq!(second.header("x-cache"), Some("hit"));
    let (a, b) = (first.json(), second.json());
    assert_ne!(
        a["query_id"], b["query_id"],
        "every response gets its own query id"
    );
    assert_eq!(scrub(a.clone()), scrub(b));

    // a commit that changes the answer must not be hidden by the cache
    s.ingest(&aspirin_study(9, 0.3, 0.02));
    let third = s.query(q, None).await;
    assert_eq!(third.header("x-cache"), Some("miss"));
    let c = third.json();
    assert!(c["warnings"]
        .as_array()
        .unwrap()
        .iter()
        .any(|w| w == "Conflicting evidence present"));
    assert_ne!(scrub(c), scrub(a));

    s.clock.advance(Duration::seconds(301));
    assert_eq!(
        s.query(q, None).await.header("x-cache"),
        Some("miss"),
        "expired after the TTL"
    );
    assert_eq!(s.query(q, None).await.header("x-cache"), Some("hit"));
    assert_eq!(
        s.query(q, Some("detailed")).await.header("x-cache"),
        Some("miss"),
        "zoom is part of the key"
    );
}

#[tokio::test]
async fn every_answered_query_is_logged_once() {
    let s = demo_server();
    let mut ok_count = 0;
    for q in [
        "What is an Agentic Publication?",
        "What is an Agentic Publication?",
        "Why do cats purr?",
        "",
        "aspirin stroke",
    ] {
        let r = s.query(q, None).await;
        if r.status.is_success() {
            ok_count += 1;
        }
    }
    assert_eq!(ok_count, 4);
    assert_eq!(s.query_events(), ok_count);
    let events = s.state.engine.store().events();
    let logs: Vec<apub_core::engine::QueryLog> = events
        .iter()
        .filter(|e| e.action == apub_core::store::EventAction::Query)
        .map(|e| serde_json::from_str(&e.details).unwrap())
        .collect();
    assert_eq!(logs.iter().filter(|l| l.cache_hit).count(), 1);
    assert!(logs.iter().any(|l| l.refused));
}

#[tokio::test]
async fn auth_matrix() {
    let open = demo_server();
    assert_eq!(
        open.query("aspirin stroke", None).await.status,
        StatusCode::OK
    );
    assert_eq!(
        open.post_json("/v1/submit", &[], &aspirin_study(5, -0.1, 0.03))
            .await
            .status,
        StatusCode::CREATED
    );

    let keyed = TestServer::with(
        AuthMode {
            enabled: true,
            keyed_reads: false,
        },
        |_| {},
    );
    assert_eq!(
        keyed.query("aspirin stroke", None).await.status,
        StatusCode::OK,
        "reads stay open by default"
    );
    assert_eq!(
        keyed
            .post_json("/v1/submit", &[], &aspirin_study(5, -0.1, 0.03))
            .await
            .status,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        keyed
            .post_json(
                "/v1/submit",
                &[("x-api-key", "forged")],
                &aspirin_study(5, -0.1, 0.03)
            )
            .await
            .status,
        StatusCode::UNAUTHORIZED
    );

    let locked = TestServer::with(
        AuthMode {
            enabled: true,
            keyed_reads: true,
        },
        |_| {},
    );
    let r = locked.query("aspirin stroke", None).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    ok(golden("query_unauthorized", &r, &[]));
    assert_eq!(
        locked.get("/v1/facts?subject=aspirin").await.status,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        locked.get("/v1/publications/x").await.status,
        StatusCode::UNAUTHORIZED
    );
    let with_header = locked
        .post_json(
            "/v1/query",
            &[("x-api-key", READER_KEY)],
            &json!({"question": "aspirin stroke"}),
        )
        .await;
    assert_eq!(with_header.status, StatusCode::OK);
    let with_body = locked
        .post_json(
            "/v1/query",
            &[],
            &json!({"question": "aspirin stroke", "api_key": READER_KEY}),
        )
        .await;
    assert_eq!(with_body.status, StatusCode::OK);
    let facts = locked
        .call(
            Method::GET,
            "/v1/facts?subject=aspirin",
            &[("x-api-key", READER_KEY)],
            None,
        )
        .await;
    assert_eq!(facts.status, StatusCode::OK);
}

#[tokio::test]
async fn rate_limit_returns_429() {
    let s = TestServer::with(AuthMode::default(), |st| {
        st.auth.rate_per_s = 0.001;
        st.auth.burst = 2.0;
    });
    assert_eq!(s.get("/v1/facts?subject=x").await.status, StatusCode::OK);
    assert_eq!(s.get("/v1/facts?subject=x").await.status, StatusCode::OK);
    let limited = s.get("/v1/facts?subject=x").await;
    assert_eq!(limited.status, StatusCode::TOO_MANY_REQUESTS);
    ok(golden("rate_limited", &limited, &[]));
    let other_key = s
        .call(
            Method::GET,
            "/v1/facts?subject=x",
            &[("x-api-key", READER_KEY)],
            None,
        )
        .await;
    assert_eq!(other_key.status, StatusCode::OK, "buckets are per caller");
}

#[tokio::test]
async fn unknown_routes_and_methods() {
    let s = TestServer::new();
    let r = s.get("/v1/nothing").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    ok(golden("route_not_found", &r, &[]));
    let m = s.get("/v1/query").await;
    assert_eq!(m.status, StatusCode::METHOD_NOT_ALLOWED);
    ok(golden("method_not_allowed", &m, &[]));
}

#[tokio::test]
async fn concurrent_queries_during_submissions_see_consistent_snapshots() {
    let s = std::sync::Arc::new(demo_server());
    let mut tasks = Vec::new();
    for i in 0..8 {
        let s = s.clone();
        tasks.push(tokio::spawn(async move {
            if i % 4 == 0 {
                let r = s
                    .post_json("/v1/submit", &[], &aspirin_study(20 + i, -0.1, 0.03))
                    .await;
                assert_eq!(r.status, StatusCode::CREATED);
            } else {
                let r = s
                    .query("Does aspirin reduce stroke?", Some("detailed"))
                    .await;
                assert_eq!(r.status, StatusCode::OK);
                let body = r.json();
                let snap = s.state.engine.snapshot();
                for study in body["supporting_studies"].as_array().unwrap() {
                    let r = VersionRef::new(
                        study["publication_id"].as_str().unwrap(),
                        study["version"].as_u64().unwrap() as u32,
                    );
                    assert!(snap.publication(&r).is_some());
                }
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    assert_eq!(s.state.engine.snapshot().publication_count(), 3 + 1 + 2);
}
