#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use apub_core::clock::ManualClock;
use apub_core::config::Settings;
use apub_core::engine::open_from_settings;
use apub_core::ingest::{parse_submission, Format};
use apub_server::{router, AppState};
use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

#[path = "../../../core/tests/common/mod.rs"]
pub mod fixtures;

pub const READER_KEY: &str = "reader-key-0001";
pub const CONTRIBUTOR_KEY: &str = "contributor-key-0002";
pub const ADMIN_KEY: &str = "admin-key-0003";

pub struct TestServer {
    pub dir: TempDir,
    pub clock: Arc<ManualClock>,
    pub state: Arc<AppState>,
    pub app: Router,
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(name).and_then(|v| v.to_str().ok())
    }
}

/// Auth options for a test server.
#[derive(Debug, Clone, Copy, Default)]
pub struct AuthMode {
    pub enabled: bool,
    pub keyed_reads: bool,
}

impl TestServer {
    pub fn new() -> TestServer {
        Self::with(AuthMode::default(), |_| {})
    }

    pub fn with(auth: AuthMode, tweak: impl FnOnce(&mut Settings)) -> TestServer {
        let dir = tempfile::tempdir().unwrap();
        let keys = dir.path().join("keys.toml");
        std::fs::write(
            &keys,
            format!(
                "[[keys]]\nkey = \"{READER_KEY}\"\nrole = \"reader\"\n\n\
                 [[keys]]\nkey = \"{CONTRIBUTOR_KEY}\"\nrole = \"contributor\"\nname = \"lab-agent\"\n\n\
                 [[keys]]\nkey = \"{ADMIN_KEY}\"\nrole = \"admin\"\nname = \"editor\"\n"
            ),
        )
        .unwrap();
        let mut settings = Settings::default();
        settings.store.path = dir.path().join("store");
        settings.auth.enabled = auth.enabled;
        settings.auth.require_key_for_reads = auth.keyed_reads;
        settings.auth.keys_file = Some(keys);
        // generous limits unless a test is about rate limiting
        settings.auth.rate_per_s = 10_000.0;
        settings.auth.burst = 10_000.0;
        tweak(&mut settings);
        let clock = Arc::new(ManualClock::new(
            Utc.with_ymd_and_hms(2025, 3, 1, 9, 0, 0).unwrap(),
        ));
        let engine = Arc::new(open_from_settings(&settings, Some(clock.clone())).unwrap());
        let state = Arc::new(AppState::new(engine, &settings).unwrap());
        let app = router(state.clone());
        TestServer {
            dir,
            clock,
            state,
            app,
        }
    }

    pub async fn call(
        &self,
        method: Method,
        uri: &str,
        headers: &[(&str, &str)],
        body: Option<Vec<u8>>,
    ) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let req = req.body(body.map_or_else(Body::empty, Body::from)).unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = resp
            .into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec();
        Reply {
            status,
            headers,
            body,
        }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.call(Method::GET, uri, &[], None).await
    }

    pub async fn post_json(&self, uri: &str, headers: &[(&str, &str)], body: &Value) -> Reply {
        let mut h = vec![("content-type", "application/json")];
        h.extend_from_slice(headers);
        self.call(Method::POST, uri, &h, Some(body.to_string().into_bytes()))
            .await
    }

    pub async fn query(&self, question: &str, zoom: Option<&str>) -> Reply {
        let mut body = json!({"question": question});
        if let Some(z) = zoom {
            body["zoom"] = z.into();
        }
        self.post_json("/v1/query", &[], &body).await
    }

    /// Commits directly through the engine, bypassing HTTP.
    pub fn ingest(&self, doc: &Value) -> apub_core::store::VersionRef {
        let parsed = parse_submission(doc.to_string().as_bytes(), Format::ApJson).unwrap();
        let out = self.state.engine.ingest(&parsed, "fixture").unwrap();
        out.committed
            .unwrap_or_else(|| panic!("fixture rejected: {:?}", out.report.findings))
    }

    pub fn ingest_markdown(&self, text: &str) -> apub_core::store::VersionRef {
        let parsed = parse_submission(text.as_bytes(), Format::Markdown).unwrap();
        self.state
            .engine
            .ingest(&parsed, "fixture")
            .unwrap()
            .committed
            .unwrap()
    }

    pub fn query_events(&self) -> usize {
        self.state
            .engine
            .store()
            .events()
            .iter()
            .filter(|e| e.action == apub_core::store::EventAction::Query)
            .count()
    }
}

/// A study with a dataset whose cells need CSV quoting.
pub fn dataset_study() -> Value {
    json!({
        "title": "Blood pressure readings under low sodium diets",
        "authors": [{"name": "R. Okafor", "orcid": "0000-0002-1825-0097"}],
        "date": "2024-06-01",
        "keywords": ["sodium", "blood pressure"],
        "sections": [
            {"label": "methods", "text": "Adults followed a low sodium diet for twelve weeks with weekly clinic readings."},
            {"label": "results", "text": "Systolic blood pressure fell under the low sodium diet compared with usual intake."}
        ],
        "claims": ["CLAIM: low sodium diet | lowers | systolic blood pressure | effect=-4.2 | se=1.1"],
        "datasets": [{
            "name": "clinic readings",
            "columns": [{"name": "site", "kind": "text"}, {"name": "week", "kind": "numeric"}, {"name": "systolic", "kind": "numeric"}],
            "rows": [["Lagos, Ikeja", "1", "141.5"], ["Accra", "1", "138"], ["Quote \"A\" clinic", "12", "133.25"]]
        }]
    })
}

/// The fact-pattern fixture: CompoundX affects DiseaseY in two studies.
pub fn compound_studies() -> Vec<Value> {
    (0..2)
        .map(|n| {
            let est = -0.3 - 0.1 * n as f64;
            json!({
                "title": format!("CompoundX in DiseaseY, trial {n}"),
                "date": format!("202{n}-02-02"),
                "sections": [
                    {"label": "results", "text": format!("CompoundX lowered DiseaseY activity scores in trial {n}.")}
                ],
                "claims": [format!("CLAIM: CompoundX | affects | DiseaseY | effect={est} | se=0.1")]
            })
        })
        .collect()
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Replaces per-request identifiers so bodies can be compared across runs.
pub fn scrub(mut v: Value) -> Value {
    fn walk(v: &mut Value) {
        match v {
            Value::Object(map) => {
                for (k, x) in map.iter_mut() {
                    if k == "query_id" && x.is_string() {
                        *x = Value::String("<query_id>".into());
                    } else {
                        walk(x);
                    }
                }
            }
            Value::Array(items) => items.iter_mut().for_each(walk),
            _ => {}
        }
    }
    walk(&mut v);
    v
}

/// Compares status, the listed headers and the scrubbed body with `tests/golden/<name>`.
/// Set `UPDATE_GOLDEN=1` to rewrite the file instead.
pub fn golden(name: &str, reply: &Reply, headers: &[&str]) -> Result<(), String> {
    let content_type = reply.header("content-type").unwrap_or("");
    let body = if reply.body.is_empty() {
        Value::Null
    } else if content_type.starts_with("application/json") {
        scrub(reply.json())
    } else {
        Value::String(reply.text())
    };
    let mut hs = serde_json::Map::new();
    for h in headers {
        hs.insert(
            h.to_string(),
            reply
                .header(h)
                .map_or(Value::Null, |v| Value::String(v.into())),
        );
    }
    let actual = json!({"status": reply.status.as_u16(), "headers": hs, "body": body});
    let path = golden_dir().join(format!("{name}.json"));
    let rendered = serde_json::to_string_pretty(&actual).unwrap() + "\n";
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, &rendered).unwrap();
        return Ok(());
    }
    let expected =
        std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let expected: Value =
        serde_json::from_str(&expected).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!(
            "{name}: response differs from golden file\nexpected: {expected:#}\nactual: {actual:#}"
        ))
    }
}

pub fn object_keys(v: &Value) -> Vec<String> {
    let mut keys: Vec<String> = v
        .as_object()
        .map(|m| m.keys().cloned().collect())
        .unwrap_or_default();
    keys.sort();
    keys
}
