#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

#[path = "../../../core/tests/common/mod.rs"]
pub mod fixtures;

/// A scratch directory with its own store, plus helpers to run the binary against it.
pub struct Workspace {
    pub dir: TempDir,
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout)
            .unwrap_or_else(|e| panic!("stdout is not JSON ({e}):\n{}", self.stdout))
    }
}

impl From<Output> for Run {
    fn from(o: Output) -> Self {
        Run {
            code: o.status.code().unwrap_or(-1),
            stdout: String::from_utf8(o.stdout).unwrap(),
            stderr: String::from_utf8(o.stderr).unwrap(),
        }
    }
}

/// The binary with every `AP_*` variable cleared so the host environment cannot leak in.
pub fn apub() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_apub"));
    for (k, _) in std::env::vars() {
        if k.starts_with("AP_") {
            cmd.env_remove(k);
        }
    }
    cmd.env_remove("RUST_LOG");
    cmd
}

impl Workspace {
    pub fn new() -> Workspace {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn store(&self) -> PathBuf {
        self.path("store")
    }

    pub fn run(&self, args: &[&str]) -> Run {
        let store = self.store();
        let mut cmd = apub();
        cmd.arg("--store").arg(&store).args(args);
        cmd.output().unwrap().into()
    }

    pub fn write(&self, name: &str, contents: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    pub fn write_json(&self, name: &str, value: &Value) -> PathBuf {
        self.write(name, &value.to_string())
    }

    /// Ingests `value` and returns `pub_id@vN`, failing on anything but a clean accept.
    pub fn ingest(&self, name: &str, value: &Value) -> String {
        let p = self.write_json(name, value);
        let run = self.run(&["--json", "ingest", p.to_str().unwrap()]);
        assert_eq!(run.code, 0, "{}{}", run.stdout, run.stderr);
        let v = run.json();
        format!("{}@v{}", v["pub_id"].as_str().unwrap(), v["version"])
    }
}

pub fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A study carrying one dataset with a fixed identifier and cells that need CSV quoting.
pub fn dataset_study() -> Value {
    json!({
        "title": "Blood pressure readings under low sodium diets",
        "authors": [{"name": "R. Okafor"}],
        "date": "2024-06-01",
        "keywords": ["sodium", "blood pressure"],
        "sections": [
            {"label": "methods", "text": "Adults followed a low sodium diet for twelve weeks with weekly clinic readings."},
            {"label": "results", "text": "Systolic blood pressure fell under the low sodium diet compared with usual intake."}
        ],
        "claims": ["CLAIM: low sodium diet | lowers | systolic blood pressure | effect=-4.2 | se=1.1"],
        "datasets": [{
            "dataset_id": "ds:clinic",
            "name": "clinic readings",
            "columns": [{"name": "site", "kind": "text"}, {"name": "week", "kind": "numeric"}, {"name": "systolic", "kind": "numeric"}],
            "rows": [["Lagos, Ikeja", "1", "141.5"], ["Accra", "1", "138"], ["Quote \"A\" clinic", "12", "133.25"]]
        }]
    })
}
