#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use apub_core::clock::ManualClock;
use apub_core::engine::{Engine, EngineSettings};
use apub_core::ingest::{parse_submission, Format, ParsedDocument};
use apub_core::providers::{Composer, Embedder, MockComposer, MockEmbedder};
use apub_core::store::{Store, StoreOptions};
use chrono::{TimeZone, Utc};
use regex::Regex;
use tempfile::TempDir;

pub struct Harness {
    pub dir: TempDir,
    pub engine: Engine,
}

pub fn clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(
        Utc.with_ymd_and_hms(2025, 3, 1, 9, 0, 0).unwrap(),
    ))
}

pub fn open_at(path: &Path, composer: Arc<dyn Composer>) -> Engine {
    let store = Store::open_with(
        path,
        StoreOptions {
            recover: false,
            clock: clock(),
        },
    )
    .unwrap();
    let embedder: Arc<dyn Embedder> = Arc::new(MockEmbedder::default());
    Engine::open(store, embedder, composer, EngineSettings::default()).unwrap()
}

pub fn harness() -> Harness {
    harness_with(Arc::new(MockComposer))
}

pub fn harness_with(composer: Arc<dyn Composer>) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let engine = open_at(dir.path(), composer);
    Harness { dir, engine }
}

pub fn markdown(text: &str) -> ParsedDocument {
    parse_submission(text.as_bytes(), Format::Markdown).unwrap()
}

pub fn ap_json(value: &serde_json::Value) -> ParsedDocument {
    parse_submission(value.to_string().as_bytes(), Format::ApJson).unwrap()
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// The system design manuscript shipped at the workspace root, converted to the markdown
/// submission format: its plain-text section titles become level-2 headings.
pub fn design_manuscript() -> String {
    let path = workspace_root().join("paper.md");
    let raw = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let numbered = Regex::new(r"^\d+(\.\d+)*\.?\s+[A-Z][^.]{0,90}$").unwrap();
    let mut lines = raw
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty());
    let title = lines
        .next()
        .expect("manuscript has a title line")
        .trim()
        .to_string();
    let mut out = format!("# {title}\n\nDate: 2025-01-15\nKeywords: publishing; retrieval\n\n");
    let mut in_body = false;
    for line in raw.lines().map(str::trim_end) {
        let t = line.trim();
        let heading = matches!(t, "Abstract" | "Keywords" | "Highlights" | "References")
            || numbered.is_match(t);
        if heading {
            in_body = true;
            out.push_str(&format!("\n## {t}\n\n"));
        } else if in_body {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

/// One study reporting `effect` (se `se`) of aspirin on stroke risk, written in a
/// clinical vocabulary so its chunks never resemble the off-topic questions.
pub fn aspirin_study(n: usize, estimate: f64, se: f64) -> serde_json::Value {
    let lo = estimate - 1.96 * se;
    let hi = estimate + 1.96 * se;
    serde_json::json!({
        "title": format!("Aspirin and stroke risk in cohort {n}"),
        "authors": [{"name": format!("Investigator {n}")}],
        "date": format!("{}-0{}-15", 2015 + n % 8, 1 + n % 9),
        "keywords": ["aspirin", "stroke"],
        "references": ["10.1000/aspirin.base"],
        "sections": [
            {"label": "abstract", "text": format!("Cohort {n} followed adults taking daily aspirin for ischemic stroke prevention.")},
            {"label": "results", "text": format!("Daily aspirin reduced stroke risk in cohort {n} with a pooled hazard shift of {estimate:.3}.")}
        ],
        "claims": [format!("CLAIM: aspirin | reduces_risk | stroke | effect={estimate} | se={se} | ci95={lo:.4},{hi:.4}")]
    })
}

/// Wraps the mock composer and appends one sentence citing a chunk that does not exist.
pub struct LyingComposer {
    pub fake_marker: String,
}

impl Composer for LyingComposer {
    fn model_id(&self) -> &str {
        "lying-stub"
    }

    fn compose(
        &self,
        request: &apub_core::providers::ComposeRequest<'_>,
    ) -> Result<String, apub_core::providers::ProviderError> {
        let draft = MockComposer.compose(request)?;
        Ok(format!(
            "{draft} This result was confirmed independently [{}].",
            self.fake_marker
        ))
    }
}

/// Cites a real passage for a sentence about something else entirely.
pub struct OffTopicComposer;

impl Composer for OffTopicComposer {
    fn model_id(&self) -> &str {
        "off-topic-stub"
    }

    fn compose(
        &self,
        request: &apub_core::providers::ComposeRequest<'_>,
    ) -> Result<String, apub_core::providers::ProviderError> {
        let draft = MockComposer.compose(request)?;
        let id = &request.passages[0].chunk_id;
        Ok(format!(
            "{draft} Volcanic glaciers migrate southward each winter [{id}]."
        ))
    }
}

pub struct FailingComposer;

impl Composer for FailingComposer {
    fn model_id(&self) -> &str {
        "failing-stub"
    }

    fn compose(
        &self,
        _request: &apub_core::providers::ComposeRequest<'_>,
    ) -> Result<String, apub_core::providers::ProviderError> {
        Err(apub_core::providers::ProviderError::Unavailable(
            "stub is down".into(),
        ))
    }
}

pub const INTERVENTIONS: [&str; 5] = [
    "aspirin",
    "statin therapy",
    "metformin",
    "cobalamin supplementation",
    "aerobic exercise",
];
pub const OUTCOMES: [&str; 5] = [
    "stroke",
    "myocardial infarction",
    "glycemic control",
    "peripheral neuropathy",
    "blood pressure",
];

/// 25 clinical studies, one per intervention and outcome pair.
pub fn science_corpus() -> Vec<serde_json::Value> {
    let mut out = Vec::new();
    for (i, intervention) in INTERVENTIONS.iter().enumerate() {
        for (j, outcome) in OUTCOMES.iter().enumerate() {
            let n = i * OUTCOMES.len() + j;
            let estimate = -0.05 - 0.01 * (n % 7) as f64;
            let se = 0.02;
            let cohort = 120 + 37 * n;
            let abstract_text = format!(
                "We evaluated {intervention} and {outcome} in {cohort} adults followed for {} years.",
                2 + n % 5
            );
            let results = format!(
                "Participants receiving {intervention} showed improved {outcome} compared with matched controls. \
                 The adjusted hazard ratio favoured {intervention} across prespecified subgroups."
            );
            let methods = format!(
                "Randomised allocation to {intervention} or placebo, with {outcome} assessed by blinded clinicians."
            );
            out.push(serde_json::json!({
                "title": format!("{intervention} and {outcome}: a randomised trial"),
                "authors": [{"name": format!("Trialist {n}")}],
                "date": format!("{}-05-01", 2012 + n % 10),
                "keywords": [intervention, outcome],
                "sections": [
                    {"label": "abstract", "text": abstract_text},
                    {"label": "methods", "text": methods},
                    {"label": "results", "text": results}
                ],
                "claims": [format!(
                    "CLAIM: {intervention} | improves | {outcome} | effect={estimate} | se={se} | ci95={:.4},{:.4}",
                    estimate - 1.96 * se,
                    estimate + 1.96 * se
                )]
            }));
        }
    }
    out
}

pub fn on_corpus_questions() -> Vec<String> {
    let mut out = Vec::new();
    for i in INTERVENTIONS {
        for o in OUTCOMES {
            out.push(format!("Does {i} affect {o}?"));
            out.push(format!(
                "What happened to {o} in participants receiving {i}?"
            ));
        }
    }
    out
}

pub const OFF_CORPUS_QUESTIONS: [&str; 50] = [
    "What is the airspeed of an unladen swallow?",
    "Who won the chess championship in Reykjavik?",
    "How tall is the Eiffel tower?",
    "Which volcano erupted near Pompeii?",
    "What key is the Moonlight sonata written in?",
    "How do you bake sourdough bread?",
    "What is the capital of Mongolia?",
    "Why do cats purr?",
    "How many moons orbit Jupiter?",
    "Who painted the Mona Lisa?",
    "What is the offside rule in football?",
    "How does a jet engine produce thrust?",
    "When did the Roman empire fall?",
    "What grape varieties grow in Burgundy?",
    "How deep is the Mariana trench?",
    "Who wrote Moby Dick?",
    "What is the boiling point of liquid nitrogen?",
    "How are glaciers formed?",
    "Which planets have rings?",
    "What language is spoken in Brazil?",
    "How do bees communicate direction?",
    "What is a haiku?",
    "Who invented the telephone?",
    "How fast can a cheetah run?",
    "What causes the northern lights?",
    "How do you tune a guitar?",
    "What is the tallest mountain in Africa?",
    "Why is the sky blue?",
    "How long is a marathon?",
    "Which ocean is the largest?",
    "What is origami?",
    "How do submarines dive?",
    "Who composed the Brandenburg concertos?",
    "What is the population of Tokyo?",
    "How are diamonds mined?",
    "What do pandas eat?",
    "How does a rainbow form?",
    "Which team won the first world cup?",
    "What is the speed of sound in water?",
    "How are pearls made?",
    "What is the plot of Hamlet?",
    "How do tides work?",
    "Who designed the Sydney opera house?",
    "What is the rarest gemstone?",
    "How many strings does a violin have?",
    "What is the history of the Silk Road?",
    "How do penguins keep warm?",
    "Which desert is the driest?",
    "What is a black hole?",
    "How do you play the bagpipes?",
];
