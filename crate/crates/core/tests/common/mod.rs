//! Planted 200-instance pipeline shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use relabel::corpus::{Corpus, Layer};
use relabel::gateway::{self, classify_batch, render_response, BackendConfig, JudgmentIndex, StubBackend};
use relabel::metrics::ALL;
use relabel::prompts::{PromptRegistry, Variant};
use relabel::sampler::{confusion_partition, disagreement_sample, Cell, ConfusionPartition, SampleSet};
use relabel::schema::{values, LabelSchema};
use relabel::workflow::{Workflow, WorkflowError};

pub const LABEL: &str = "meat-eater";
pub const LANGUAGES: [&str; 4] = ["en", "ja", "ru", "fr"];
pub const N: usize = 200;

/// Index ranges of the planted confusion cells (model vs original).
pub const TP: std::ops::Range<usize> = 0..60;
pub const FP: std::ops::Range<usize> = 60..90;
pub const FN: std::ops::Range<usize> = 90..130;
pub const TN: std::ops::Range<usize> = 130..200;

/// Budget 90 at ratio 2 draws 60 disagreement ids, split 26 FP / 34 FN
/// (proportional to the 30:40 pools), and 15 TP / 15 TN.
pub const EXPECTED_COUNTS: (usize, usize, usize, usize) = (15, 26, 34, 15);

/// Scripted human policy: FP items are revised to 1, everything else keeps
/// its original value. Over the 90 sampled items that gives original-vs-final
/// agreement 64/90 with marginals 49/90 and 75/90, i.e. kappa = 1470/3810.
pub const PLANTED_KAPPA: f64 = 49.0 / 127.0;

pub fn id(i: usize) -> String {
    format!("i{i:03}")
}

pub fn cell_of(i: usize) -> Cell {
    if TP.contains(&i) {
        Cell::TruePositive
    } else if FP.contains(&i) {
        Cell::FalsePositive
    } else if FN.contains(&i) {
        Cell::FalseNegative
    } else {
        Cell::TrueNegative
    }
}

fn original(i: usize) -> bool {
    TP.contains(&i) || FN.contains(&i)
}

fn model(i: usize) -> bool {
    TP.contains(&i) || FP.contains(&i)
}

fn index(id: &str) -> usize {
    id[1..].parse().expect("planted id")
}

pub fn human(id: &str) -> bool {
    let i = index(id);
    original(i) || FP.contains(&i)
}

pub struct Files {
    pub corpus: PathBuf,
    pub recorded: PathBuf,
}

/// Write the corpus and the recorded model responses into `dir`.
pub fn write_inputs(dir: &Path) -> Files {
    let corpus = dir.join("corpus.jsonl");
    let recorded = dir.join("recorded.jsonl");
    let mut c = std::fs::File::create(&corpus).unwrap();
    let mut r = std::fs::File::create(&recorded).unwrap();
    for i in 0..N {
        let lang = LANGUAGES[i % LANGUAGES.len()];
        let line = serde_json::json!({
            "id": id(i),
            "text": format!("[{lang}] planted utterance number {i}"),
            "language": lang,
            LABEL: u8::from(original(i)),
        });
        writeln!(c, "{line}").unwrap();
        let raw = render_response(&format!("cue {i}"), model(i));
        writeln!(r, "{}", serde_json::json!({ "instance_id": id(i), "raw_response": raw })).unwrap();
    }
    Files { corpus, recorded }
}

pub fn planted_partition() -> ConfusionPartition {
    let mut p = ConfusionPartition { label_id: LABEL.into(), ..Default::default() };
    for i in 0..N {
        let set = match cell_of(i) {
            Cell::TruePositive => &mut p.true_positives,
            Cell::FalsePositive => &mut p.false_positives,
            Cell::FalseNegative => &mut p.false_negatives,
            Cell::TrueNegative => &mut p.true_negatives,
        };
        set.insert(id(i));
    }
    p
}

#[derive(Debug)]
pub struct Outcome {
    pub corpus: Corpus,
    pub partition_matches: bool,
    pub sample: SampleSet,
    pub gating_enforced: bool,
    pub kappa: Option<f64>,
    /// `(events so far, serialized state)` after every workflow call.
    pub snapshots: Vec<(usize, String)>,
    pub log: PathBuf,
    pub stub_calls_before_workflow: usize,
    pub stub_calls_after: usize,
}

fn snap(wf: &Workflow, out: &mut Vec<(usize, String)>) {
    out.push((wf.events().len(), wf.state_json()));
}

/// ingest -> classify (recorded stub) -> partition -> sample -> batch ->
/// judge/reveal/flag -> qc + audit -> adjudicate (retain) -> finalize.
pub fn run_pipeline(dir: &Path) -> Outcome {
    let files = write_inputs(dir);
    let schema = LabelSchema::default();
    let mut corpus = Corpus::ingest_jsonl(&files.corpus, Layer::Original, &schema).unwrap();

    let registry = PromptRegistry::builtin();
    let spec = registry.load(LABEL, Variant::FullRationale, None).unwrap();
    let stub = StubBackend::from_jsonl("stub-model", &files.recorded).unwrap();
    let outcome = classify_batch(&stub, &BackendConfig::new("stub-model"), spec, corpus.instances(), 8);
    assert!(outcome.errors.is_empty(), "{:?}", outcome.errors);
    gateway::record_judgments(&mut corpus, &outcome.judgments).unwrap();
    let judgments = JudgmentIndex::new(outcome.judgments);
    let stub_calls_before_workflow = stub.calls();

    let partition = confusion_partition(&corpus, LABEL, Layer::Model, Layer::Original).unwrap();
    let partition_matches = partition == planted_partition();
    let sample = disagreement_sample(&partition, 90, 2.0, 7).unwrap();

    let log = dir.join("events.jsonl");
    let mut wf = Workflow::open(&log, schema).unwrap();
    let mut snapshots = Vec::new();
    snap(&wf, &mut snapshots);
    let labels = vec![LABEL.to_string()];
    let batch_id = wf
        .create_batch_from_samples("admin", std::slice::from_ref(&sample), &labels, &corpus)
        .unwrap()
        .batch_id
        .clone();
    snap(&wf, &mut snapshots);

    let order: Vec<String> = wf.batch(&batch_id).unwrap().instance_ids.clone();
    let gating_enforced =
        matches!(wf.reveal_model(&batch_id, &order[0], "ann-x", &judgments), Err(WorkflowError::Gating { .. }));
    snap(&wf, &mut snapshots);

    for (k, inst) in order.iter().enumerate() {
        let lang = corpus.instance(inst).unwrap().language.clone();
        let annotator = format!("ann-{lang}");
        let v = values([(LABEL, u8::from(human(inst)))]);
        wf.submit_judgment(&batch_id, inst, &annotator, &v).unwrap();
        snap(&wf, &mut snapshots);
        wf.reveal_model(&batch_id, inst, &annotator, &judgments).unwrap();
        snap(&wf, &mut snapshots);
        if k % 9 == 0 {
            wf.flag(&batch_id, inst, &annotator, "context unclear").unwrap();
            snap(&wf, &mut snapshots);
        }
    }
    wf.start_qc(&batch_id, "admin").unwrap();
    snap(&wf, &mut snapshots);
    wf.audit_sample(&batch_id, "admin", 0.1, false, 11, &judgments).unwrap();
    snap(&wf, &mut snapshots);
    let queue: Vec<String> = wf.adjudication_queue(&batch_id).unwrap().iter().map(|t| t.instance_id.clone()).collect();
    for inst in &queue {
        wf.adjudicate(&batch_id, inst, "expert", None, "").unwrap();
        snap(&wf, &mut snapshots);
    }
    let finalized = wf.finalize_batch(&batch_id, "admin", &mut corpus).unwrap();
    snap(&wf, &mut snapshots);
    let kappa = finalized.agreement.get(ALL, LABEL, "kappa").and_then(|v| v.number());

    Outcome {
        corpus,
        partition_matches,
        sample,
        gating_enforced,
        kappa,
        snapshots,
        log,
        stub_calls_before_workflow,
        stub_calls_after: stub.calls(),
    }
}

/// Replay every prefix of the event log from a fresh file and compare with the
/// snapshot taken live at that point. Returns the first mismatching prefix length.
pub fn replay_mismatch(outcome: &Outcome, scratch: &Path) -> Option<usize> {
    let text = std::fs::read_to_string(&outcome.log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let seen: BTreeSet<usize> = outcome.snapshots.iter().map(|(n, _)| *n).collect();
    for (n, state) in &outcome.snapshots {
        let path = scratch.join(format!("prefix-{n}.jsonl"));
        let mut body = lines[..*n].join("\n");
        if *n > 0 {
            body.push('\n');
        }
        // simulate a crash mid-append after the prefix
        if *n < lines.len() {
            body.push_str(&lines[*n][..lines[*n].len() / 2]);
        }
        std::fs::write(&path, body).unwrap();
        let wf = Workflow::open(&path, LabelSchema::default()).unwrap();
        if &wf.state_json() != state || wf.events().len() != *n {
            return Some(*n);
        }
    }
    // every event count in the log must have been observed
    (0..=lines.len()).find(|n| !seen.contains(n))
}
