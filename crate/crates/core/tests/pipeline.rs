mod common;

use relabel::corpus::Layer;
use relabel::schema::LabelSchema;
use relabel::workflow::{TaskState, Workflow};

#[test]
fn planted_pipeline_recovers_counts_and_kappa() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = common::run_pipeline(dir.path());

    assert!(outcome.partition_matches);
    let c = outcome.sample.counts;
    assert_eq!((c.true_positives, c.false_positives, c.false_negatives, c.true_negatives), common::EXPECTED_COUNTS);
    assert!(outcome.gating_enforced);
    assert_eq!(outcome.stub_calls_after, outcome.stub_calls_before_workflow, "the workflow never calls the model");
    let k = outcome.kappa.expect("kappa is defined");
    assert!((k - common::PLANTED_KAPPA).abs() < 1e-12, "{k}");

    // final layer: sampled items carry the scripted human value, the rest stay unset
    let sampled: std::collections::BTreeSet<&str> = outcome.sample.ids.iter().map(String::as_str).collect();
    for inst in outcome.corpus.instances() {
        let v = outcome.corpus.value(&inst.id, common::LABEL, Layer::Final);
        if sampled.contains(inst.id.as_str()) {
            assert_eq!(v, Some(common::human(&inst.id)), "{}", inst.id);
            assert_eq!(outcome.corpus.value(&inst.id, common::LABEL, Layer::Human), v);
        } else {
            assert_eq!(v, None);
        }
    }
}

#[test]
fn every_log_prefix_replays_to_the_live_state() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = common::run_pipeline(dir.path());
    let scratch = tempfile::tempdir().unwrap();
    assert_eq!(common::replay_mismatch(&outcome, scratch.path()), None);

    let wf = Workflow::open(&outcome.log, LabelSchema::default()).unwrap();
    let batch = wf.batch("b1").unwrap();
    assert!(batch.tasks.values().all(|t| t.state == TaskState::Final));
    // every flagged or audited task carries an adjudication record
    assert!(batch.tasks.values().filter(|t| t.is_flagged() || t.audited).all(|t| t.adjudication.is_some()));
    assert_eq!(batch.tasks.values().filter(|t| t.audited).count(), 9, "ceil(0.1 * 90)");
}

#[test]
fn finalized_layers_are_rebuilt_from_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = common::run_pipeline(dir.path());
    let files = common::write_inputs(dir.path());
    let schema = LabelSchema::default();
    let mut fresh = relabel::corpus::Corpus::ingest_jsonl(&files.corpus, Layer::Original, &schema).unwrap();
    Workflow::open(&outcome.log, schema).unwrap().apply_finalized(&mut fresh).unwrap();
    for inst in outcome.corpus.instances() {
        for layer in [Layer::Human, Layer::Final] {
            assert_eq!(
                fresh.value(&inst.id, common::LABEL, layer),
                outcome.corpus.value(&inst.id, common::LABEL, layer)
            );
        }
    }
}
