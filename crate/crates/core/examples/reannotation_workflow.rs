//! A full re-annotation round on an event-sourced log:
//! batch, judge, reveal, flag, QC audit, adjudication, finalize, then replay.
//!
//!     cargo run --example reannotation_workflow

use std::path::Path;

use relabel::corpus::{Corpus, Layer};
use relabel::gateway::{classify_batch, record_judgments, BackendConfig, JudgmentIndex, StubBackend};
use relabel::metrics::ALL;
use relabel::prompts::{PromptRegistry, Variant};
use relabel::sampler::{confusion_partition, disagreement_sample};
use relabel::schema::{values, LabelSchema};
use relabel::workflow::{Workflow, WorkflowError};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let schema = LabelSchema::default();
    let mut corpus = Corpus::ingest_jsonl(dir.join("utterances.jsonl"), Layer::Original, &schema)?;
    let stub = StubBackend::from_jsonl("recorded", dir.join("meat_eater_responses.jsonl"))?;
    let registry = PromptRegistry::builtin();
    let spec = registry.load("meat-eater", Variant::FullRationale, None)?;
    let judged = classify_batch(&stub, &BackendConfig::new("recorded"), spec, corpus.instances(), 2).judgments;
    record_judgments(&mut corpus, &judged)?;
    let judgments = JudgmentIndex::new(judged);

    let partition = confusion_partition(&corpus, "meat-eater", Layer::Model, Layer::Original)?;
    let sample = disagreement_sample(&partition, 9, 2.0, 1)?;

    let scratch = tempfile::tempdir()?;
    let log = scratch.path().join("events.jsonl");
    let mut wf = Workflow::open(&log, schema.clone())?;
    let labels = vec!["meat-eater".to_string(), "vegetarian".to_string()];
    let batch = wf.create_batch_from_samples("admin", &[sample], &labels, &corpus)?.batch_id.clone();

    let first = wf.batch(&batch)?.instance_ids[0].clone();
    match wf.reveal_model(&batch, &first, "ann", &judgments) {
        Err(e @ WorkflowError::Gating { .. }) => println!("refused: {e}"),
        other => panic!("reveal must be gated, got {other:?}"),
    }

    // one annotator per language; each judges blind, then sees the model
    let ids = wf.batch(&batch)?.instance_ids.clone();
    for id in &ids {
        let lang = corpus.instance(id).unwrap().language.clone();
        let annotator = format!("ann-{lang}");
        let meat = corpus.value(id, "meat-eater", Layer::Original).unwrap_or(false);
        let veg = corpus.value(id, "vegetarian", Layer::Original).unwrap_or(false);
        let t = wf.submit_judgment(
            &batch,
            id,
            &annotator,
            &values([("meat-eater", meat.into()), ("vegetarian", veg.into())]),
        )?;
        if !t.warnings.is_empty() {
            println!("{id}: saved with warnings {:?}", t.warnings);
        }
        for j in wf.reveal_model(&batch, id, &annotator, &judgments)? {
            if j.score != meat {
                wf.flag(&batch, id, &annotator, &format!("model says {}: {}", u8::from(j.score), j.rationale))?;
            }
        }
    }

    wf.start_qc(&batch, "admin")?;
    let audited = wf.audit_sample(&batch, "admin", 0.25, false, 5, &judgments)?;
    println!("audit drew {audited:?}");
    let queue: Vec<String> = wf.adjudication_queue(&batch)?.iter().map(|t| t.instance_id.clone()).collect();
    for id in &queue {
        let t = wf.task(&batch, id)?;
        // side with the model on flagged items, keep the human value otherwise
        if t.is_flagged() {
            let model = judgments.get(id, "meat-eater").unwrap().score;
            let decision = values([("meat-eater", model.into())]);
            wf.adjudicate(&batch, id, "expert", Some(&decision), "speaker's own diet is stated")?;
        } else {
            wf.adjudicate(&batch, id, "expert", None, "")?;
        }
    }

    let outcome = wf.finalize_batch(&batch, "admin", &mut corpus)?;
    println!("finalized {} tasks", outcome.finalized);
    for label in &labels {
        println!("{label}: original vs final kappa {:?}", outcome.agreement.get(ALL, label, "kappa"));
    }
    println!("progress {:?}", wf.progress(&batch)?.by_state);

    // the log alone rebuilds the same state
    let replayed = Workflow::open(&log, schema)?;
    assert_eq!(replayed.state_json(), wf.state_json());
    println!("{} events replayed to an identical state", replayed.events().len());
    Ok(())
}
