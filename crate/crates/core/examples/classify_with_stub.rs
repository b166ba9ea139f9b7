//! Classify a corpus with a prompt from the registry against recorded responses.
//! Swap the stub for `OpenAiBackend::from_config` to hit a live endpoint.
//!
//!     cargo run --example classify_with_stub

use std::path::Path;

use relabel::corpus::{Corpus, Layer};
use relabel::gateway::{assemble_prompt, classify_batch, parse_response, BackendConfig, StubBackend};
use relabel::metrics::{prf1, ConfusionCounts};
use relabel::prompts::{PromptRegistry, Variant};
use relabel::schema::LabelSchema;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let mut corpus = Corpus::ingest_jsonl(dir.join("utterances.jsonl"), Layer::Original, &LabelSchema::default())?;

    let registry = PromptRegistry::builtin();
    println!("available prompts: {}", registry.available().len());
    let spec = registry.load("meat-eater", Variant::FullRationale, None)?;
    for m in assemble_prompt(spec, &corpus.instances()[0]) {
        let preview: String = m.content.chars().take(70).collect();
        println!("{:>9?}: {preview}...", m.role);
    }

    let stub = StubBackend::from_jsonl("recorded", dir.join("meat_eater_responses.jsonl"))?;
    let outcome = classify_batch(&stub, &BackendConfig::new("recorded"), spec, corpus.instances(), 4);
    println!("{} judgments, {} failures, {} calls", outcome.judgments.len(), outcome.errors.len(), stub.calls());
    relabel::gateway::record_judgments(&mut corpus, &outcome.judgments)?;

    let pairs = corpus.instances().iter().filter_map(|i| {
        Some((corpus.value(&i.id, "meat-eater", Layer::Model)?, corpus.value(&i.id, "meat-eater", Layer::Original)?))
    });
    let p = prf1(&ConfusionCounts::from_pairs(pairs));
    println!("model vs original: P {:.2} R {:.2} F1 {:.2}", p.precision, p.recall, p.f1);

    // the parser takes the last RATIONALE/SCORE pair and tolerates case and spacing
    println!("{:?}", parse_response("thinking...\nrationale:  mentions steak \n score: 1"));
    println!("{:?}", parse_response("Score: maybe"));
    Ok(())
}
