//! Partition by model/original agreement and draw a disagreement-heavy sample.
//!
//!     cargo run --example disagreement_sampling

use std::path::Path;

use relabel::corpus::{Corpus, Layer};
use relabel::gateway::{classify_batch, record_judgments, BackendConfig, StubBackend};
use relabel::prompts::{PromptRegistry, Variant};
use relabel::sampler::{balanced_split, confusion_partition, disagreement_sample, Cell};
use relabel::schema::LabelSchema;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let mut corpus = Corpus::ingest_jsonl(dir.join("utterances.jsonl"), Layer::Original, &LabelSchema::default())?;
    let stub = StubBackend::from_jsonl("recorded", dir.join("meat_eater_responses.jsonl"))?;
    let registry = PromptRegistry::builtin();
    let spec = registry.load("meat-eater", Variant::FullRationale, None)?;
    let outcome = classify_batch(&stub, &BackendConfig::new("recorded"), spec, corpus.instances(), 2);
    record_judgments(&mut corpus, &outcome.judgments)?;

    let partition = confusion_partition(&corpus, "meat-eater", Layer::Model, Layer::Original)?;
    for cell in [Cell::TruePositive, Cell::FalsePositive, Cell::FalseNegative, Cell::TrueNegative] {
        println!("{cell:?}: {:?}", partition.cell(cell));
    }

    let sample = disagreement_sample(&partition, 12, 2.0, 7)?;
    println!(
        "budget {} at ratio {}: {} disagreement / {} agreement -> {:?}",
        sample.budget,
        sample.ratio,
        sample.counts.disagreement(),
        sample.counts.agreement(),
        sample.ids
    );
    // same seed, same sample
    assert_eq!(sample, disagreement_sample(&partition, 12, 2.0, 7)?);

    // asking for more disagreement than exists backfills from agreement items
    let wide = disagreement_sample(&partition, 20, 4.0, 7)?;
    println!("budget 20 at ratio 4: {:?}, shortfall {:?}", wide.counts, wide.shortfall);

    let split = balanced_split(&corpus, "vegetarian", Layer::Original, 1.0, 3)?;
    println!("vegetarian split: dev {:?} test {:?}", split.dev, split.test);
    Ok(())
}
