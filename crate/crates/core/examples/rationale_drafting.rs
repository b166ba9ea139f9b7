//! Ask a backend to summarise labelled examples into a rationale draft, then
//! review and promote it to a new prompt version.
//!
//!     cargo run --example rationale_drafting

use std::path::Path;

use relabel::corpus::{Corpus, Layer};
use relabel::gateway::{BackendConfig, StubBackend};
use relabel::prompts::{PromptRegistry, Variant};
use relabel::schema::LabelSchema;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/utterances.jsonl");
    let schema = LabelSchema::default();
    let corpus = Corpus::ingest_jsonl(&data, Layer::Original, &schema)?;

    // an on-disk registry, seeded with the builtin prompts
    let scratch = tempfile::tempdir()?;
    let mut registry = PromptRegistry::open(scratch.path().join("prompts"))?;
    println!(
        "vegetarian full_rationale versions before: {:?}",
        registry.versions("vegetarian", Variant::FullRationale)
    );

    let backend = StubBackend::new("drafter").default_response(
        "Speakers who refuse meat or fish, name plant-based dishes as their own choice, \
         or describe themselves as vegetarian are positive.",
    );
    let draft = registry.draft_rationale_summary(
        &backend,
        &BackendConfig::new("drafter"),
        "vegetarian",
        &corpus,
        &schema,
        4,
    )?;
    println!(
        "{} ({:?}): {} positives, {} negatives",
        draft.id,
        draft.status,
        draft.positive_ids.len(),
        draft.negative_ids.len()
    );
    println!("draft: {}", draft.draft_text);

    // the reviewer edits before accepting; nothing is promoted automatically
    let edited = format!("{}\nCooking vegetables for someone else is not evidence on its own.", draft.draft_text);
    let spec = registry.accept_draft(&draft.id, "reviewer-1", &edited)?;
    println!("accepted as {}", spec.key());

    let reopened = PromptRegistry::open(scratch.path().join("prompts"))?;
    let latest = reopened.load("vegetarian", Variant::FullRationale, None)?;
    println!("latest after reopen: {} ({:?})", latest.version, reopened.draft(&draft.id).map(|d| d.status));
    Ok(())
}
