//! Precision/recall/F1 and kappa reports, per language and overall.
//!
//!     cargo run --example agreement_report

use std::path::Path;

use relabel::corpus::{Corpus, Layer};
use relabel::gateway::{classify_batch, record_judgments, BackendConfig, StubBackend};
use relabel::metrics::{
    agreement_report, classification_report, cohen_kappa, fleiss_kappa, macro_f1, prf1, ConfusionCounts, ALL,
};
use relabel::prompts::{PromptRegistry, Variant};
use relabel::schema::LabelSchema;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // hand-checkable anchors
    let c = ConfusionCounts::new(8, 2, 4, 6);
    let p = prf1(&c);
    println!("tp8 fp2 fn4 tn6: P {:.3} R {:.3} F1 {:.3} macro {:.3}", p.precision, p.recall, p.f1, macro_f1(&c));
    let a = [true, true, false, false, true, false];
    let b = [true, false, false, false, true, true];
    println!("cohen {}", cohen_kappa(&a, &b)?);
    println!("cohen, one constant rater: {}", cohen_kappa(&[true; 4], &[true, false, true, false])?);
    let ratings =
        vec![vec![true, true, true], vec![false, false, true], vec![false, false, false], vec![true, false, true]];
    println!("fleiss over 3 raters {}", fleiss_kappa(&ratings)?);

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let schema = LabelSchema::default();
    let mut corpus = Corpus::ingest_jsonl(dir.join("utterances.jsonl"), Layer::Original, &schema)?;
    let stub = StubBackend::from_jsonl("recorded", dir.join("meat_eater_responses.jsonl"))?;
    let registry = PromptRegistry::builtin();
    let spec = registry.load("meat-eater", Variant::FullRationale, None)?;
    let outcome = classify_batch(&stub, &BackendConfig::new("recorded"), spec, corpus.instances(), 2);
    record_judgments(&mut corpus, &outcome.judgments)?;

    let report = classification_report(&corpus, &schema, Layer::Model, Layer::Original);
    println!("\nF1 matrix (n/a where no instance has both layers):");
    print!("{}", report.to_matrix_csv("f1"));
    println!("\nkappa matrix:");
    let kappa = agreement_report(&corpus, &schema, Layer::Original, Layer::Model);
    print!("{}", kappa.to_matrix_csv("kappa"));
    println!("\noverall meat-eater kappa: {:?}", kappa.get(ALL, "meat-eater", "kappa"));
    Ok(())
}
