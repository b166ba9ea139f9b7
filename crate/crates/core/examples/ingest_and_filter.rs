//! Load a multilingual JSONL corpus, slice it, and write a layer back out.
//!
//!     cargo run --example ingest_and_filter

use std::path::Path;

use relabel::corpus::{Corpus, Filter, Layer};
use relabel::schema::LabelSchema;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/utterances.jsonl");
    let schema = LabelSchema::default();
    let corpus = Corpus::ingest_jsonl(&data, Layer::Original, &schema)?;
    println!("{} instances in {:?}", corpus.len(), corpus.languages());

    for lang in corpus.languages() {
        let slice = corpus.filter(&Filter::default().language(lang).label("meat-eater").value(true))?;
        let ids: Vec<&str> = slice.instances().iter().map(|i| i.id.as_str()).collect();
        println!("{lang}: meat-eater=1 -> {ids:?}");
    }

    // missing is not the same as 0: drop one assignment and the filter stops matching it
    let mut partial = corpus.subset(["ja01", "ja02"]);
    partial.set_values("ja02", Layer::Human, &[("vegetarian".to_string(), true)].into(), "demo", None)?;
    let human = partial.filter(&Filter::default().layer(Layer::Human).label("vegetarian").value(false))?;
    println!("human layer, vegetarian=0: {} instances (ja01 has no human value)", human.len());

    let mut out = Vec::new();
    corpus.filter(&Filter::default().language("fr"))?.write_jsonl(Layer::Original, &mut out)?;
    print!("{}", String::from_utf8(out)?);

    // malformed input is reported with its line number
    let bad = "{\"id\":\"x\",\"text\":\"hi\",\"language\":\"en\",\"male\":2}\n";
    let err = Corpus::new(&schema).merge_reader(bad.as_bytes(), Layer::Original).unwrap_err();
    println!("rejected: {err}");
    Ok(())
}
