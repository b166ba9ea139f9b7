//! Check label vectors against the schema rules and close them under implication.
//!
//!     cargo run --example label_constraints

use relabel::schema::{values, LabelSchema};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let schema = LabelSchema::default();
    for id in schema.label_ids() {
        let d = schema.definition(id).unwrap();
        println!("{id:<11} {}", d.definition);
    }

    let cases = [
        ("both genders", values([("male", 1), ("female", 1)])),
        ("vegetarian meat-eater", values([("meat-eater", 1), ("vegetarian", 1)])),
        ("elderly parent", values([("elderly", 1), ("parent", 1), ("adult", 1)])),
        ("parent, not adult", values([("parent", 1), ("adult", 0)])),
        ("consistent", values([("female", 1), ("adult", 1), ("parent", 1), ("vegetarian", 1)])),
    ];
    for (name, v) in &cases {
        let violations = schema.validate(v)?;
        if violations.is_empty() {
            println!("{name}: ok");
        }
        for x in violations {
            println!("{name}: {x}");
        }
    }

    let closed = schema.implication_closure(&values([("elderly", 1), ("male", 1)]))?;
    println!("closure of elderly+male: {closed:?}");
    Ok(())
}
