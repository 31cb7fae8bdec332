//! Build a sampling index over a small two-relation join and draw a few
//! independent subset samples from it.
//!
//! ```sh
//! cargo run --example static_sampling
//! ```

use joinss::{AggKind, Aggregator, ConvolveMode, Instance, Relation, SplitRng, StaticIndex, Value};

fn main() -> joinss::Result<()> {
    // R1(A, B) and R2(B, C); tuple weights become inclusion probabilities
    let mut r1 = Relation::new("R1", vec!["A".into(), "B".into()])?;
    r1.push(vec![Value::parse("a1"), Value::parse("b1")], 1.0, 0)?;
    r1.push(vec![Value::parse("a2"), Value::parse("b1")], 0.5, 0)?;
    let mut r2 = Relation::new("R2", vec!["B".into(), "C".into()])?;
    r2.push(vec![Value::parse("b1"), Value::parse("c1")], 0.5, 0)?;
    r2.push(vec![Value::parse("b1"), Value::parse("c2")], 0.25, 0)?;

    let instance = Instance::new(vec![r1, r2])?;
    let agg = Aggregator::new(AggKind::Product, 2);
    let idx = StaticIndex::build(instance, agg, None, ConvolveMode::Schoolbook)?;

    println!(
        "join has {} results split into {} score buckets (+{} in the tail)",
        idx.total_join,
        idx.bucket_sizes.iter().filter(|&&b| b > 0).count(),
        idx.tail_size
    );

    // each derived child stream yields one independent sample
    let root = SplitRng::new(42);
    for query in 0..5 {
        let sample = idx.query(&root.child(query))?;
        let rendered: Vec<String> = sample
            .iter()
            .map(|r| {
                format!(
                    "({}, {}, {}) p={}",
                    r.values["A"], r.values["B"], r.values["C"], r.probability
                )
            })
            .collect();
        println!("sample {query}: {{{}}}", rendered.join(", "));
    }
    Ok(())
}
