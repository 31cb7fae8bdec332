//! Stream tuples into the dynamic index, sampling as the join grows, and
//! keep a maintained one-shot sample alongside.
//!
//! ```sh
//! cargo run --example dynamic_stream
//! ```

use joinss::dynamic::OneshotMaintainer;
use joinss::{AggKind, Aggregator, DynamicIndex, SplitRng, Value};

fn main() -> joinss::Result<()> {
    let schemas = vec![
        vec!["A".to_string(), "B".to_string()],
        vec!["B".to_string(), "C".to_string()],
    ];
    let agg = Aggregator::new(AggKind::Product, 2);
    let mut index = DynamicIndex::new(&schemas, agg, None)?;

    let stream = [
        (0, "a1", "b1", 1.0),
        (1, "b1", "c1", 0.5),
        (0, "a2", "b1", 0.5),
        (1, "b1", "c2", 0.25),
        (0, "a3", "b2", 0.9),
        (1, "b2", "c3", 0.9),
    ];
    let rng = SplitRng::new(99);
    for (step, &(rel, x, y, w)) in stream.iter().enumerate() {
        index.insert(rel, vec![Value::parse(x), Value::parse(y)], w)?;
        let (sample, stats) = index.query(&rng.child(step as u64))?;
        println!(
            "after insert {}: sampled {} of the live join ({} accesses, {} dummies rejected)",
            step + 1,
            sample.len(),
            stats.accesses,
            stats.dummies
        );
    }

    // maintained variant: one inclusion decision per newly created result
    let mut maintainer = OneshotMaintainer::new(
        DynamicIndex::new(&schemas, agg, None)?,
        SplitRng::new(7).child_named("maintain"),
    );
    for &(rel, x, y, w) in &stream {
        maintainer.insert(rel, vec![Value::parse(x), Value::parse(y)], w)?;
    }
    println!(
        "maintained one-shot sample after the full stream: {} results",
        maintainer.sample.len()
    );
    for r in &maintainer.sample {
        println!("  {:?} (p = {})", r.values, r.probability);
    }
    Ok(())
}
