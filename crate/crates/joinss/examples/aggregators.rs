//! How the four aggregation functions turn component weights into result
//! probabilities and scores, and what that does to the bucket layout.
//!
//! ```sh
//! cargo run --example aggregators
//! ```

use joinss::synth::two_relation_instance;
use joinss::{AggKind, Aggregator, ConvolveMode, Score, SplitRng, StaticIndex};

fn main() -> joinss::Result<()> {
    for kind in [AggKind::Product, AggKind::Min, AggKind::Max, AggKind::Sum] {
        let agg = Aggregator::new(kind, 2);
        let idx = StaticIndex::build(
            two_relation_instance(),
            agg,
            Some(10),
            ConvolveMode::Schoolbook,
        )?;
        println!("== {} ==", kind.name());
        let results = idx.instance.materialize_join(&agg, idx.cutoff(), 1000)?;
        for r in &results {
            let bucket = match r.score {
                Score::Bucket(l) => format!("bucket {l}"),
                Score::Tail => "tail".to_string(),
            };
            println!(
                "  {:?}: p = {:<7} -> {bucket} (upper bound {})",
                r.values.values().map(|v| v.to_string()).collect::<Vec<_>>(),
                r.probability,
                agg.bucket_upper(r.score, idx.cutoff()),
            );
        }
        let sample = idx.query(&SplitRng::new(5))?;
        println!("  one sample: {} of {} results\n", sample.len(), results.len());
    }
    Ok(())
}
