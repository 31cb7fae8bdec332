//! Draw a single subset sample from a larger chain join with the one-shot
//! batch path, which resolves all ranked accesses together instead of one
//! binary search per retrieved result.
//!
//! ```sh
//! cargo run --release --example oneshot_sampling
//! ```

use std::time::Instant;

use joinss::oneshot::oneshot_sample;
use joinss::synth::chain_instance;
use joinss::{AggKind, Aggregator, ConvolveMode, SplitRng};

fn main() -> joinss::Result<()> {
    // heavy weights make the expected sample far larger than the input,
    // which is the regime the one-shot path is built for
    let instance = chain_instance(2, 20_000, 0.75, (0.9, 1.0), 7);
    let n = instance.input_size();
    let agg = Aggregator::new(AggKind::Product, 2);

    let start = Instant::now();
    let sample = oneshot_sample(
        instance,
        agg,
        None,
        ConvolveMode::Schoolbook,
        &SplitRng::new(1234),
    )?;
    println!(
        "one-shot sample of {} results from a {}-tuple input in {:.3}s",
        sample.len(),
        n,
        start.elapsed().as_secs_f64()
    );
    if let Some(first) = sample.first() {
        println!("first sampled result: {:?} (p = {})", first.values, first.probability);
    }
    Ok(())
}
