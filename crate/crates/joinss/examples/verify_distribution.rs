//! Check a sampler's output distribution against the brute-force reference:
//! materialize the join, compute every result's exact probability, sample
//! many times, and compare frequencies.
//!
//! ```sh
//! cargo run --release --example verify_distribution
//! ```

use joinss::oracle::{compare_frequencies, naive_subset_sample};
use joinss::synth::two_relation_instance;
use joinss::{AggKind, Aggregator, ConvolveMode, SplitRng, StaticIndex};

fn main() -> joinss::Result<()> {
    let instance = two_relation_instance();
    let agg = Aggregator::new(AggKind::Product, 2);
    let idx = StaticIndex::build(instance, agg, None, ConvolveMode::Schoolbook)?;
    let expected = idx
        .instance
        .materialize_join(&agg, idx.cutoff(), 10_000)?;
    println!("expected inclusion probabilities:");
    for r in &expected {
        println!("  {:?} -> {}", r.values, r.probability);
    }

    let trials = 50_000;
    let root = SplitRng::new(2718);

    // the index under test
    let samples: Vec<_> = (0..trials)
        .map(|i| idx.query(&root.child(i)))
        .collect::<joinss::Result<_>>()?;
    let report = compare_frequencies(&samples, &expected)?;
    println!(
        "index sampler: max |z| = {:.2}, chi-square p = {:.4}, mean size {:.4} \
         (expected {:.4}) -> {}",
        report.max_abs_z,
        report.p_value,
        report.mean_sample_size,
        report.expected_sample_size,
        if report.passed { "PASS" } else { "FAIL" }
    );

    // the reference sampler calibrates the harness itself
    let mut rng = root.child_named("naive");
    let reference: Vec<_> = (0..trials)
        .map(|_| naive_subset_sample(&expected, &mut rng))
        .collect();
    let report = compare_frequencies(&reference, &expected)?;
    println!(
        "reference sampler: max |z| = {:.2}, chi-square p = {:.4} -> {}",
        report.max_abs_z,
        report.p_value,
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(())
}
