//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured evidence. The oracles here recompute everything from first
//! principles (explicit enumeration of join fragments), independent of the
//! counting code they check.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::HashSet;
use std::sync::Mutex;
use std::time::Instant;

use joinss::convolve::{convolve_fft, convolve_schoolbook, slot_pairs};
use joinss::instance::{Instance, JoinResult};
use joinss::oneshot::{
    batch_recursive_access, batch_recursive_access_with_stats, build_xy, oneshot_sample, YArray,
};
use joinss::oracle::{
    compare_frequencies, enumerate_bucket, max_pairwise_indicator_correlation,
};
use joinss::score::result_score;
use joinss::static_index::{draw_requests, keep, StaticIndex};
use joinss::synth::{chain_instance, random_acyclic_instance, two_relation_instance};
use joinss::{AggKind, Aggregator, ConvolveMode, DynamicIndex, Score, SplitRng};

const TRIALS: usize = 200_000;

/// Criteria run one at a time so the timing criterion sees a quiet machine.
static GATE: Mutex<()> = Mutex::new(());

fn gate() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

/// The randomized instance family shared by the exactness criteria:
/// 50 PRODUCT instances plus one each of MIN, MAX, SUM.
fn test_instances() -> Vec<(Instance, Aggregator)> {
    let mut set = Vec::new();
    for seed in 0..50u64 {
        let k = 2 + (seed as usize % 4);
        let inst = random_acyclic_instance(k, 12, seed);
        let agg = Aggregator::new(AggKind::Product, inst.relation_count());
        set.push((inst, agg));
    }
    for (i, kind) in [AggKind::Min, AggKind::Max, AggKind::Sum].iter().enumerate() {
        let inst = random_acyclic_instance(3, 10, 1000 + i as u64);
        let agg = Aggregator::new(*kind, inst.relation_count());
        set.push((inst, agg));
    }
    set
}

fn build(inst: &Instance, agg: Aggregator) -> StaticIndex {
    StaticIndex::build(inst.clone(), agg, None, ConvolveMode::Schoolbook).unwrap()
}

/// Pre-order of the subtree hanging off `node` starting at child `from_slot`
/// (the node itself excluded).
fn partial_subtree(inst: &Instance, node: usize, from_slot: usize) -> Vec<usize> {
    let mut order = Vec::new();
    let mut stack: Vec<usize> = inst.tree.children[node][from_slot..]
        .iter()
        .rev()
        .copied()
        .collect();
    while let Some(n) = stack.pop() {
        order.push(n);
        for &c in inst.tree.children[n].iter().rev() {
            stack.push(c);
        }
    }
    order
}

/// Brute-force counts, by combined score slot, of the join fragments made of
/// tuple `tuple` of `node` plus one tuple from every relation in the
/// subtrees of children `from_slot..`, via explicit enumeration.
fn brute_fragment_counts(
    inst: &Instance,
    agg: &Aggregator,
    cutoff: u32,
    node: usize,
    tuple: usize,
    from_slot: usize,
) -> Vec<u128> {
    let order = partial_subtree(inst, node, from_slot);
    let mut counts = vec![0u128; cutoff as usize + 1];
    let mut chosen = vec![usize::MAX; inst.relation_count()];
    chosen[node] = tuple;
    fn rec(
        inst: &Instance,
        agg: &Aggregator,
        cutoff: u32,
        order: &[usize],
        pos: usize,
        chosen: &mut Vec<usize>,
        counts: &mut Vec<u128>,
    ) {
        if pos == order.len() {
            let scores: Vec<Score> = chosen
                .iter()
                .enumerate()
                .filter(|(_, &t)| t != usize::MAX)
                .map(|(n, &t)| inst.relations[n].scores[t])
                .collect();
            let s = result_score(&scores, agg, cutoff).unwrap();
            counts[s.slot(cutoff)] += 1;
            return;
        }
        let n = order[pos];
        let p = inst.tree.parent[n].expect("fragment nodes have parents");
        let slot = inst.tree.children[p].iter().position(|&c| c == n).unwrap();
        let key = inst.child_key(p, slot, chosen[p]);
        for t in inst.relations[n].group_range(&key) {
            chosen[n] = t;
            rec(inst, agg, cutoff, order, pos + 1, chosen, counts);
            chosen[n] = usize::MAX;
        }
    }
    rec(inst, agg, cutoff, &order, 0, &mut chosen, &mut counts);
    counts
}

fn result_key(r: &JoinResult) -> String {
    format!("{:?}", r.key())
}

#[test]
fn criterion_01_statistic_exactness() {
    let _serial = gate();
    let start = Instant::now();
    let mut instances = 0usize;
    let mut checked_w = 0u64;
    let mut checked_y = 0u64;
    for (inst, agg) in test_instances() {
        let idx = build(&inst, agg);
        let cutoff = idx.cutoff();
        let inst = &idx.instance; // reduced, canonical
        instances += 1;

        // W: every stored per-tuple slot array equals explicit enumeration
        let mut brute_w: Vec<Vec<Vec<Vec<u128>>>> = Vec::new();
        for node in 0..inst.relation_count() {
            let slots = inst.tree.children[node].len().max(1);
            let mut per_node = Vec::new();
            for t in 0..inst.relations[node].len() {
                let mut per_tuple = Vec::new();
                for s in 0..slots {
                    let brute = brute_fragment_counts(inst, &agg, cutoff, node, t, s);
                    assert_eq!(
                        brute, idx.w[node][t][s],
                        "W mismatch node {node} tuple {t} slot {s}"
                    );
                    checked_w += (cutoff as u64) + 1;
                    per_tuple.push(brute);
                }
                per_node.push(per_tuple);
            }
            brute_w.push(per_node);
        }

        // M: per-key sums of the brute slot-0 arrays
        for node in 0..inst.relation_count() {
            for (g, (_, range)) in inst.relations[node].groups.iter().enumerate() {
                let mut acc = vec![0u128; cutoff as usize + 1];
                for t in range.clone() {
                    for (s, v) in brute_w[node][t][0].iter().enumerate() {
                        acc[s] += v;
                    }
                }
                assert_eq!(acc, idx.m[node][g], "M mismatch node {node} group {g}");
            }
        }

        // X: groupwise running sums of the brute slot-0 arrays
        let (x, _) = build_xy(&idx).unwrap();
        for node in 0..inst.relation_count() {
            for (_, range) in &inst.relations[node].groups {
                for slot in 0..=cutoff as usize {
                    let mut run = 0u128;
                    for t in range.clone() {
                        run += brute_w[node][t][0][slot];
                        let base = if range.start == 0 {
                            0
                        } else {
                            x.prefix[node][slot][range.start - 1]
                        };
                        assert_eq!(run, x.prefix[node][slot][t] - base, "X mismatch");
                    }
                }
            }
        }

        // Y: cumulative pair products recomputed from the brute tables
        let y = YArray::materialize_all(&idx).unwrap();
        for ((node, slot, tuple, score_slot), stored) in &y.built {
            let children = &inst.tree.children[*node];
            let child = children[*slot];
            let key = inst.child_key(*node, *slot, *tuple);
            let own = inst.relations[*node].scores[*tuple].slot(cutoff);
            let zeros = vec![0u128; cutoff as usize + 1];
            let m_arr: Vec<u128> = match inst.relations[child].group_id(&key) {
                Some(g) => {
                    let range = inst.relations[child].groups[g].1.clone();
                    let mut acc = vec![0u128; cutoff as usize + 1];
                    for t in range {
                        for (s, v) in brute_w[child][t][0].iter().enumerate() {
                            acc[s] += v;
                        }
                    }
                    acc
                }
                None => zeros.clone(),
            };
            let next: Vec<u128> = if slot + 1 == children.len() {
                let mut v = zeros;
                v[own] = 1;
                v
            } else {
                brute_w[*node][*tuple][*slot + 1].clone()
            };
            let mut run = 0u128;
            let mut expect = Vec::new();
            for (s1, s2) in slot_pairs(&agg, *score_slot, cutoff) {
                run += m_arr[s1] * next[s2];
                expect.push(run);
            }
            assert_eq!(&expect, stored, "Y mismatch at {node},{slot},{tuple},{score_slot}");
            checked_y += expect.len() as u64;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "exactness checks took {elapsed:.1}s");
    println!(
        "criterion 01 statistic exactness: PASS — {instances} instances, \
         {checked_w} W entries and {checked_y} Y entries match enumeration ({elapsed:.1}s)"
    );
}

#[test]
fn criterion_02_bucket_partition() {
    let _serial = gate();
    let mut instances = 0;
    for (inst, agg) in test_instances() {
        let idx = build(&inst, agg);
        let materialized = idx
            .instance
            .materialize_join(&agg, idx.cutoff(), 1_000_000)
            .unwrap();
        let bucket_sum: u128 = idx.bucket_sizes.iter().sum();
        assert_eq!(
            bucket_sum + idx.tail_size,
            materialized.len() as u128,
            "partition mismatch"
        );
        assert_eq!(idx.total_join, materialized.len() as u128);
        // per-bucket sizes agree with the stable filter too
        for l in 0..idx.cutoff() {
            let want = enumerate_bucket(&materialized, Score::Bucket(l), &agg).len() as u128;
            assert_eq!(idx.bucket_sizes[l as usize], want, "bucket {l}");
        }
        let tail = enumerate_bucket(&materialized, Score::Tail, &agg).len() as u128;
        assert_eq!(idx.tail_size, tail);
        instances += 1;
    }
    println!(
        "criterion 02 bucket partition: PASS — sizes sum to |Join| on {instances} instances"
    );
}

#[test]
fn criterion_03_direct_access_bijection() {
    let _serial = gate();
    let mut swept = 0u64;
    for (inst, agg) in test_instances() {
        let idx = build(&inst, agg);
        let materialized = idx
            .instance
            .materialize_join(&agg, idx.cutoff(), 1_000_000)
            .unwrap();
        for l in 0..idx.cutoff() {
            let size = idx.bucket_sizes[l as usize];
            if size == 0 {
                continue;
            }
            let mut seen = HashSet::new();
            for tau in 1..=size {
                let r = idx.recursive_access(l, tau).unwrap();
                assert_eq!(r.score, Score::Bucket(l));
                assert!(seen.insert(result_key(&r)), "repeat in bucket {l} at {tau}");
                swept += 1;
            }
            let expect: HashSet<String> =
                enumerate_bucket(&materialized, Score::Bucket(l), &agg)
                    .iter()
                    .map(result_key)
                    .collect();
            assert_eq!(seen, expect, "bucket {l} content");
        }
    }
    println!(
        "criterion 03 direct-access bijection: PASS — {swept} ranked accesses, \
         every bucket recovered exactly once"
    );
}

/// Shared statistical gate: per-result z <= 4, mean size within 2%, pairwise
/// indicator correlation < 0.02.
fn assert_distribution(
    label: &str,
    samples: &[Vec<JoinResult>],
    expected: &[JoinResult],
) -> (f64, f64, f64) {
    let report = compare_frequencies(samples, expected).unwrap();
    assert!(
        report.max_abs_z <= 4.0,
        "{label}: max |z| = {}",
        report.max_abs_z
    );
    assert!(report.passed, "{label}: report failed: {report:?}");
    let mu = report.expected_sample_size;
    let rel = (report.mean_sample_size - mu).abs() / mu;
    assert!(rel < 0.02, "{label}: mean size off by {rel:.4}");
    let max_r = max_pairwise_indicator_correlation(samples, expected);
    assert!(max_r < 0.02, "{label}: max |r| = {max_r:.4}");
    (report.max_abs_z, rel, max_r)
}

#[test]
fn criterion_04_static_distribution() {
    let _serial = gate();
    let start = Instant::now();
    let idx = StaticIndex::build(
        two_relation_instance(),
        Aggregator::new(AggKind::Product, 2),
        Some(10),
        ConvolveMode::Schoolbook,
    )
    .unwrap();
    let expected = idx
        .instance
        .materialize_join(&idx.agg, idx.cutoff(), 1000)
        .unwrap();
    let mu: f64 = expected.iter().map(|r| r.probability).sum();
    assert!((mu - 1.125).abs() < 1e-12);
    let root = SplitRng::new(0xACCE55);
    let samples: Vec<Vec<JoinResult>> = (0..TRIALS)
        .map(|i| idx.query(&root.child(i as u64)).unwrap())
        .collect();
    let (max_z, mean_rel, max_r) = assert_distribution("static", &samples, &expected);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "distribution test took {elapsed:.1}s");
    println!(
        "criterion 04 static distribution: PASS — {TRIALS} queries, max |z| = {max_z:.2}, \
         mean size within {:.2}%, max |r| = {max_r:.3} ({elapsed:.1}s)",
        mean_rel * 100.0
    );
}

#[test]
fn criterion_05_oneshot_equivalence() {
    let _serial = gate();
    // batch resolution equals per-request ranked access, exhaustively
    let mut requests_checked = 0u64;
    for (inst, agg) in test_instances() {
        let idx = build(&inst, agg);
        let (x, mut y) = build_xy(&idx).unwrap();
        let mut requests = Vec::new();
        for l in 0..idx.cutoff() {
            for tau in 1..=idx.bucket_sizes[l as usize] {
                requests.push((l, tau));
            }
        }
        if requests.is_empty() {
            continue;
        }
        let (batch, stats) =
            batch_recursive_access_with_stats(&idx, &x, &mut y, &requests).unwrap();
        for ((l, tau), got) in requests.iter().zip(&batch) {
            let want = idx.recursive_access(*l, *tau).unwrap();
            assert_eq!(&want, got, "batch mismatch at ({l}, {tau})");
        }
        assert_eq!(stats.radix_sorts, stats.units, "one sort per unit");
        for (moved, budget) in &stats.cursor_movement {
            assert!(moved <= budget, "cursor overran its array");
        }
        requests_checked += requests.len() as u64;
    }

    // the one-shot sampler passes the same statistical gate as the index
    let idx = StaticIndex::build(
        two_relation_instance(),
        Aggregator::new(AggKind::Product, 2),
        Some(10),
        ConvolveMode::Schoolbook,
    )
    .unwrap();
    let expected = idx
        .instance
        .materialize_join(&idx.agg, idx.cutoff(), 1000)
        .unwrap();
    // a handful of full end-to-end runs must match the indexed query stream
    // for stream, then the shared-build fast path carries the trial volume
    // (preprocessing is deterministic; all randomness enters afterwards)
    for seed in [3u64, 17, 2024] {
        let rng = SplitRng::new(seed);
        let full = oneshot_sample(
            two_relation_instance(),
            idx.agg,
            Some(10),
            ConvolveMode::Schoolbook,
            &rng,
        )
        .unwrap();
        assert_eq!(full, idx.query(&rng).unwrap());
    }
    let (x, mut y) = build_xy(&idx).unwrap();
    let root = SplitRng::new(0x05E07);
    let samples: Vec<Vec<JoinResult>> = (0..TRIALS)
        .map(|i| {
            let rng = root.child(i as u64);
            let draw = draw_requests(
                &idx.bucket_sizes,
                idx.tail_size,
                &idx.agg,
                idx.cutoff(),
                &rng,
            );
            let retrieved = batch_recursive_access(&idx, &x, &mut y, &draw.requests).unwrap();
            let mut out = Vec::new();
            for ((l, tau), r) in draw.requests.iter().zip(retrieved) {
                let upper = idx.agg.bucket_upper(Score::Bucket(*l), idx.cutoff());
                if keep(&rng, *l, *tau, r.probability, upper).unwrap() {
                    out.push(r);
                }
            }
            out
        })
        .collect();
    let (max_z, mean_rel, max_r) = assert_distribution("oneshot", &samples, &expected);
    println!(
        "criterion 05 one-shot equivalence: PASS — {requests_checked} exhaustive requests \
         match sequential access; {TRIALS} one-shot samples, max |z| = {max_z:.2}, \
         mean within {:.2}%, max |r| = {max_r:.3}",
        mean_rel * 100.0
    );
}

fn shuffled<T: Clone>(items: &[T], rng: &mut SplitRng) -> Vec<T> {
    let mut v: Vec<T> = items.to_vec();
    for i in (1..v.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        v.swap(i, j);
    }
    v
}

#[test]
fn criterion_06_dynamic_sandwich() {
    let _serial = gate();
    let mut checked = 0u64;
    let mut shuffle_rng = SplitRng::new(0xD15);
    for (instance_id, (inst, agg)) in test_instances().into_iter().enumerate() {
        let mut events = Vec::new();
        for (rel_id, rel) in inst.relations.iter().enumerate() {
            for t in &rel.tuples {
                events.push((rel_id, t.values.clone(), t.weight));
            }
        }
        let schemas: Vec<Vec<String>> =
            inst.relations.iter().map(|r| r.schema.clone()).collect();
        for order in 0..3 {
            let stream = shuffled(&events, &mut shuffle_rng);
            let mut dyn_idx = DynamicIndex::new(&schemas, agg, None).unwrap();
            for (rel_id, values, w) in stream {
                dyn_idx.insert(rel_id, values, w).unwrap();
            }
            // fresh exact preprocess over the same snapshot and cutoff
            let snapshot = dyn_idx.snapshot_instance().unwrap();
            let static_idx = StaticIndex::preprocess(
                snapshot,
                agg,
                Some(dyn_idx.cutoff()),
                ConvolveMode::Schoolbook,
            )
            .unwrap();
            let descendants = dyn_idx.tree.descendant_counts();
            for node in 0..schemas.len() {
                let bound = 1u128 << descendants[node];
                for (t, approx_slots) in dyn_idx.w_tables(node).iter().enumerate() {
                    let values = dyn_idx.tuple_values(node, t);
                    let s_t = static_idx.instance.relations[node]
                        .tuples
                        .iter()
                        .position(|st| st.values.as_slice() == values)
                        .expect("same tuples");
                    for (slot, approx) in approx_slots.iter().enumerate() {
                        for (sc, (&a, &e)) in approx
                            .iter()
                            .zip(&static_idx.w[node][s_t][slot])
                            .enumerate()
                        {
                            assert!(
                                e <= a && a <= bound * e,
                                "instance {instance_id} order {order} node {node} tuple {t} \
                                 slot {slot} score {sc}: exact {e}, approx {a}, bound {bound}"
                            );
                            checked += 1;
                        }
                    }
                }
                // aggregate rounding: exact sum <= rounded < 2 * exact sum
                for (m_hat, m_tilde) in dyn_idx.group_aggregate_iter(node) {
                    for (&h, &t) in m_hat.iter().zip(m_tilde) {
                        if h == 0 {
                            assert_eq!(t, 0);
                        } else {
                            assert!(h <= t && t < 2 * h);
                        }
                    }
                }
            }
        }
    }
    println!(
        "criterion 06 dynamic sandwich: PASS — {checked} entries within \
         [W, 2^D * W] across 3 replay orders per instance"
    );
}

#[test]
fn criterion_07_dynamic_distribution() {
    let _serial = gate();
    let inst = two_relation_instance();
    let schemas: Vec<Vec<String>> = inst.relations.iter().map(|r| r.schema.clone()).collect();
    let agg = Aggregator::new(AggKind::Product, 2);
    let mut dyn_idx = DynamicIndex::new(&schemas, agg, Some(10)).unwrap();
    for (rel_id, rel) in inst.relations.iter().enumerate() {
        for t in &rel.tuples {
            dyn_idx.insert(rel_id, t.values.clone(), t.weight).unwrap();
        }
    }
    let expected = inst
        .materialize_join(&agg, dyn_idx.cutoff(), 1000)
        .unwrap();

    let root = SplitRng::new(0xD1F);
    let mut samples = Vec::with_capacity(TRIALS);
    let mut dummies = 0u64;
    let mut reals = 0u64;
    for i in 0..TRIALS {
        let (sample, stats) = dyn_idx.query(&root.child(i as u64)).unwrap();
        debug_assert_eq!(stats.accesses, stats.dummies + stats.reals);
        dummies += stats.dummies;
        reals += stats.reals;
        samples.push(sample);
    }
    let (max_z, mean_rel, max_r) = assert_distribution("dynamic", &samples, &expected);
    // dummy budget: the superset is at most 2^D_root times the real bucket
    let d_root = dyn_idx.tree.descendant_counts()[dyn_idx.tree.root];
    let budget = ((1u64 << d_root) - 1) as f64;
    let ratio = dummies as f64 / reals.max(1) as f64;
    assert!(
        dummies as f64 <= budget * reals as f64 * 1.1 + 16.0,
        "dummy ratio {ratio:.3} exceeds 2^{d_root} - 1 = {budget}"
    );

    // a maintained one-shot sample has the same per-result law
    let maintain_trials = 100_000;
    let m_root = SplitRng::new(0xFEED);
    let mut final_sets = Vec::with_capacity(maintain_trials);
    for i in 0..maintain_trials {
        let dyn_idx = DynamicIndex::new(&schemas, agg, Some(10)).unwrap();
        let mut maintainer =
            joinss::dynamic::OneshotMaintainer::new(dyn_idx, m_root.child(i as u64));
        for (rel_id, rel) in inst.relations.iter().enumerate() {
            for t in &rel.tuples {
                maintainer
                    .insert(rel_id, t.values.clone(), t.weight)
                    .unwrap();
            }
        }
        final_sets.push(maintainer.sample);
    }
    let report = compare_frequencies(&final_sets, &expected).unwrap();
    assert!(
        report.max_abs_z <= 4.0 && report.passed,
        "maintained sample distribution: {report:?}"
    );
    println!(
        "criterion 07 dynamic distribution: PASS — {TRIALS} queries (max |z| = {max_z:.2}, \
         mean within {:.2}%, max |r| = {max_r:.3}), dummy:real ratio {ratio:.3} \
         within budget {budget}, {maintain_trials} maintained replays max |z| = {:.2}",
        mean_rel * 100.0,
        report.max_abs_z
    );
}

#[test]
fn criterion_08_convolution_paths() {
    let _serial = gate();
    let agg = Aggregator::new(AggKind::Product, 2);
    let mut rng = SplitRng::new(0xFF7);
    for trial in 0..1000 {
        let cutoff = 4 + (rng.next_u64() % 60) as u32;
        let len = cutoff as usize + 1;
        let mask = (1u128 << 40) - 1;
        let a: Vec<u128> = (0..len).map(|_| u128::from(rng.next_u64()) & mask).collect();
        let b: Vec<u128> = (0..len).map(|_| u128::from(rng.next_u64()) & mask).collect();
        let shift = (rng.next_u64() % (cutoff as u64 + 1)) as usize;
        let exact = convolve_schoolbook(&a, &b, shift, &agg, cutoff).unwrap();
        let fft = convolve_fft(&a, &b, shift, &agg, cutoff).unwrap();
        assert_eq!(exact, fft, "trial {trial} cutoff {cutoff} shift {shift}");
    }
    println!(
        "criterion 08 convolution paths: PASS — FFT equals exact schoolbook \
         on 1000 random triples with entries up to 2^40"
    );
}

#[test]
fn criterion_09_coarse_scaling() {
    let _serial = gate();
    // static build: chain joins, doubling input, factor <= 2.6 per doubling
    let sizes = [1usize << 12, 1 << 13, 1 << 14, 1 << 15];
    let mut build_times = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let mut best = f64::INFINITY;
        for round in 0..3 {
            let inst = chain_instance(3, n, 0.75, (0.05, 1.0), 40 + i as u64 + round);
            let agg = Aggregator::new(AggKind::Product, 3);
            let start = Instant::now();
            let idx = StaticIndex::build(inst, agg, None, ConvolveMode::Schoolbook).unwrap();
            best = best.min(start.elapsed().as_secs_f64());
            std::hint::black_box(idx.total_join);
        }
        build_times.push(best);
    }
    let mut max_build_ratio: f64 = 0.0;
    for w in build_times.windows(2) {
        max_build_ratio = max_build_ratio.max(w[1] / w[0]);
    }
    assert!(
        max_build_ratio <= 2.6,
        "build time ratio per doubling {max_build_ratio:.2} (times {build_times:?})"
    );

    // one-shot with expected sample size far above the input size: total
    // time grows subquadratically (well below 4x per doubling)
    let mut oneshot_times = Vec::new();
    let mut mus = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut mu = 0usize;
        for round in 0..2 {
            let inst = chain_instance(2, n, 0.75, (0.9, 1.0), 80 + i as u64 + round);
            let agg = Aggregator::new(AggKind::Product, 2);
            let start = Instant::now();
            let sample = oneshot_sample(
                inst,
                agg,
                None,
                ConvolveMode::Schoolbook,
                &SplitRng::new(7).child(i as u64),
            )
            .unwrap();
            best = best.min(start.elapsed().as_secs_f64());
            mu = sample.len();
        }
        oneshot_times.push(best);
        mus.push(mu);
    }
    assert!(
        mus[0] > sizes[0],
        "scaling instance must have sample size above input size, got {} <= {}",
        mus[0],
        sizes[0]
    );
    let mut max_oneshot_ratio: f64 = 0.0;
    for w in oneshot_times.windows(2) {
        max_oneshot_ratio = max_oneshot_ratio.max(w[1] / w[0]);
    }
    assert!(
        max_oneshot_ratio < 3.5,
        "one-shot ratio per doubling {max_oneshot_ratio:.2} (times {oneshot_times:?})"
    );
    println!(
        "criterion 09 coarse scaling: PASS — build ratio/doubling <= {max_build_ratio:.2} \
         (times {build_times:?}); one-shot ratio <= {max_oneshot_ratio:.2} with sample \
         sizes {mus:?} vs inputs {sizes:?}. Not reproduced (by design): exact log-power \
         exponents, the O(1) meta-stage constant, and the maintained-sample update bound \
         (distribution correctness stands in, criterion 07)"
    );
}

#[test]
fn criterion_10_determinism() {
    let _serial = gate();
    use joinss::index_io::{deserialize_index, serialize_index};
    let dir = std::env::temp_dir().join(format!("joinss-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(
        dir.join("r1.csv"),
        "A,B,weight\na1,b1,1.0\na2,b1,0.5\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("r2.csv"),
        "B,C,weight\nb1,c1,0.5\nb1,c2,0.25\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("q.json"),
        r#"{"relations": [
            {"name": "R1", "file": "r1.csv"},
            {"name": "R2", "file": "r2.csv"}
        ], "aggregator": "product", "seed": 7}"#,
    )
    .unwrap();
    let run = |args: &[String]| -> (i32, Vec<u8>) {
        let mut out = Vec::new();
        let code = joinss::cli::run_command(args, &mut out);
        (code, out)
    };
    let argv = |s: &str| -> Vec<String> {
        std::iter::once("joinss".to_string())
            .chain(s.split(' ').map(|t| t.to_string()))
            .collect()
    };
    let q = dir.join("q.json").display().to_string();
    let idx_path = dir.join("idx.bin").display().to_string();
    let (code, _) = run(&argv(&format!("build -q {q} -o {idx_path}")));
    assert_eq!(code, 0);

    let sample_cmd = argv(&format!("sample -i {idx_path} -n 5 --seed 7"));
    let (c1, out1) = run(&sample_cmd);
    let (c2, out2) = run(&sample_cmd);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(out1, out2, "repeated runs must be byte-identical");
    for line in String::from_utf8(out1.clone()).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.is_array(), "NDJSON line must be a JSON array");
    }

    // serialized index equals the in-process build under the same seeds
    let idx = deserialize_index(std::fs::File::open(dir.join("idx.bin")).unwrap()).unwrap();
    let spec = joinss::query_spec::QuerySpec::from_file(&dir.join("q.json"))
        .map(|mut s| {
            s.resolve_paths(&dir.join("q.json"));
            s
        })
        .unwrap();
    let instance = joinss::query_spec::load_relations(&spec).unwrap();
    let in_process = StaticIndex::build(
        instance,
        Aggregator::new(AggKind::Product, 2),
        None,
        ConvolveMode::Schoolbook,
    )
    .unwrap();
    let root = SplitRng::new(7);
    for i in 0..5 {
        assert_eq!(
            in_process.query(&root.child(i)).unwrap(),
            idx.query(&root.child(i)).unwrap()
        );
    }
    // round-trip again through a buffer
    let mut buf = Vec::new();
    serialize_index(&idx, &mut buf).unwrap();
    let again = deserialize_index(&buf[..]).unwrap();
    for i in 0..5 {
        assert_eq!(
            idx.query(&root.child(i)).unwrap(),
            again.query(&root.child(i)).unwrap()
        );
    }
    let (c3, oneshot1) = run(&argv(&format!("oneshot -q {q} --seed 9")));
    let (c4, oneshot2) = run(&argv(&format!("oneshot -q {q} --seed 9")));
    assert_eq!((c3, c4), (0, 0));
    assert_eq!(oneshot1, oneshot2);
    println!(
        "criterion 10 determinism: PASS — identical seeds give byte-identical CLI \
         output across runs and serialization round-trips"
    );
}
