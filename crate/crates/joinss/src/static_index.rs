//! The static sampling index: per-tuple subtree counts stratified by score,
//! per-key aggregates, prefix sums for ranked access, and the two-stage
//! query that turns them into independent subset samples.
//!
//! For node `i` with children `c_0..c_{m-1}`, `w[i][t][s]` counts the join
//! results of the partial subtree {tuple `t` of `i`, plus the subtrees of
//! `c_s..`} by combined score (tuple score included). Slot 0 therefore
//! covers the whole subtree below `i` through `t`. `m[c][g]` sums slot-0
//! arrays over the tuples of child `c` in key group `g`. Ranked access walks
//! these counts: locate the node tuple by prefix sum, split the residual
//! rank over (child score, remainder score) pairs, and recurse.

use std::sync::OnceLock;

use crate::convolve::{convolve, slot_pairs, ConvolveMode};
use crate::error::{Error, Result};
use crate::instance::{Instance, JoinResult, DEFAULT_RESULT_CAP};
use crate::rng::SplitRng;
use crate::score::{integral_edge_cover, result_score, Aggregator, Score, ScoreParams};

#[derive(Debug, Clone)]
pub struct StaticIndex {
    pub instance: Instance,
    pub params: ScoreParams,
    pub agg: Aggregator,
    /// `w[node][tuple][slot][score_slot]`, score slot `L` = tail.
    pub w: Vec<Vec<Vec<Vec<u128>>>>,
    /// `m[node][group][score_slot]`, groups in relation group order.
    pub m: Vec<Vec<Vec<u128>>>,
    /// `prefix[node][score_slot][tuple]`: running sums of the slot-0 counts
    /// over the canonical tuple order. Group-local sums come from range
    /// differences.
    pub prefix: Vec<Vec<Vec<u128>>>,
    /// |B_l| for l < L.
    pub bucket_sizes: Vec<u128>,
    pub tail_size: u128,
    pub total_join: u128,
    tail_cache: OnceLock<Vec<JoinResult>>,
}

/// Score-slot indicator array: one way to realize exactly this score.
fn indicator(slot: usize, slots: usize) -> Vec<u128> {
    let mut v = vec![0u128; slots];
    v[slot] = 1;
    v
}

impl StaticIndex {
    /// Semi-join reduce `instance` and build the full index.
    pub fn build(
        mut instance: Instance,
        agg: Aggregator,
        cutoff_override: Option<u32>,
        mode: ConvolveMode,
    ) -> Result<StaticIndex> {
        instance.semijoin_reduce();
        Self::preprocess(instance, agg, cutoff_override, mode)
    }

    /// Build the index over an already-reduced instance.
    pub fn preprocess(
        mut instance: Instance,
        agg: Aggregator,
        cutoff_override: Option<u32>,
        mode: ConvolveMode,
    ) -> Result<StaticIndex> {
        let rho = integral_edge_cover(&instance.tree.schemas)?;
        let params = ScoreParams::derive(rho, instance.input_size(), cutoff_override);
        let cutoff = params.cutoff;
        let slots = cutoff as usize + 1;
        instance.assign_scores(cutoff)?;

        let k = instance.relation_count();
        let mut w: Vec<Vec<Vec<Vec<u128>>>> = vec![Vec::new(); k];
        let mut m: Vec<Vec<Vec<u128>>> = vec![Vec::new(); k];

        for &node in &instance.tree.bottom_up() {
            let rel = &instance.relations[node];
            let children = &instance.tree.children[node];
            let mut node_w: Vec<Vec<Vec<u128>>> = Vec::with_capacity(rel.len());
            for t in 0..rel.len() {
                let own = rel.scores[t].slot(cutoff);
                if children.is_empty() {
                    node_w.push(vec![indicator(own, slots)]);
                    continue;
                }
                let mut slots_arrays = vec![Vec::new(); children.len()];
                // run the child slots back to front: `running` is the
                // score-count array of the yet-unprocessed suffix, excluding
                // the tuple's own score
                let mut running = indicator(agg.slot_identity(cutoff), slots);
                let zeros = vec![0u128; slots];
                for s in (0..children.len()).rev() {
                    let child = children[s];
                    let key = instance.child_key(node, s, t);
                    // a dangling tuple (only possible pre-reduction) has no
                    // matching child group and counts nothing
                    let m_arr = match instance.relations[child].group_id(&key) {
                        Some(group) => &m[child][group],
                        None => &zeros,
                    };
                    slots_arrays[s] = convolve(m_arr, &running, own, &agg, cutoff, mode)?;
                    if s > 0 {
                        running = convolve(
                            m_arr,
                            &running,
                            agg.slot_identity(cutoff),
                            &agg,
                            cutoff,
                            mode,
                        )?;
                    }
                }
                node_w.push(slots_arrays);
            }
            // key-group sums of the slot-0 arrays
            let mut node_m: Vec<Vec<u128>> = Vec::with_capacity(rel.groups.len());
            for (_, range) in &rel.groups {
                let mut acc = vec![0u128; slots];
                for t in range.clone() {
                    for (slot, v) in node_w[t][0].iter().enumerate() {
                        acc[slot] = acc[slot].checked_add(*v).ok_or_else(|| {
                            Error::Capacity("group aggregate overflows u128".into())
                        })?;
                    }
                }
                node_m.push(acc);
            }
            w[node] = node_w;
            m[node] = node_m;
        }

        let prefix = build_prefix_sums(&instance, &w, slots)?;

        let root = instance.tree.root;
        let mut bucket_sizes = vec![0u128; cutoff as usize];
        if let Some(root_m) = m[root].first() {
            bucket_sizes.copy_from_slice(&root_m[..cutoff as usize]);
        }
        let total_join = instance.count_join()?;
        let bucket_sum: u128 = bucket_sizes.iter().sum();
        let tail_size = total_join
            .checked_sub(bucket_sum)
            .ok_or_else(|| Error::Capacity("bucket sizes exceed join count".into()))?;
        debug_assert_eq!(
            tail_size,
            m[root].first().map_or(0, |g| g[cutoff as usize]),
            "tail by subtraction must match the tail score slot"
        );

        Ok(StaticIndex {
            instance,
            params,
            agg,
            w,
            m,
            prefix,
            bucket_sizes,
            tail_size,
            total_join,
            tail_cache: OnceLock::new(),
        })
    }

    /// Reassemble an index from stored tables (deserialization path).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        instance: Instance,
        params: ScoreParams,
        agg: Aggregator,
        w: Vec<Vec<Vec<Vec<u128>>>>,
        m: Vec<Vec<Vec<u128>>>,
        prefix: Vec<Vec<Vec<u128>>>,
        bucket_sizes: Vec<u128>,
        tail_size: u128,
        total_join: u128,
    ) -> StaticIndex {
        StaticIndex {
            instance,
            params,
            agg,
            w,
            m,
            prefix,
            bucket_sizes,
            tail_size,
            total_join,
            tail_cache: OnceLock::new(),
        }
    }

    pub fn cutoff(&self) -> u32 {
        self.params.cutoff
    }

    /// Slot-0 count array for a tuple (whole subtree through it).
    pub fn w_empty(&self, node: usize, tuple: usize) -> &[u128] {
        &self.w[node][tuple][0]
    }

    /// The tail bucket, materialized on first touch exactly once.
    pub fn tail_results(&self) -> Result<&[JoinResult]> {
        if self.tail_cache.get().is_none() {
            let all = self.instance.materialize_join(
                &self.agg,
                self.params.cutoff,
                DEFAULT_RESULT_CAP,
            )?;
            let tail: Vec<JoinResult> =
                all.into_iter().filter(|r| r.score.is_tail()).collect();
            // single-flight: a racing fill computed the same value
            let _ = self.tail_cache.set(tail);
        }
        Ok(self.tail_cache.get().expect("just filled"))
    }

    /// The rank-`tau` (1-based) result of bucket `l`, deterministic across
    /// calls.
    pub fn recursive_access(&self, l: u32, tau: u128) -> Result<JoinResult> {
        if l >= self.params.cutoff {
            return Err(Error::InvalidArgument(format!(
                "score {l} is in the tail; access it via tail_results"
            )));
        }
        let size = self.bucket_sizes[l as usize];
        if tau == 0 || tau > size {
            return Err(Error::RankOutOfRange {
                rank: tau,
                max: size,
            });
        }
        let root = self.instance.tree.root;
        let range = 0..self.instance.relations[root].len();
        let mut components: Vec<(usize, usize)> = Vec::new();
        self.access_entry(root, range, l as usize, tau, &mut components)?;
        Ok(self.assemble(&components))
    }

    /// Locate the node tuple covering `tau` within a key group, then descend.
    fn access_entry(
        &self,
        node: usize,
        range: std::ops::Range<usize>,
        score_slot: usize,
        tau: u128,
        components: &mut Vec<(usize, usize)>,
    ) -> Result<()> {
        let pref = &self.prefix[node][score_slot];
        let base = if range.start == 0 {
            0
        } else {
            pref[range.start - 1]
        };
        // binary search: smallest t in the group with cumulative count >= tau
        let (mut lo, mut hi) = (range.start, range.end);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if pref[mid] - base >= tau {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        if lo >= range.end {
            return Err(Error::RankOutOfRange {
                rank: tau,
                max: pref.get(range.end.wrapping_sub(1)).copied().unwrap_or(0) - base,
            });
        }
        let t = lo;
        let before = if t == range.start {
            0
        } else {
            pref[t - 1] - base
        };
        let tau = tau - before;
        components.push((node, t));
        if self.instance.tree.is_leaf(node) {
            debug_assert_eq!(tau, 1);
            return Ok(());
        }
        self.access_slots(node, t, 0, score_slot, tau, components)
    }

    /// Split the residual rank over (child score, remainder score) pairs and
    /// recurse into the child subtree and the remaining sibling slots.
    fn access_slots(
        &self,
        node: usize,
        tuple: usize,
        slot: usize,
        score_slot: usize,
        tau: u128,
        components: &mut Vec<(usize, usize)>,
    ) -> Result<()> {
        let cutoff = self.params.cutoff;
        let children = &self.instance.tree.children[node];
        let child = children[slot];
        let own = self.instance.relations[node].scores[tuple].slot(cutoff);
        let key = self.instance.child_key(node, slot, tuple);
        let group = self.instance.relations[child]
            .group_id(&key)
            .ok_or_else(|| Error::RankOutOfRange { rank: tau, max: 0 })?;
        let m_arr = &self.m[child][group];
        let last = slot + 1 == children.len();
        let next_indicator;
        let next_arr: &[u128] = if last {
            next_indicator = indicator(own, cutoff as usize + 1);
            &next_indicator
        } else {
            &self.w[node][tuple][slot + 1]
        };

        let mut remaining = tau;
        for (s1, s2) in slot_pairs(&self.agg, score_slot, cutoff) {
            let count = m_arr[s1]
                .checked_mul(next_arr[s2])
                .ok_or_else(|| Error::Capacity("pair count overflows u128".into()))?;
            if count >= remaining {
                let denom = next_arr[s2];
                let tau1 = remaining.div_ceil(denom);
                let tau2 = (remaining - 1) % denom + 1;
                let child_range = self.instance.relations[child].groups[group].1.clone();
                self.access_entry(child, child_range, s1, tau1, components)?;
                if last {
                    debug_assert_eq!(s2, own);
                    debug_assert_eq!(tau2, 1);
                } else {
                    self.access_slots(node, tuple, slot + 1, s2, tau2, components)?;
                }
                return Ok(());
            }
            remaining -= count;
        }
        Err(Error::RankOutOfRange {
            rank: tau,
            max: tau - remaining,
        })
    }

    /// Join the located per-node tuples into one result.
    pub fn assemble(&self, components: &[(usize, usize)]) -> JoinResult {
        let mut values = std::collections::BTreeMap::new();
        let mut probability = self.agg.probability_identity();
        let mut scores = Vec::with_capacity(components.len());
        for &(node, t) in components {
            let rel = &self.instance.relations[node];
            let tuple = &rel.tuples[t];
            for (a, v) in rel.schema.iter().zip(&tuple.values) {
                values.entry(a.clone()).or_insert_with(|| v.clone());
            }
            probability = self.agg.combine_probability(probability, tuple.weight);
            scores.push(rel.scores[t]);
        }
        let score = result_score(&scores, &self.agg, self.params.cutoff)
            .expect("components nonempty");
        JoinResult {
            values,
            probability,
            score,
        }
    }

    /// One subset sampling query. Distinct `rng` streams give independent
    /// samples; the same stream replays the same sample.
    pub fn query(&self, rng: &SplitRng) -> Result<Vec<JoinResult>> {
        let draw = draw_requests(
            &self.bucket_sizes,
            self.tail_size,
            &self.agg,
            self.params.cutoff,
            rng,
        );
        let mut out = Vec::new();
        for (l, tau) in draw.requests {
            let result = self.recursive_access(l, tau)?;
            let upper = self.agg.bucket_upper(Score::Bucket(l), self.params.cutoff);
            if keep(rng, l, tau, result.probability, upper)? {
                out.push(result);
            }
        }
        if !draw.tail_ranks.is_empty() {
            let tail = self.tail_results()?;
            let upper = self.agg.bucket_upper(Score::Tail, self.params.cutoff);
            for tau in draw.tail_ranks {
                let result = tail[tau as usize - 1].clone();
                if keep(rng, self.params.cutoff, tau, result.probability, upper)? {
                    out.push(result);
                }
            }
        }
        Ok(out)
    }
}

/// Global prefix sums of the slot-0 arrays per (node, score slot).
pub fn build_prefix_sums(
    instance: &Instance,
    w: &[Vec<Vec<Vec<u128>>>],
    slots: usize,
) -> Result<Vec<Vec<Vec<u128>>>> {
    let mut prefix = Vec::with_capacity(instance.relation_count());
    for node in 0..instance.relation_count() {
        let n = instance.relations[node].len();
        let mut per_score = vec![vec![0u128; n]; slots];
        for slot in 0..slots {
            let mut run: u128 = 0;
            for t in 0..n {
                run = run.checked_add(w[node][t][0][slot]).ok_or_else(|| {
                    Error::Capacity("prefix sum overflows u128".into())
                })?;
                per_score[slot][t] = run;
            }
        }
        prefix.push(per_score);
    }
    Ok(prefix)
}

/// The `(bucket, rank)` requests and tail ranks of one query, drawn with the
/// labeled stream discipline shared by the static, one-shot, and dynamic
/// paths.
pub struct QueryDraw {
    pub requests: Vec<(u32, u128)>,
    pub tail_ranks: Vec<u128>,
}

pub fn draw_requests(
    bucket_sizes: &[u128],
    tail_size: u128,
    agg: &Aggregator,
    cutoff: u32,
    rng: &SplitRng,
) -> QueryDraw {
    let stage = rng.child_named("buckets");
    let mut requests = Vec::new();
    for (l, &size) in bucket_sizes.iter().enumerate() {
        let upper = agg.bucket_upper(Score::Bucket(l as u32), cutoff);
        let mut bucket_rng = stage.child(l as u64);
        for tau in rank_stream(size, upper, &mut bucket_rng) {
            requests.push((l as u32, tau));
        }
    }
    let mut tail_rng = rng.child_named("tail");
    let tail_upper = agg.bucket_upper(Score::Tail, cutoff);
    let tail_ranks = rank_stream(tail_size, tail_upper, &mut tail_rng);
    QueryDraw {
        requests,
        tail_ranks,
    }
}

/// Nonempty coin, then the conditioned first rank, then geometric jumps.
/// Ranks are 1-based and strictly increasing.
fn rank_stream(size: u128, p_upper: f64, rng: &mut SplitRng) -> Vec<u128> {
    let mut ranks = Vec::new();
    if size == 0 || p_upper <= 0.0 {
        return ranks;
    }
    let n = size as f64;
    let q = if p_upper >= 1.0 {
        1.0
    } else {
        -f64::exp_m1(n * f64::ln_1p(-p_upper))
    };
    if !rng.bernoulli(q) {
        return ranks;
    }
    let log1m = (-p_upper).ln_1p(); // -inf when p_upper = 1
    let first = if p_upper >= 1.0 {
        0.0
    } else {
        ((1.0 - q * rng.uniform()).ln() / log1m).floor()
    };
    let mut rank = (first as u128).min(size - 1) + 1;
    ranks.push(rank);
    while rank < size {
        let jump = if p_upper >= 1.0 {
            0
        } else {
            (rng.uniform_pos().ln() / log1m).floor() as u128
        };
        rank = match rank.checked_add(1 + jump) {
            Some(r) => r,
            None => break,
        };
        if rank <= size {
            ranks.push(rank);
        }
    }
    ranks
}

/// Rejection coin for a retrieved element, keyed by its bucket and rank so
/// the decision is identical however the element was fetched.
pub fn keep(rng: &SplitRng, l: u32, tau: u128, probability: f64, upper: f64) -> Result<bool> {
    // probabilities are folded in f64, so allow rounding-level overshoot
    if probability > upper * (1.0 + 1e-12) {
        return Err(Error::WeightAboveUpperBound {
            weight: probability,
            upper,
        });
    }
    let mut coin = rng
        .child_named("reject")
        .child(u64::from(l))
        .child(tau as u64)
        .child((tau >> 64) as u64);
    Ok(coin.uniform() < (probability / upper).min(1.0))
}
