//! One-shot sampling: resolve a whole batch of (bucket, rank) requests with
//! radix sorts and resumable linear scans instead of per-request binary
//! searches.
//!
//! Requests become quintuples (node, child slot, conditioning tuple, score,
//! rank). Per (node, slot) the batch is radix-sorted by rank and grouped by
//! (conditioning tuple, score); each group co-traverses its prefix array
//! (X) or its cumulative pair array (Y) once, resuming and never restarting,
//! then spawns the child and sibling batches. The output multiset equals
//! per-request ranked access.

use std::collections::BTreeMap;

use crate::convolve::slot_pairs;
use crate::error::{Error, Result};
use crate::instance::{Instance, JoinResult};
use crate::rng::SplitRng;
use crate::score::{Aggregator, Score};
use crate::static_index::{build_prefix_sums, draw_requests, keep, StaticIndex};
use crate::ConvolveMode;

/// One pending ranked-access invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quintuple {
    /// Request-path id linking spawned children back to their parent.
    pub id: usize,
    /// Conditioning context: a key group (entry from the parent side) or a
    /// fixed tuple (descent across sibling slots).
    pub cond: usize,
    pub score_slot: usize,
    pub tau: u128,
}

/// Stable LSD radix sort on the 128-bit rank, 16-bit digits, pass count from
/// the widest rank present.
pub fn radix_sort_by_rank(mut batch: Vec<Quintuple>) -> Vec<Quintuple> {
    radix_sort_by(&mut batch, |q| q.tau);
    batch
}

fn radix_sort_by<T, F: Fn(&T) -> u128>(items: &mut Vec<T>, key: F) {
    let n = items.len();
    if n <= 1 {
        return;
    }
    let keys: Vec<u128> = items.iter().map(&key).collect();
    let max = keys.iter().copied().max().unwrap_or(0);
    let bits = 128 - max.leading_zeros();
    let passes = bits.div_ceil(16).max(1);
    // sort a permutation, then apply it once
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut next = vec![0u32; n];
    let mut counts = vec![0usize; 1 << 16];
    for pass in 0..passes {
        let shift = pass * 16;
        counts.fill(0);
        for &i in &order {
            counts[((keys[i as usize] >> shift) & 0xffff) as usize] += 1;
        }
        let mut acc = 0usize;
        for c in counts.iter_mut() {
            let here = *c;
            *c = acc;
            acc += here;
        }
        for &i in &order {
            let digit = ((keys[i as usize] >> shift) & 0xffff) as usize;
            next[counts[digit]] = i;
            counts[digit] += 1;
        }
        std::mem::swap(&mut order, &mut next);
    }
    let mut slots: Vec<Option<T>> = items.drain(..).map(Some).collect();
    items.extend(order.iter().map(|&i| slots[i as usize].take().expect("permutation")));
}

/// Prefix arrays (X): per (node, score slot), running sums of the slot-0
/// counts over canonical tuple order; a group's sums are range differences.
pub struct XArray {
    pub prefix: Vec<Vec<Vec<u128>>>,
}

/// Cumulative pair arrays (Y), materialized per touched (node, slot, tuple,
/// score) during a batch call. Each entry is one multiply-add over stored
/// M and W values.
pub struct YArray {
    pub built: BTreeMap<(usize, usize, usize, usize), Vec<u128>>,
}

impl YArray {
    pub fn new() -> YArray {
        YArray {
            built: BTreeMap::new(),
        }
    }

    /// Cumulative products over the slot pairs of `score_slot`, aligned with
    /// [`slot_pairs`] order.
    pub fn get(
        &mut self,
        idx: &StaticIndex,
        node: usize,
        slot: usize,
        tuple: usize,
        score_slot: usize,
    ) -> Result<&[u128]> {
        let key = (node, slot, tuple, score_slot);
        if !self.built.contains_key(&key) {
            let arr = build_pair_cumulative(idx, node, slot, tuple, score_slot)?;
            self.built.insert(key, arr);
        }
        Ok(self.built.get(&key).expect("just built"))
    }

    /// Build every Y array of the index; for tests and small instances only.
    pub fn materialize_all(idx: &StaticIndex) -> Result<YArray> {
        let mut y = YArray::new();
        for node in 0..idx.instance.relation_count() {
            for slot in 0..idx.instance.tree.children[node].len() {
                for tuple in 0..idx.instance.relations[node].len() {
                    for score_slot in 0..idx.cutoff() as usize {
                        y.get(idx, node, slot, tuple, score_slot)?;
                    }
                }
            }
        }
        Ok(y)
    }
}

impl Default for YArray {
    fn default() -> Self {
        Self::new()
    }
}

fn build_pair_cumulative(
    idx: &StaticIndex,
    node: usize,
    slot: usize,
    tuple: usize,
    score_slot: usize,
) -> Result<Vec<u128>> {
    let cutoff = idx.cutoff();
    let children = &idx.instance.tree.children[node];
    let child = children[slot];
    let own = idx.instance.relations[node].scores[tuple].slot(cutoff);
    let key = idx.instance.child_key(node, slot, tuple);
    let zeros = vec![0u128; cutoff as usize + 1];
    let m_arr: &[u128] = match idx.instance.relations[child].group_id(&key) {
        Some(g) => &idx.m[child][g],
        None => &zeros,
    };
    let last = slot + 1 == children.len();
    let next_indicator = if last {
        let mut v = zeros.clone();
        v[own] = 1;
        v
    } else {
        Vec::new()
    };
    let next_arr: &[u128] = if last {
        &next_indicator
    } else {
        &idx.w[node][tuple][slot + 1]
    };
    let mut out = Vec::new();
    let mut run: u128 = 0;
    for (s1, s2) in slot_pairs(&idx.agg, score_slot, cutoff) {
        let term = m_arr[s1]
            .checked_mul(next_arr[s2])
            .ok_or_else(|| Error::Capacity("pair product overflows u128".into()))?;
        run = run
            .checked_add(term)
            .ok_or_else(|| Error::Capacity("pair sum overflows u128".into()))?;
        out.push(run);
    }
    Ok(out)
}

/// Build the query-time statistics from a finished index.
pub fn build_xy(idx: &StaticIndex) -> Result<(XArray, YArray)> {
    let prefix = build_prefix_sums(&idx.instance, &idx.w, idx.cutoff() as usize + 1)?;
    Ok((XArray { prefix }, YArray::new()))
}

/// Scan accounting for the resumable-cursor invariants.
#[derive(Debug, Default, Clone)]
pub struct BatchStats {
    pub radix_sorts: usize,
    pub units: usize,
    /// Per unit: total forward cursor movement and the total length of the
    /// arrays it was allowed to traverse.
    pub cursor_movement: Vec<(usize, usize)>,
}

enum Link {
    Leaf {
        node: usize,
        tuple: usize,
    },
    Inner {
        /// The located node tuple, owned by the slot-0 quintuple; sibling
        /// slots share it and must not re-add it.
        own: Option<(usize, usize)>,
        left: usize,
        right: Option<usize>,
    },
}

struct BatchState<'a> {
    idx: &'a StaticIndex,
    x: &'a XArray,
    y: &'a mut YArray,
    links: Vec<Option<Link>>,
    stats: BatchStats,
}

/// Resolve every `(bucket, rank)` request; output order matches the request
/// order, duplicates included.
pub fn batch_recursive_access(
    idx: &StaticIndex,
    x: &XArray,
    y: &mut YArray,
    requests: &[(u32, u128)],
) -> Result<Vec<JoinResult>> {
    let (results, _) = batch_recursive_access_with_stats(idx, x, y, requests)?;
    Ok(results)
}

pub fn batch_recursive_access_with_stats(
    idx: &StaticIndex,
    x: &XArray,
    y: &mut YArray,
    requests: &[(u32, u128)],
) -> Result<(Vec<JoinResult>, BatchStats)> {
    for &(l, tau) in requests {
        if l >= idx.cutoff() || tau == 0 || tau > idx.bucket_sizes[l as usize] {
            return Err(Error::RankOutOfRange {
                rank: tau,
                max: idx.bucket_sizes.get(l as usize).copied().unwrap_or(0),
            });
        }
    }
    let mut state = BatchState {
        idx,
        x,
        y,
        links: Vec::new(),
        stats: BatchStats::default(),
    };
    let root = idx.instance.tree.root;
    let seeds: Vec<Quintuple> = requests
        .iter()
        .enumerate()
        .map(|(id, &(l, tau))| {
            state.links.push(None);
            Quintuple {
                id,
                cond: 0, // the root's single (empty-key) group
                score_slot: l as usize,
                tau,
            }
        })
        .collect();
    entry_unit(&mut state, root, seeds)?;

    let mut out = Vec::with_capacity(requests.len());
    for id in 0..requests.len() {
        let mut components = Vec::new();
        collect(&state.links, id, &mut components);
        out.push(idx.assemble(&components));
    }
    Ok((out, state.stats))
}

fn collect(links: &[Option<Link>], id: usize, components: &mut Vec<(usize, usize)>) {
    match links[id].as_ref().expect("every quintuple resolved") {
        Link::Leaf { node, tuple } => components.push((*node, *tuple)),
        Link::Inner { own, left, right } => {
            if let Some(c) = own {
                components.push(*c);
            }
            collect(links, *left, components);
            if let Some(r) = right {
                collect(links, *r, components);
            }
        }
    }
}

/// Locate the covering tuple for every quintuple of `node` by one resumed
/// scan per (group, score) over the X array, then descend.
fn entry_unit(state: &mut BatchState, node: usize, batch: Vec<Quintuple>) -> Result<()> {
    if batch.is_empty() {
        return Ok(());
    }
    state.stats.units += 1;
    let sorted = radix_sort_by_rank(batch);
    state.stats.radix_sorts += 1;
    let mut groups: BTreeMap<(usize, usize), Vec<Quintuple>> = BTreeMap::new();
    for q in sorted {
        groups.entry((q.cond, q.score_slot)).or_default().push(q);
    }
    let is_leaf = state.idx.instance.tree.is_leaf(node);
    let mut slot_batch = Vec::new();
    let mut moved_total = 0usize;
    let mut budget_total = 0usize;
    for ((group, score_slot), qs) in groups {
        let range = state.idx.instance.relations[node]
            .groups
            .get(group)
            .map(|(_, r)| r.clone())
            .unwrap_or(0..0);
        let pref = &state.x.prefix[node][score_slot];
        let base = if range.start == 0 {
            0
        } else {
            pref[range.start - 1]
        };
        let mut cursor = range.start;
        budget_total += range.len();
        for q in qs {
            // the batch is rank-sorted, so the cursor only moves forward
            while cursor < range.end && pref[cursor] - base < q.tau {
                cursor += 1;
                moved_total += 1;
            }
            if cursor >= range.end {
                return Err(Error::RankOutOfRange {
                    rank: q.tau,
                    max: pref.get(range.end.wrapping_sub(1)).copied().unwrap_or(0) - base,
                });
            }
            let before = if cursor == range.start {
                0
            } else {
                pref[cursor - 1] - base
            };
            let residual = q.tau - before;
            if is_leaf {
                debug_assert_eq!(residual, 1);
                state.links[q.id] = Some(Link::Leaf {
                    node,
                    tuple: cursor,
                });
            } else {
                slot_batch.push(Quintuple {
                    id: q.id,
                    cond: cursor,
                    score_slot: q.score_slot,
                    tau: residual,
                });
            }
        }
    }
    state.stats.cursor_movement.push((moved_total, budget_total));
    if !is_leaf {
        slot_unit(state, node, 0, slot_batch)?;
    }
    Ok(())
}

/// Split every quintuple's residual rank over score pairs by one resumed
/// scan per (tuple, score) of the Y array, spawning the child-entry batch
/// and the next-sibling batch; children are resolved depth-first before the
/// sibling slot, mirroring the sequential recursion.
fn slot_unit(
    state: &mut BatchState,
    node: usize,
    slot: usize,
    batch: Vec<Quintuple>,
) -> Result<()> {
    if batch.is_empty() {
        return Ok(());
    }
    state.stats.units += 1;
    let cutoff = state.idx.cutoff();
    let children = state.idx.instance.tree.children[node].clone();
    let child = children[slot];
    let last = slot + 1 == children.len();
    let sorted = radix_sort_by_rank(batch);
    state.stats.radix_sorts += 1;
    let mut groups: BTreeMap<(usize, usize), Vec<Quintuple>> = BTreeMap::new();
    for q in sorted {
        groups.entry((q.cond, q.score_slot)).or_default().push(q);
    }
    let mut child_batch = Vec::new();
    let mut sibling_batch = Vec::new();
    let mut moved_total = 0usize;
    let mut budget_total = 0usize;
    for ((tuple, score_slot), qs) in groups {
        let pairs = slot_pairs(&state.idx.agg, score_slot, cutoff);
        let cumulative = state
            .y
            .get(state.idx, node, slot, tuple, score_slot)?
            .to_vec();
        let own = state.idx.instance.relations[node].scores[tuple].slot(cutoff);
        let next_arr: Vec<u128> = if last {
            let mut v = vec![0u128; cutoff as usize + 1];
            v[own] = 1;
            v
        } else {
            state.idx.w[node][tuple][slot + 1].clone()
        };
        let mut cursor = 0usize;
        budget_total += pairs.len();
        for q in qs {
            while cursor < pairs.len() && cumulative[cursor] < q.tau {
                cursor += 1;
                moved_total += 1;
            }
            if cursor >= pairs.len() {
                return Err(Error::RankOutOfRange {
                    rank: q.tau,
                    max: cumulative.last().copied().unwrap_or(0),
                });
            }
            let before = if cursor == 0 {
                0
            } else {
                cumulative[cursor - 1]
            };
            let residual = q.tau - before;
            let (s1, s2) = pairs[cursor];
            let denom = next_arr[s2];
            let tau1 = residual.div_ceil(denom);
            let tau2 = (residual - 1) % denom + 1;
            let key = state.idx.instance.child_key(node, slot, tuple);
            let child_group = state.idx.instance.relations[child]
                .group_id(&key)
                .ok_or(Error::RankOutOfRange {
                    rank: residual,
                    max: 0,
                })?;
            let left_id = state.links.len();
            state.links.push(None);
            child_batch.push(Quintuple {
                id: left_id,
                cond: child_group,
                score_slot: s1,
                tau: tau1,
            });
            let right = if last {
                debug_assert_eq!(s2, own);
                debug_assert_eq!(tau2, 1);
                None
            } else {
                let right_id = state.links.len();
                state.links.push(None);
                sibling_batch.push(Quintuple {
                    id: right_id,
                    cond: tuple,
                    score_slot: s2,
                    tau: tau2,
                });
                Some(right_id)
            };
            state.links[q.id] = Some(Link::Inner {
                own: if slot == 0 { Some((node, tuple)) } else { None },
                left: left_id,
                right,
            });
        }
    }
    state.stats.cursor_movement.push((moved_total, budget_total));
    entry_unit(state, child, child_batch)?;
    if !last {
        slot_unit(state, node, slot + 1, sibling_batch)?;
    }
    Ok(())
}

/// Produce one subset sample end to end: build the counting statistics,
/// draw the request multiset with the same stream discipline as an indexed
/// query, resolve all non-tail requests in one batch, and rejection-filter.
pub fn oneshot_sample(
    instance: Instance,
    agg: Aggregator,
    cutoff_override: Option<u32>,
    mode: ConvolveMode,
    rng: &SplitRng,
) -> Result<Vec<JoinResult>> {
    let idx = StaticIndex::build(instance, agg, cutoff_override, mode)?;
    let (x, mut y) = build_xy(&idx)?;
    let draw = draw_requests(
        &idx.bucket_sizes,
        idx.tail_size,
        &idx.agg,
        idx.cutoff(),
        rng,
    );
    let retrieved = batch_recursive_access(&idx, &x, &mut y, &draw.requests)?;
    let mut out = Vec::new();
    for ((l, tau), result) in draw.requests.iter().zip(retrieved) {
        let upper = idx.agg.bucket_upper(Score::Bucket(*l), idx.cutoff());
        if keep(rng, *l, *tau, result.probability, upper)? {
            out.push(result);
        }
    }
    if !draw.tail_ranks.is_empty() {
        let tail = idx.tail_results()?;
        let upper = idx.agg.bucket_upper(Score::Tail, idx.cutoff());
        for tau in draw.tail_ranks {
            let result = tail[tau as usize - 1].clone();
            if keep(rng, idx.cutoff(), tau, result.probability, upper)? {
                out.push(result);
            }
        }
    }
    Ok(out)
}
