//! Insert-only dynamic index.
//!
//! Exact counts are too expensive to maintain under insertions, so the
//! dynamic index stores upper bounds: per-key aggregates are kept both
//! exactly (`m_hat`, a running sum) and rounded up to the next power of two
//! (`m_tilde`); per-tuple subtree counts (`w`) are recomputed from the
//! rounded child aggregates, so a change only propagates to the parent when
//! a rounding boundary is crossed. Ranked access walks the same structures
//! as the static index; a rank that lands beyond an exact local total hits a
//! position the inflation invented, reported as a dummy and rejected by the
//! query. Doubling the input since the last rebuild triggers a rebuild from
//! scratch, which re-derives the bucket cutoff.
//!
//! Single writer: queries and inserts must not overlap.

use std::collections::{HashMap, HashSet};

use crate::convolve::{convolve_schoolbook, slot_pairs};
use crate::error::{Error, Result};
use crate::fenwick::Fenwick;
use crate::instance::{Instance, JoinResult, DEFAULT_RESULT_CAP};
use crate::join_tree::{build_join_tree, JoinTree};
use crate::relation::{Relation, Tuple, Value};
use crate::rng::SplitRng;
use crate::score::{integral_edge_cover, tuple_score, Aggregator, Score, ScoreParams};
use crate::static_index::{draw_requests, keep};

pub const INITIAL_REBUILD_THRESHOLD: u64 = 64;

/// Per-key-group state of one relation.
#[derive(Debug, Clone)]
struct Group {
    key: Vec<Value>,
    /// Tuple ids in insertion order; fenwick positions follow this order.
    members: Vec<usize>,
    /// One prefix-sum tree per score slot over the members' slot-0 counts.
    fenwicks: Vec<Fenwick>,
    /// Exact sums of the members' slot-0 counts.
    m_hat: Vec<u128>,
    /// `m_hat` rounded up to the next power of two (0 stays 0).
    m_tilde: Vec<u128>,
    /// How often each `m_tilde` entry changed since the last rebuild.
    tilde_changes: Vec<u32>,
}

#[derive(Debug, Clone)]
struct DynNode {
    schema: Vec<String>,
    key_positions: Vec<usize>,
    tuples: Vec<Tuple>,
    score_slots: Vec<usize>,
    /// (group id, position inside the group) per tuple.
    tuple_group: Vec<(usize, usize)>,
    /// Approximate per-tuple slot arrays, same layout as the static index.
    w: Vec<Vec<Vec<u128>>>,
    groups: Vec<Group>,
    group_of: HashMap<Vec<Value>, usize>,
    seen: HashSet<Vec<Value>>,
    /// Per child slot: this node's tuples keyed by the child's key value.
    child_key_index: Vec<HashMap<Vec<Value>, Vec<usize>>>,
}

impl DynNode {
    fn new(schema: Vec<String>, key_attrs: &[String], child_count: usize) -> DynNode {
        let key_positions = key_attrs
            .iter()
            .map(|a| schema.iter().position(|s| s == a).expect("key attr"))
            .collect();
        DynNode {
            schema,
            key_positions,
            tuples: Vec::new(),
            score_slots: Vec::new(),
            tuple_group: Vec::new(),
            w: Vec::new(),
            groups: Vec::new(),
            group_of: HashMap::new(),
            seen: HashSet::new(),
            child_key_index: vec![HashMap::new(); child_count],
        }
    }

    fn key_of(&self, values: &[Value]) -> Vec<Value> {
        self.key_positions
            .iter()
            .map(|&p| values[p].clone())
            .collect()
    }
}

/// Outcome of one ranked access against the approximate index.
#[derive(Debug, Clone, PartialEq)]
pub enum AccessOutcome {
    Real(JoinResult),
    Dummy,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct QueryStats {
    pub accesses: u64,
    pub dummies: u64,
    pub reals: u64,
}

#[derive(Debug, Clone)]
pub struct DynamicIndex {
    pub tree: JoinTree,
    pub agg: Aggregator,
    pub params: ScoreParams,
    nodes: Vec<DynNode>,
    inserted: u64,
    next_ts: u64,
    rebuild_threshold: u64,
    rebuilds: u64,
    cutoff_override: Option<u32>,
    /// Exact tail results, cached per epoch (any insert bumps the epoch).
    epoch: u64,
    tail_cache: Option<(u64, Vec<JoinResult>)>,
}

fn round_up_pow2(x: u128) -> Result<u128> {
    if x == 0 {
        return Ok(0);
    }
    x.checked_next_power_of_two()
        .ok_or_else(|| Error::Capacity("aggregate exceeds 2^127".into()))
}

impl DynamicIndex {
    /// Set up the index for fixed relation schemas; data arrives via
    /// [`insert`](Self::insert).
    pub fn new(
        schemas: &[Vec<String>],
        agg: Aggregator,
        cutoff_override: Option<u32>,
    ) -> Result<DynamicIndex> {
        let tree = build_join_tree(schemas)?;
        let rho = integral_edge_cover(&tree.schemas)?;
        let params = ScoreParams::derive(rho, INITIAL_REBUILD_THRESHOLD, cutoff_override);
        let nodes = (0..tree.node_count())
            .map(|i| {
                DynNode::new(
                    tree.schemas[i].clone(),
                    &tree.key_attrs[i],
                    tree.children[i].len(),
                )
            })
            .collect();
        Ok(DynamicIndex {
            tree,
            agg,
            params,
            nodes,
            inserted: 0,
            next_ts: 1,
            rebuild_threshold: INITIAL_REBUILD_THRESHOLD,
            rebuilds: 0,
            cutoff_override,
            epoch: 0,
            tail_cache: None,
        })
    }

    pub fn cutoff(&self) -> u32 {
        self.params.cutoff
    }

    pub fn inserted_count(&self) -> u64 {
        self.inserted
    }

    pub fn rebuild_count(&self) -> u64 {
        self.rebuilds
    }

    pub fn node_tuple_count(&self, node: usize) -> usize {
        self.nodes[node].tuples.len()
    }

    /// Approximate per-tuple slot arrays, for invariant checks.
    pub fn w_tables(&self, node: usize) -> &[Vec<Vec<u128>>] {
        &self.nodes[node].w
    }

    pub fn tuple_values(&self, node: usize, tuple: usize) -> &[Value] {
        &self.nodes[node].tuples[tuple].values
    }

    /// (exact, rounded) aggregates of every key group of a node.
    pub fn group_aggregate_iter(
        &self,
        node: usize,
    ) -> impl Iterator<Item = (&[u128], &[u128])> {
        self.nodes[node]
            .groups
            .iter()
            .map(|g| (g.m_hat.as_slice(), g.m_tilde.as_slice()))
    }

    /// (exact, rounded) aggregates of the group holding `key`.
    pub fn group_aggregates(&self, node: usize, key: &[Value]) -> Option<(&[u128], &[u128])> {
        let g = *self.nodes[node].group_of.get(key)?;
        let group = &self.nodes[node].groups[g];
        Some((&group.m_hat, &group.m_tilde))
    }

    /// Largest number of times any rounded aggregate entry changed since the
    /// last rebuild, with the theoretical bound for comparison.
    pub fn max_tilde_changes(&self) -> (u32, u32) {
        let mut max_changes = 0;
        let mut max_hat: u128 = 1;
        for node in &self.nodes {
            for g in &node.groups {
                for (&c, &h) in g.tilde_changes.iter().zip(&g.m_hat) {
                    max_changes = max_changes.max(c);
                    max_hat = max_hat.max(h);
                }
            }
        }
        let bound = 128 - (max_hat.leading_zeros()) + 1; // ceil(log2) + 1
        (max_changes, bound)
    }

    /// Insert a tuple; duplicates (set semantics) warn and do nothing.
    /// Returns whether the tuple was new.
    pub fn insert(&mut self, relation_id: usize, values: Vec<Value>, weight: f64) -> Result<bool> {
        if relation_id >= self.nodes.len() {
            return Err(Error::SchemaMismatch(format!(
                "relation id {relation_id} out of range"
            )));
        }
        if values.len() != self.nodes[relation_id].schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "relation {relation_id} expects {} values, got {}",
                self.nodes[relation_id].schema.len(),
                values.len()
            )));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidArgument(format!(
                "weight {weight} outside [0, 1]"
            )));
        }
        if self.nodes[relation_id].seen.contains(&values) {
            log::warn!("duplicate tuple into relation {relation_id}; ignored");
            return Ok(false);
        }
        let ts = self.next_ts;
        self.next_ts += 1;
        self.insert_inner(relation_id, values, weight, ts)?;
        self.inserted += 1;
        self.epoch += 1;
        if self.inserted >= self.rebuild_threshold {
            self.rebuild()?;
        }
        Ok(true)
    }

    fn insert_inner(
        &mut self,
        node_id: usize,
        values: Vec<Value>,
        weight: f64,
        ts: u64,
    ) -> Result<()> {
        let cutoff = self.params.cutoff;
        let slots = cutoff as usize + 1;
        let score = tuple_score(weight, cutoff)?;
        let key = self.nodes[node_id].key_of(&values);

        // register the tuple in its group and the child-key indexes
        let tuple_id = self.nodes[node_id].tuples.len();
        {
            let node = &mut self.nodes[node_id];
            node.seen.insert(values.clone());
            node.tuples.push(Tuple {
                values: values.clone(),
                weight,
                ts,
            });
            node.score_slots.push(score.slot(cutoff));
            let g = match node.group_of.get(&key) {
                Some(&g) => g,
                None => {
                    node.groups.push(Group {
                        key: key.clone(),
                        members: Vec::new(),
                        fenwicks: vec![Fenwick::new(); slots],
                        m_hat: vec![0; slots],
                        m_tilde: vec![0; slots],
                        tilde_changes: vec![0; slots],
                    });
                    node.group_of.insert(key.clone(), node.groups.len() - 1);
                    node.groups.len() - 1
                }
            };
            let pos = node.groups[g].members.len();
            node.groups[g].members.push(tuple_id);
            for f in &mut node.groups[g].fenwicks {
                f.push(0);
            }
            node.tuple_group.push((g, pos));
        }
        for slot in 0..self.tree.children[node_id].len() {
            let child = self.tree.children[node_id][slot];
            let child_key: Vec<Value> = self.tree.key_attrs[child]
                .iter()
                .map(|a| {
                    let p = self.nodes[node_id]
                        .schema
                        .iter()
                        .position(|s| s == a)
                        .expect("child key attr");
                    values[p].clone()
                })
                .collect();
            self.nodes[node_id].child_key_index[slot]
                .entry(child_key)
                .or_default()
                .push(tuple_id);
        }

        // initial approximate counts for the new tuple
        let w_slots = self.compute_w(node_id, tuple_id)?;
        let w0 = w_slots[0].clone();
        self.nodes[node_id].w.push(w_slots);

        // fold the new tuple into its group aggregates and propagate
        for (score_slot, &delta) in w0.iter().enumerate() {
            if delta > 0 {
                self.update(node_id, tuple_id, score_slot, delta)?;
            }
        }
        Ok(())
    }

    /// Slot arrays for one tuple from the current rounded child aggregates.
    fn compute_w(&self, node_id: usize, tuple_id: usize) -> Result<Vec<Vec<u128>>> {
        let cutoff = self.params.cutoff;
        let slots = cutoff as usize + 1;
        let children = &self.tree.children[node_id];
        let own = self.nodes[node_id].score_slots[tuple_id];
        if children.is_empty() {
            let mut ind = vec![0u128; slots];
            ind[own] = 1;
            return Ok(vec![ind]);
        }
        let zeros = vec![0u128; slots];
        let mut arrays = vec![Vec::new(); children.len()];
        let mut running = vec![0u128; slots];
        running[self.agg.slot_identity(cutoff)] = 1;
        for s in (0..children.len()).rev() {
            let child = children[s];
            let key = self.child_key_of(node_id, s, tuple_id);
            let m_arr: &[u128] = match self.nodes[child].group_of.get(&key) {
                Some(&g) => &self.nodes[child].groups[g].m_tilde,
                None => &zeros,
            };
            arrays[s] = convolve_schoolbook(m_arr, &running, own, &self.agg, cutoff)?;
            if s > 0 {
                running = convolve_schoolbook(
                    m_arr,
                    &running,
                    self.agg.slot_identity(cutoff),
                    &self.agg,
                    cutoff,
                )?;
            }
        }
        Ok(arrays)
    }

    fn child_key_of(&self, node_id: usize, slot: usize, tuple_id: usize) -> Vec<Value> {
        let child = self.tree.children[node_id][slot];
        let node = &self.nodes[node_id];
        self.tree.key_attrs[child]
            .iter()
            .map(|a| {
                let p = node.schema.iter().position(|s| s == a).expect("key attr");
                node.tuples[tuple_id].values[p].clone()
            })
            .collect()
    }

    /// Add `delta` to the slot-0 count of `tuple_id` at `score_slot`, refresh
    /// the group aggregates, and when the rounded aggregate moves, recompute
    /// the affected parent tuples and recurse.
    fn update(
        &mut self,
        node_id: usize,
        tuple_id: usize,
        score_slot: usize,
        delta: u128,
    ) -> Result<()> {
        let (g, pos) = self.nodes[node_id].tuple_group[tuple_id];
        let tilde_changed = {
            let group = &mut self.nodes[node_id].groups[g];
            group.fenwicks[score_slot].add(pos, delta);
            group.m_hat[score_slot] = group.m_hat[score_slot]
                .checked_add(delta)
                .ok_or_else(|| Error::Capacity("aggregate overflows u128".into()))?;
            let new_tilde = round_up_pow2(group.m_hat[score_slot])?;
            if new_tilde != group.m_tilde[score_slot] {
                debug_assert!(new_tilde > group.m_tilde[score_slot]);
                group.m_tilde[score_slot] = new_tilde;
                group.tilde_changes[score_slot] += 1;
                true
            } else {
                false
            }
        };
        if !tilde_changed {
            return Ok(());
        }
        let Some(parent) = self.tree.parent[node_id] else {
            return Ok(());
        };
        let slot_in_parent = self.tree.children[parent]
            .iter()
            .position(|&c| c == node_id)
            .expect("child slot");
        let key = self.nodes[node_id].groups[g].key.clone();
        let affected: Vec<usize> = self.nodes[parent].child_key_index[slot_in_parent]
            .get(&key)
            .cloned()
            .unwrap_or_default();
        for parent_tuple in affected {
            let fresh = self.compute_w(parent, parent_tuple)?;
            let old = std::mem::replace(&mut self.nodes[parent].w[parent_tuple], fresh.clone());
            for (s, (&new_v, &old_v)) in fresh[0].iter().zip(&old[0]).enumerate() {
                debug_assert!(new_v >= old_v, "approximate counts never decrease");
                let d = new_v - old_v;
                if d > 0 {
                    self.update(parent, parent_tuple, s, d)?;
                }
            }
        }
        Ok(())
    }

    /// Rebuild from scratch over the current tuples (in timestamp order) and
    /// double the threshold. The cutoff is re-derived from the new capacity.
    fn rebuild(&mut self) -> Result<()> {
        self.rebuild_threshold *= 2;
        self.rebuilds += 1;
        let rho = self.params.rho;
        self.params = ScoreParams::derive(rho, self.rebuild_threshold, self.cutoff_override);
        let mut stream: Vec<(u64, usize, Vec<Value>, f64)> = Vec::new();
        for (node_id, node) in self.nodes.iter().enumerate() {
            for t in &node.tuples {
                stream.push((t.ts, node_id, t.values.clone(), t.weight));
            }
        }
        stream.sort_by_key(|(ts, ..)| *ts);
        self.nodes = (0..self.tree.node_count())
            .map(|i| {
                DynNode::new(
                    self.tree.schemas[i].clone(),
                    &self.tree.key_attrs[i],
                    self.tree.children[i].len(),
                )
            })
            .collect();
        self.tail_cache = None;
        for (ts, node_id, values, weight) in stream {
            self.insert_inner(node_id, values, weight, ts)?;
        }
        log::debug!(
            "rebuilt dynamic index: threshold {} cutoff {}",
            self.rebuild_threshold,
            self.params.cutoff
        );
        Ok(())
    }

    /// Approximate bucket sizes seen by the query: exact sums over the
    /// root's (inflated) tuple counts. Slot `L` is the tail superset.
    pub fn approx_bucket_sizes(&self) -> Vec<u128> {
        let root = self.tree.root;
        let slots = self.params.cutoff as usize + 1;
        match self.nodes[root].groups.first() {
            Some(g) => (0..slots).map(|s| g.fenwicks[s].total()).collect(),
            None => vec![0; slots],
        }
    }

    /// Snapshot the current relations as a static instance (canonical order).
    pub fn snapshot_instance(&self) -> Result<Instance> {
        let relations = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let mut rel = Relation::new(format!("R{}", i + 1), node.schema.clone())?;
                for t in &node.tuples {
                    rel.push(t.values.clone(), t.weight, t.ts)?;
                }
                Ok(rel)
            })
            .collect::<Result<Vec<_>>>()?;
        Instance::new(relations)
    }

    fn tail_results(&mut self) -> Result<&[JoinResult]> {
        if self.tail_cache.as_ref().map(|(e, _)| *e) != Some(self.epoch) {
            let snapshot = self.snapshot_instance()?;
            let all =
                snapshot.materialize_join(&self.agg, self.params.cutoff, DEFAULT_RESULT_CAP)?;
            let tail: Vec<JoinResult> = all.into_iter().filter(|r| r.score.is_tail()).collect();
            self.tail_cache = Some((self.epoch, tail));
        }
        Ok(&self.tail_cache.as_ref().expect("just filled").1)
    }

    /// Ranked access against the approximate counts: either the rank-`tau`
    /// real result of bucket `l`, or a dummy when the rank lands in inflated
    /// territory.
    pub fn access(&self, l: u32, tau: u128) -> Result<AccessOutcome> {
        let sizes = self.approx_bucket_sizes();
        let size = sizes[l as usize];
        if tau == 0 || tau > size {
            return Err(Error::RankOutOfRange {
                rank: tau,
                max: size,
            });
        }
        let root = self.tree.root;
        let mut components = Vec::new();
        if self.access_entry(root, 0, l as usize, tau, &mut components)? {
            Ok(AccessOutcome::Real(self.assemble(&components)))
        } else {
            Ok(AccessOutcome::Dummy)
        }
    }

    /// Returns false when the walk hits a dummy position.
    fn access_entry(
        &self,
        node_id: usize,
        group: usize,
        score_slot: usize,
        tau: u128,
        components: &mut Vec<(usize, usize)>,
    ) -> Result<bool> {
        let node = &self.nodes[node_id];
        let Some(gr) = node.groups.get(group) else {
            return Ok(false);
        };
        let fenwick = &gr.fenwicks[score_slot];
        // the exact local total can be smaller than the rounded aggregate
        // the caller indexed by; ranks in the gap are dummies
        if tau > fenwick.total() {
            return Ok(false);
        }
        let pos = fenwick.search(tau).expect("tau <= total");
        let before = if pos == 0 { 0 } else { fenwick.prefix(pos - 1) };
        let residual = tau - before;
        let tuple_id = gr.members[pos];
        components.push((node_id, tuple_id));
        if self.tree.is_leaf(node_id) {
            debug_assert_eq!(residual, 1);
            return Ok(true);
        }
        self.access_slots(node_id, tuple_id, 0, score_slot, residual, components)
    }

    fn access_slots(
        &self,
        node_id: usize,
        tuple_id: usize,
        slot: usize,
        score_slot: usize,
        tau: u128,
        components: &mut Vec<(usize, usize)>,
    ) -> Result<bool> {
        let cutoff = self.params.cutoff;
        let children = &self.tree.children[node_id];
        let child = children[slot];
        let own = self.nodes[node_id].score_slots[tuple_id];
        let key = self.child_key_of(node_id, slot, tuple_id);
        let child_group = self.nodes[child].group_of.get(&key).copied();
        let zeros = vec![0u128; cutoff as usize + 1];
        let m_arr: &[u128] = match child_group {
            Some(g) => &self.nodes[child].groups[g].m_tilde,
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
            &self.nodes[node_id].w[tuple_id][slot + 1]
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
                let Some(g) = child_group else {
                    return Ok(false);
                };
                if !self.access_entry(child, g, s1, tau1, components)? {
                    return Ok(false);
                }
                if last {
                    debug_assert_eq!(s2, own);
                    debug_assert_eq!(tau2, 1);
                    return Ok(true);
                }
                return self.access_slots(node_id, tuple_id, slot + 1, s2, tau2, components);
            }
            remaining -= count;
        }
        Err(Error::RankOutOfRange {
            rank: tau,
            max: tau - remaining,
        })
    }

    fn assemble(&self, components: &[(usize, usize)]) -> JoinResult {
        let mut values = std::collections::BTreeMap::new();
        let mut probability = self.agg.probability_identity();
        let mut scores = Vec::with_capacity(components.len());
        for &(node_id, t) in components {
            let node = &self.nodes[node_id];
            let tuple = &node.tuples[t];
            for (a, v) in node.schema.iter().zip(&tuple.values) {
                values.entry(a.clone()).or_insert_with(|| v.clone());
            }
            probability = self.agg.combine_probability(probability, tuple.weight);
            scores.push(Score::from_slot(node.score_slots[t], self.params.cutoff));
        }
        let score = crate::score::result_score(&scores, &self.agg, self.params.cutoff)
            .expect("components nonempty");
        JoinResult {
            values,
            probability,
            score,
        }
    }

    /// One subset sampling query over the current contents. Dummies are
    /// rejected; the output is an exact subset sample of the live join.
    pub fn query(&mut self, rng: &SplitRng) -> Result<(Vec<JoinResult>, QueryStats)> {
        let cutoff = self.params.cutoff;
        let sizes = self.approx_bucket_sizes();
        let (bucket_sizes, tail_size) = sizes.split_at(cutoff as usize);
        let draw = draw_requests(bucket_sizes, tail_size[0], &self.agg, cutoff, rng);
        let mut stats = QueryStats::default();
        let mut out = Vec::new();
        for (l, tau) in draw.requests {
            stats.accesses += 1;
            match self.access(l, tau)? {
                AccessOutcome::Dummy => stats.dummies += 1,
                AccessOutcome::Real(result) => {
                    stats.reals += 1;
                    let upper = self.agg.bucket_upper(Score::Bucket(l), cutoff);
                    if keep(rng, l, tau, result.probability, upper)? {
                        out.push(result);
                    }
                }
            }
        }
        if !draw.tail_ranks.is_empty() {
            let upper = self.agg.bucket_upper(Score::Tail, cutoff);
            let tail = self.tail_results()?.to_vec();
            for tau in draw.tail_ranks {
                stats.accesses += 1;
                // true tail results occupy the low ranks; the inflated
                // remainder is dummy territory
                if (tau as usize) <= tail.len() {
                    stats.reals += 1;
                    let result = tail[tau as usize - 1].clone();
                    if keep(rng, cutoff, tau, result.probability, upper)? {
                        out.push(result);
                    }
                } else {
                    stats.dummies += 1;
                }
            }
        }
        Ok((out, stats))
    }

    /// All real results reachable through ranked access, for invariant
    /// checks ("sweep every rank, keep the reals").
    pub fn sweep_reals(&self) -> Result<Vec<JoinResult>> {
        let cutoff = self.params.cutoff;
        let sizes = self.approx_bucket_sizes();
        let mut out = Vec::new();
        for l in 0..cutoff {
            for tau in 1..=sizes[l as usize] {
                if let AccessOutcome::Real(r) = self.access(l, tau)? {
                    out.push(r);
                }
            }
        }
        Ok(out)
    }

    /// Join results created by the most recently inserted tuple.
    pub fn delta_results(&self, relation_id: usize, tuple_id: usize) -> Result<Vec<JoinResult>> {
        let mut relations = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let mut rel = Relation::new(format!("R{}", i + 1), node.schema.clone())?;
            if i == relation_id {
                let t = &node.tuples[tuple_id];
                rel.push(t.values.clone(), t.weight, t.ts)?;
            } else {
                for t in &node.tuples {
                    rel.push(t.values.clone(), t.weight, t.ts)?;
                }
            }
            relations.push(rel);
        }
        let pinned = Instance::new(relations)?;
        pinned.materialize_join(&self.agg, self.params.cutoff, DEFAULT_RESULT_CAP)
    }
}

/// A maintained one-shot sample: after every insertion, membership is
/// decided exactly once for each newly created join result, so the set is
/// always distributed as a subset sample of the live join.
pub struct OneshotMaintainer {
    pub index: DynamicIndex,
    pub sample: Vec<JoinResult>,
    rng: SplitRng,
    ordinal: u64,
}

impl OneshotMaintainer {
    pub fn new(index: DynamicIndex, rng: SplitRng) -> OneshotMaintainer {
        OneshotMaintainer {
            index,
            sample: Vec::new(),
            rng,
            ordinal: 0,
        }
    }

    /// Insert one tuple and fold its delta into the maintained sample.
    pub fn insert(&mut self, relation_id: usize, values: Vec<Value>, weight: f64) -> Result<bool> {
        let fresh = self.index.insert(relation_id, values, weight)?;
        if !fresh {
            return Ok(false);
        }
        let tuple_id = self.index.node_tuple_count(relation_id) - 1;
        let delta = self.index.delta_results(relation_id, tuple_id)?;
        let coin = self.rng.child_named("delta").child(self.ordinal);
        self.ordinal += 1;
        for (i, result) in delta.into_iter().enumerate() {
            if coin.child(i as u64).bernoulli(result.probability) {
                self.sample.push(result);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::AggKind;
    use crate::static_index::StaticIndex;
    use crate::synth::two_relation_instance;
    use crate::ConvolveMode;

    fn canonical_stream() -> Vec<(usize, Vec<Value>, f64)> {
        let inst = two_relation_instance();
        let mut stream = Vec::new();
        for (i, rel) in inst.relations.iter().enumerate() {
            for t in &rel.tuples {
                stream.push((i, t.values.clone(), t.weight));
            }
        }
        stream
    }

    fn canonical_schemas() -> Vec<Vec<String>> {
        vec![
            vec!["A".into(), "B".into()],
            vec!["B".into(), "C".into()],
        ]
    }

    fn replay(cutoff: Option<u32>) -> DynamicIndex {
        let mut dyn_idx = DynamicIndex::new(
            &canonical_schemas(),
            Aggregator::new(AggKind::Product, 2),
            cutoff,
        )
        .unwrap();
        for (rel, values, w) in canonical_stream() {
            dyn_idx.insert(rel, values, w).unwrap();
        }
        dyn_idx
    }

    #[test]
    fn first_leaf_insert_sets_indicator() {
        let mut dyn_idx = DynamicIndex::new(
            &canonical_schemas(),
            Aggregator::new(AggKind::Product, 2),
            Some(10),
        )
        .unwrap();
        // leaf is R2 (child of R1); p = 0.25 has score 2
        dyn_idx
            .insert(1, vec![Value::parse("b1"), Value::parse("c1")], 0.25)
            .unwrap();
        let w = dyn_idx.w_tables(1);
        assert_eq!(w[0][0][2], 1);
        assert_eq!(w[0][0].iter().sum::<u128>(), 1);
        let (m_hat, m_tilde) = dyn_idx
            .group_aggregates(1, &[Value::parse("b1")])
            .unwrap();
        assert_eq!(m_hat[2], 1);
        assert_eq!(m_tilde[2], 1);
    }

    #[test]
    fn rounding_follows_powers_of_two() {
        assert_eq!(round_up_pow2(0).unwrap(), 0);
        assert_eq!(round_up_pow2(1).unwrap(), 1);
        assert_eq!(round_up_pow2(2).unwrap(), 2);
        assert_eq!(round_up_pow2(3).unwrap(), 4);
        assert_eq!(round_up_pow2(5).unwrap(), 8);
    }

    #[test]
    fn duplicate_insert_is_a_warned_noop() {
        let mut dyn_idx = DynamicIndex::new(
            &canonical_schemas(),
            Aggregator::new(AggKind::Product, 2),
            None,
        )
        .unwrap();
        let row = vec![Value::parse("b1"), Value::parse("c1")];
        assert!(dyn_idx.insert(1, row.clone(), 0.5).unwrap());
        assert!(!dyn_idx.insert(1, row, 0.5).unwrap());
        assert_eq!(dyn_idx.inserted_count(), 1);
    }

    #[test]
    fn replay_sandwich_against_static() {
        let dyn_idx = replay(Some(10));
        let snapshot = dyn_idx.snapshot_instance().unwrap();
        let static_idx = StaticIndex::build(
            snapshot,
            Aggregator::new(AggKind::Product, 2),
            Some(dyn_idx.cutoff()),
            ConvolveMode::Schoolbook,
        )
        .unwrap();
        let descendants = dyn_idx.tree.descendant_counts();
        for node in 0..2 {
            let bound = 1u128 << descendants[node];
            for (t, dyn_tuple) in dyn_idx.nodes[node].tuples.iter().enumerate() {
                // match by values: the static snapshot re-sorted canonically
                let s_t = static_idx.instance.relations[node]
                    .tuples
                    .iter()
                    .position(|st| st.values == dyn_tuple.values)
                    .unwrap();
                for slot in 0..dyn_idx.nodes[node].w[t].len() {
                    for (sc, (&approx, &exact)) in dyn_idx.nodes[node].w[t][slot]
                        .iter()
                        .zip(&static_idx.w[node][s_t][slot])
                        .enumerate()
                    {
                        assert!(
                            exact <= approx && approx <= bound * exact,
                            "node {node} tuple {t} slot {slot} score {sc}: \
                             {exact} vs {approx} (bound {bound})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn m_rounding_invariant_holds() {
        let dyn_idx = replay(None);
        for node in &dyn_idx.nodes {
            for g in &node.groups {
                for (&hat, &tilde) in g.m_hat.iter().zip(&g.m_tilde) {
                    if hat == 0 {
                        assert_eq!(tilde, 0);
                    } else {
                        assert!(hat <= tilde && tilde < 2 * hat);
                        assert!(tilde.is_power_of_two());
                    }
                }
            }
        }
    }

    #[test]
    fn eq6_self_consistency_after_replay() {
        let dyn_idx = replay(None);
        for node_id in 0..dyn_idx.nodes.len() {
            for t in 0..dyn_idx.nodes[node_id].tuples.len() {
                let fresh = dyn_idx.compute_w(node_id, t).unwrap();
                assert_eq!(fresh, dyn_idx.nodes[node_id].w[t]);
            }
        }
    }

    #[test]
    fn sweep_reals_recovers_the_join() {
        let dyn_idx = replay(Some(10));
        let reals = dyn_idx.sweep_reals().unwrap();
        assert_eq!(reals.len(), 4);
        let mut seen: Vec<String> = reals.iter().map(|r| format!("{:?}", r.key())).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn order_insensitive_support() {
        let stream = canonical_stream();
        let orders: Vec<Vec<usize>> = vec![vec![0, 1, 2, 3], vec![3, 2, 1, 0], vec![1, 3, 0, 2]];
        let mut supports = Vec::new();
        for order in orders {
            let mut dyn_idx = DynamicIndex::new(
                &canonical_schemas(),
                Aggregator::new(AggKind::Product, 2),
                Some(10),
            )
            .unwrap();
            for &i in &order {
                let (rel, values, w) = stream[i].clone();
                dyn_idx.insert(rel, values, w).unwrap();
            }
            let mut support: Vec<String> = dyn_idx
                .sweep_reals()
                .unwrap()
                .iter()
                .map(|r| format!("{:?}", r.key()))
                .collect();
            support.sort();
            supports.push(support);
        }
        assert_eq!(supports[0], supports[1]);
        assert_eq!(supports[0], supports[2]);
    }

    #[test]
    fn empty_index_queries_empty() {
        let mut dyn_idx = DynamicIndex::new(
            &canonical_schemas(),
            Aggregator::new(AggKind::Product, 2),
            None,
        )
        .unwrap();
        for seed in 0..20 {
            let (sample, stats) = dyn_idx.query(&SplitRng::new(seed)).unwrap();
            assert!(sample.is_empty());
            assert_eq!(stats.accesses, 0);
        }
    }

    #[test]
    fn all_weights_one_returns_everything() {
        let mut dyn_idx = DynamicIndex::new(
            &canonical_schemas(),
            Aggregator::new(AggKind::Product, 2),
            None,
        )
        .unwrap();
        dyn_idx
            .insert(0, vec![Value::parse("a1"), Value::parse("b1")], 1.0)
            .unwrap();
        dyn_idx
            .insert(1, vec![Value::parse("b1"), Value::parse("c1")], 1.0)
            .unwrap();
        dyn_idx
            .insert(1, vec![Value::parse("b1"), Value::parse("c2")], 1.0)
            .unwrap();
        for seed in 0..20 {
            let (sample, _) = dyn_idx.query(&SplitRng::new(seed)).unwrap();
            assert_eq!(sample.len(), 2, "seed {seed}");
        }
    }

    #[test]
    fn rebuild_threshold_doubles() {
        let mut dyn_idx = DynamicIndex::new(
            &canonical_schemas(),
            Aggregator::new(AggKind::Product, 2),
            None,
        )
        .unwrap();
        for i in 0..(INITIAL_REBUILD_THRESHOLD as usize + 5) {
            dyn_idx
                .insert(0, vec![Value::Int(i as i64), Value::Int(i as i64)], 0.5)
                .unwrap();
        }
        assert!(dyn_idx.rebuild_count() >= 1);
        // survives a rebuild: counts still self consistent
        for node_id in 0..dyn_idx.nodes.len() {
            for t in 0..dyn_idx.nodes[node_id].tuples.len() {
                let fresh = dyn_idx.compute_w(node_id, t).unwrap();
                assert_eq!(fresh, dyn_idx.nodes[node_id].w[t]);
            }
        }
    }

    #[test]
    fn maintainer_tracks_full_join_at_weight_one() {
        let dyn_idx = DynamicIndex::new(
            &canonical_schemas(),
            Aggregator::new(AggKind::Product, 2),
            None,
        )
        .unwrap();
        let mut m = OneshotMaintainer::new(dyn_idx, SplitRng::new(3));
        m.insert(0, vec![Value::parse("a1"), Value::parse("b1")], 1.0)
            .unwrap();
        m.insert(1, vec![Value::parse("b1"), Value::parse("c1")], 1.0)
            .unwrap();
        assert_eq!(m.sample.len(), 1);
        m.insert(1, vec![Value::parse("b1"), Value::parse("c2")], 1.0)
            .unwrap();
        assert_eq!(m.sample.len(), 2);
        // zero weights never enter
        let dyn_idx = DynamicIndex::new(
            &canonical_schemas(),
            Aggregator::new(AggKind::Product, 2),
            None,
        )
        .unwrap();
        let mut m = OneshotMaintainer::new(dyn_idx, SplitRng::new(4));
        m.insert(0, vec![Value::parse("a1"), Value::parse("b1")], 0.0)
            .unwrap();
        m.insert(1, vec![Value::parse("b1"), Value::parse("c1")], 0.0)
            .unwrap();
        assert!(m.sample.is_empty());
    }
}
