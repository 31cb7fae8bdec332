//! A join instance: relations arranged on a join tree, with semi-join
//! reduction, exact counting, and full materialization in a canonical order.
//!
//! Materialization exists for the brute-force oracle and the tail bucket;
//! the samplers never need it on the buckets they index.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::join_tree::{build_join_tree, JoinTree};
use crate::relation::{Relation, Value};
use crate::score::{result_score, tuple_score, Aggregator, Score};

pub const DEFAULT_RESULT_CAP: u64 = 10_000_000;

/// One join result: its attribute values, aggregated probability, and score
/// bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct JoinResult {
    pub values: BTreeMap<String, Value>,
    pub probability: f64,
    pub score: Score,
}

impl JoinResult {
    /// Stable identity of a result (values only), used by the test harness
    /// to key observed frequencies.
    pub fn key(&self) -> Vec<(String, Value)> {
        self.values
            .iter()
            .map(|(a, v)| (a.clone(), v.clone()))
            .collect()
    }
}

/// Relations bound to a join tree. Node ids index both `tree` and
/// `relations`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub tree: JoinTree,
    pub relations: Vec<Relation>,
    /// Per (node, child): map from the child's key value to the tuple ids of
    /// the node matching it. Rebuilt whenever tuples change.
    child_key_index: Vec<Vec<HashMap<Vec<Value>, Vec<usize>>>>,
}

impl Instance {
    /// Bind `relations` (one per schema, same order) to a fresh join tree.
    pub fn new(mut relations: Vec<Relation>) -> Result<Instance> {
        let schemas: Vec<Vec<String>> = relations.iter().map(|r| r.schema.clone()).collect();
        let tree = build_join_tree(&schemas)?;
        for (i, rel) in relations.iter_mut().enumerate() {
            let key = tree.key_attrs[i].clone();
            rel.set_key(&key)?;
        }
        let mut inst = Instance {
            tree,
            relations,
            child_key_index: Vec::new(),
        };
        inst.rebuild_indexes();
        Ok(inst)
    }

    pub fn input_size(&self) -> u64 {
        self.relations.iter().map(|r| r.len() as u64).sum()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    /// Rebuild canonical orders, group ranges, and child-key indexes.
    pub fn rebuild_indexes(&mut self) {
        for (i, rel) in self.relations.iter_mut().enumerate() {
            debug_assert_eq!(
                rel.key_positions.len(),
                self.tree.key_attrs[i].len(),
                "key attrs must be set before indexing"
            );
            rel.reindex();
        }
        self.child_key_index = (0..self.relations.len())
            .map(|node| {
                self.tree.children[node]
                    .iter()
                    .map(|&child| {
                        let key_attrs = &self.tree.key_attrs[child];
                        let positions: Vec<usize> = key_attrs
                            .iter()
                            .map(|a| self.relations[node].attr_position(a).expect("key attr"))
                            .collect();
                        let mut map: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
                        for (t, tuple) in self.relations[node].tuples.iter().enumerate() {
                            let key: Vec<Value> =
                                positions.iter().map(|&p| tuple.values[p].clone()).collect();
                            map.entry(key).or_default().push(t);
                        }
                        map
                    })
                    .collect()
            })
            .collect();
    }

    /// Project tuple `t` of `node` onto the key attributes of `child`.
    pub fn child_key(&self, node: usize, child_slot: usize, tuple_id: usize) -> Vec<Value> {
        let child = self.tree.children[node][child_slot];
        let rel = &self.relations[node];
        self.tree.key_attrs[child]
            .iter()
            .map(|a| rel.tuples[tuple_id].values[rel.attr_position(a).unwrap()].clone())
            .collect()
    }

    /// Node tuples matching `key` on the key attributes of `child`.
    pub fn node_tuples_matching(
        &self,
        node: usize,
        child_slot: usize,
        key: &[Value],
    ) -> &[usize] {
        static EMPTY: Vec<usize> = Vec::new();
        self.child_key_index[node][child_slot]
            .get(key)
            .unwrap_or(&EMPTY)
    }

    /// Fill per-tuple score caches for the given cutoff.
    pub fn assign_scores(&mut self, cutoff: u32) -> Result<()> {
        for rel in &mut self.relations {
            rel.scores = rel
                .tuples
                .iter()
                .map(|t| tuple_score(t.weight, cutoff))
                .collect::<Result<Vec<_>>>()?;
        }
        Ok(())
    }

    /// Two-pass semi-join reduction; afterwards every remaining tuple
    /// participates in at least one join result.
    pub fn semijoin_reduce(&mut self) {
        let order = self.tree.bottom_up();
        // leaf-to-root: keep tuples whose every child key has a match
        for &node in &order {
            for (slot, &child) in self.tree.children[node].clone().iter().enumerate() {
                let child_keys: HashSet<Vec<Value>> = self.relations[child]
                    .groups
                    .iter()
                    .map(|(k, _)| k.clone())
                    .collect();
                let positions: Vec<usize> = self.tree.key_attrs[child]
                    .iter()
                    .map(|a| self.relations[node].attr_position(a).unwrap())
                    .collect();
                let _ = slot;
                self.relations[node].tuples.retain(|t| {
                    let key: Vec<Value> = positions.iter().map(|&p| t.values[p].clone()).collect();
                    child_keys.contains(&key)
                });
                self.relations[node].reindex();
            }
        }
        // root-to-leaf: keep tuples whose key appears in the surviving parent
        let mut top_down = order;
        top_down.reverse();
        for &node in &top_down {
            for &child in self.tree.children[node].clone().iter() {
                let positions: Vec<usize> = self.tree.key_attrs[child]
                    .iter()
                    .map(|a| self.relations[node].attr_position(a).unwrap())
                    .collect();
                let parent_keys: HashSet<Vec<Value>> = self.relations[node]
                    .tuples
                    .iter()
                    .map(|t| positions.iter().map(|&p| t.values[p].clone()).collect())
                    .collect();
                let child_rel = &mut self.relations[child];
                let key_positions = child_rel.key_positions.clone();
                child_rel.tuples.retain(|t| {
                    let key: Vec<Value> = key_positions.iter().map(|&p| t.values[p].clone()).collect();
                    parent_keys.contains(&key)
                });
                child_rel.reindex();
            }
        }
        self.rebuild_indexes();
    }

    /// Exact join cardinality via bottom-up per-tuple counts, without
    /// materializing anything.
    pub fn count_join(&self) -> Result<u128> {
        let mut per_tuple: Vec<Vec<u128>> = self
            .relations
            .iter()
            .map(|r| vec![0u128; r.len()])
            .collect();
        // group totals per (node, key value), reused by parents
        let mut group_totals: Vec<HashMap<Vec<Value>, u128>> =
            vec![HashMap::new(); self.relations.len()];
        for &node in &self.tree.bottom_up() {
            for t in 0..self.relations[node].len() {
                let mut count: u128 = 1;
                for (slot, &child) in self.tree.children[node].iter().enumerate() {
                    let key = self.child_key(node, slot, t);
                    let sub = group_totals[child].get(&key).copied().unwrap_or(0);
                    count = count
                        .checked_mul(sub)
                        .ok_or_else(|| Error::Capacity("join count overflows u128".into()))?;
                    if count == 0 {
                        break;
                    }
                }
                per_tuple[node][t] = count;
            }
            let rel = &self.relations[node];
            let totals = group_totals.get_mut(node).unwrap();
            for (key, range) in &rel.groups {
                let mut sum: u128 = 0;
                for t in range.clone() {
                    sum = sum
                        .checked_add(per_tuple[node][t])
                        .ok_or_else(|| Error::Capacity("join count overflows u128".into()))?;
                }
                totals.insert(key.clone(), sum);
            }
        }
        Ok(self.relations[self.tree.root]
            .tuples
            .iter()
            .enumerate()
            .map(|(t, _)| per_tuple[self.tree.root][t])
            .sum())
    }

    /// Nodes of the tree in depth-first pre-order (root first, children in
    /// sibling order); the enumeration order of join results is
    /// lexicographic over per-node tuple choices along this sequence.
    pub fn preorder(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.relations.len());
        let mut stack = vec![self.tree.root];
        while let Some(n) = stack.pop() {
            order.push(n);
            for &c in self.tree.children[n].iter().rev() {
                stack.push(c);
            }
        }
        order
    }

    /// All join results in canonical order.
    pub fn materialize_join(
        &self,
        agg: &Aggregator,
        cutoff: u32,
        cap: u64,
    ) -> Result<Vec<JoinResult>> {
        let order = self.preorder();
        let mut chosen = vec![usize::MAX; self.relations.len()];
        let mut partial = PartialResult::new(agg);
        let mut out = Vec::new();
        self.enumerate(&order, 0, &mut chosen, &mut partial, cutoff, cap, &mut out)?;
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn enumerate(
        &self,
        order: &[usize],
        pos: usize,
        chosen: &mut Vec<usize>,
        partial: &mut PartialResult,
        cutoff: u32,
        cap: u64,
        out: &mut Vec<JoinResult>,
    ) -> Result<()> {
        if pos == order.len() {
            if out.len() as u64 >= cap {
                return Err(Error::ResultCapExceeded { cap });
            }
            out.push(partial.finish(cutoff)?);
            return Ok(());
        }
        let node = order[pos];
        let range = match self.tree.parent[node] {
            None => 0..self.relations[node].len(),
            Some(p) => {
                let slot = self.tree.children[p]
                    .iter()
                    .position(|&c| c == node)
                    .expect("child slot");
                let key = self.child_key(p, slot, chosen[p]);
                self.relations[node].group_range(&key)
            }
        };
        for t in range {
            let mark = partial.mark();
            partial.absorb(self, node, t, cutoff)?;
            chosen[node] = t;
            self.enumerate(order, pos + 1, chosen, partial, cutoff, cap, out)?;
            partial.rollback(mark);
        }
        Ok(())
    }

    /// Join results that contain the given tuple, enumerated by pinning it in
    /// its relation: the delta created when that tuple arrives last.
    pub fn delta_join(
        &self,
        node: usize,
        tuple_id: usize,
        agg: &Aggregator,
        cutoff: u32,
        cap: u64,
    ) -> Result<Vec<JoinResult>> {
        let mut pinned = self.clone();
        let tuple = self.relations[node].tuples[tuple_id].clone();
        pinned.relations[node].tuples = vec![tuple];
        pinned.relations[node].reindex();
        pinned.rebuild_indexes();
        pinned.materialize_join(agg, cutoff, cap)
    }
}

/// Accumulator for one in-flight join result during enumeration.
struct PartialResult {
    values: Vec<(String, Value)>,
    weights: Vec<f64>,
    scores: Vec<Score>,
    agg: Aggregator,
}

impl PartialResult {
    fn new(agg: &Aggregator) -> PartialResult {
        PartialResult {
            values: Vec::new(),
            weights: Vec::new(),
            scores: Vec::new(),
            agg: *agg,
        }
    }

    fn mark(&self) -> (usize, usize) {
        (self.values.len(), self.weights.len())
    }

    fn rollback(&mut self, mark: (usize, usize)) {
        self.values.truncate(mark.0);
        self.weights.truncate(mark.1);
        self.scores.truncate(mark.1);
    }

    fn absorb(
        &mut self,
        inst: &Instance,
        node: usize,
        tuple_id: usize,
        cutoff: u32,
    ) -> Result<()> {
        let rel = &inst.relations[node];
        let tuple = &rel.tuples[tuple_id];
        for (a, v) in rel.schema.iter().zip(&tuple.values) {
            if !self.values.iter().any(|(name, _)| name == a) {
                self.values.push((a.clone(), v.clone()));
            }
        }
        self.weights.push(tuple.weight);
        self.scores.push(if let Some(s) = rel.scores.get(tuple_id) {
            *s
        } else {
            tuple_score(tuple.weight, cutoff)?
        });
        Ok(())
    }

    fn finish(&self, cutoff: u32) -> Result<JoinResult> {
        let mut probability = self.agg.probability_identity();
        for w in &self.weights {
            probability = self.agg.combine_probability(probability, *w);
        }
        Ok(JoinResult {
            values: self.values.iter().cloned().collect(),
            probability,
            score: result_score(&self.scores, &self.agg, cutoff)?,
        })
    }
}
