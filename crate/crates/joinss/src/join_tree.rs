//! Join trees for acyclic natural joins.
//!
//! A join tree has one node per relation, and for every attribute the nodes
//! containing it form a connected subtree. Construction runs ear removal:
//! a relation is an ear when every attribute it shares with the rest lives
//! in a single witness relation. Ears are peeled highest-id first with the
//! lowest-id valid witness as parent, so the lowest relation id that can
//! survive the reduction becomes the root and builds are deterministic.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct JoinTree {
    /// Schemas (sorted attribute names) of the relations, by node id.
    pub schemas: Vec<Vec<String>>,
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    /// Children in ascending node id; sibling order is load-bearing for the
    /// canonical enumeration order.
    pub children: Vec<Vec<usize>>,
    /// Join attributes shared with the parent; empty at the root.
    pub key_attrs: Vec<Vec<String>>,
}

impl JoinTree {
    pub fn node_count(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.children[node].is_empty()
    }

    /// Nodes in bottom-up order (every child before its parent).
    pub fn bottom_up(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.node_count());
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            order.push(n);
            stack.extend(self.children[n].iter().copied());
        }
        order.reverse();
        order
    }

    /// Number of proper descendants of each node.
    pub fn descendant_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.node_count()];
        for &n in &self.bottom_up() {
            counts[n] = self.children[n]
                .iter()
                .map(|&c| counts[c] + 1)
                .sum();
        }
        counts
    }

    /// Every attribute must induce a connected subtree.
    pub fn check_connectedness(&self) -> bool {
        let mut attrs: Vec<&String> = self.schemas.iter().flatten().collect();
        attrs.sort();
        attrs.dedup();
        for attr in attrs {
            let holders: Vec<usize> = (0..self.node_count())
                .filter(|&i| self.schemas[i].iter().any(|a| a == attr))
                .collect();
            // walking to the root from each holder, the holder set must be
            // left only through a single connecting node
            let set: BTreeSet<usize> = holders.iter().copied().collect();
            let mut tops = BTreeSet::new();
            for &h in &holders {
                let mut n = h;
                while let Some(p) = self.parent[n] {
                    if set.contains(&p) {
                        n = p;
                    } else {
                        break;
                    }
                }
                tops.insert(n);
            }
            if tops.len() > 1 {
                return false;
            }
        }
        true
    }
}

/// Build a join tree from relation schemas via ear removal.
///
/// Errors with the offending relations and attributes when the hypergraph is
/// cyclic. Relations sharing no attributes are trivial ears, so disconnected
/// (cross-product) queries still produce a single tree with empty keys on
/// the cut edges.
pub fn build_join_tree(schemas: &[Vec<String>]) -> Result<JoinTree> {
    let k = schemas.len();
    if k == 0 {
        return Err(Error::InvalidArgument("no relations".into()));
    }
    let schemas: Vec<Vec<String>> = schemas
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.sort();
            s.dedup();
            s
        })
        .collect();

    let mut alive: Vec<bool> = vec![true; k];
    let mut parent: Vec<Option<usize>> = vec![None; k];
    let mut remaining = k;

    while remaining > 1 {
        let mut removed = false;
        // peel the highest-id ear so low ids survive longest
        for ear in (0..k).rev() {
            if !alive[ear] {
                continue;
            }
            let shared: Vec<&String> = schemas[ear]
                .iter()
                .filter(|a| {
                    (0..k).any(|o| o != ear && alive[o] && schemas[o].contains(a))
                })
                .collect();
            let witness = (0..k).find(|&w| {
                w != ear && alive[w] && shared.iter().all(|a| schemas[w].contains(*a))
            });
            if let Some(w) = witness {
                parent[ear] = Some(w);
                alive[ear] = false;
                remaining -= 1;
                removed = true;
                break;
            }
        }
        if !removed {
            let relations: Vec<String> = (0..k)
                .filter(|&i| alive[i])
                .map(|i| format!("R{}", i + 1))
                .collect();
            let mut attributes: Vec<String> = (0..k)
                .filter(|&i| alive[i])
                .flat_map(|i| schemas[i].iter().cloned())
                .collect();
            attributes.sort();
            attributes.dedup();
            return Err(Error::CyclicQuery {
                relations,
                attributes,
            });
        }
    }

    let root = (0..k).find(|&i| alive[i]).expect("one relation survives");
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (node, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(node);
        }
    }
    for c in &mut children {
        c.sort_unstable();
    }
    let key_attrs: Vec<Vec<String>> = (0..k)
        .map(|i| match parent[i] {
            None => Vec::new(),
            Some(p) => schemas[i]
                .iter()
                .filter(|a| schemas[p].contains(a))
                .cloned()
                .collect(),
        })
        .collect();

    let tree = JoinTree {
        schemas,
        root,
        parent,
        children,
        key_attrs,
    };
    debug_assert!(tree.check_connectedness());
    Ok(tree)
}
