//! Synthetic instances for examples, benches, and tests.

use crate::instance::Instance;
use crate::relation::{Relation, Value};
use crate::rng::SplitRng;

/// Two relations R1(A,B), R2(B,C) whose four join results carry
/// probabilities 0.5, 0.25, 0.25, 0.125 under PRODUCT. Small enough to
/// verify by hand, rich enough to exercise every bucket path.
pub fn two_relation_instance() -> Instance {
    let mut r1 = Relation::new("R1", vec!["A".into(), "B".into()]).unwrap();
    r1.push(vec![Value::parse("a1"), Value::parse("b1")], 1.0, 0)
        .unwrap();
    r1.push(vec![Value::parse("a2"), Value::parse("b1")], 0.5, 0)
        .unwrap();
    let mut r2 = Relation::new("R2", vec!["B".into(), "C".into()]).unwrap();
    r2.push(vec![Value::parse("b1"), Value::parse("c1")], 0.5, 0)
        .unwrap();
    r2.push(vec![Value::parse("b1"), Value::parse("c2")], 0.25, 0)
        .unwrap();
    Instance::new(vec![r1, r2]).unwrap()
}

/// Chain join R1(X0,X1) |x| R2(X1,X2) |x| ... with `total` tuples split
/// evenly across `k` relations. Join-key values are drawn from a domain of
/// `per_relation^key_exponent` values, so smaller exponents mean fatter
/// fanouts and larger joins. Weights are uniform in `weight_range`.
pub fn chain_instance(
    k: usize,
    total: usize,
    key_exponent: f64,
    weight_range: (f64, f64),
    seed: u64,
) -> Instance {
    assert!(k >= 2);
    let per_relation = (total / k).max(1);
    let domain = ((per_relation as f64).powf(key_exponent).round() as i64).max(1);
    let rng = SplitRng::new(seed);
    let mut relations = Vec::with_capacity(k);
    for r in 0..k {
        let a = format!("X{r}");
        let b = format!("X{}", r + 1);
        let mut rel = Relation::new(format!("R{}", r + 1), vec![a.clone(), b.clone()]).unwrap();
        let mut child = rng.child(r as u64);
        let mut seen = std::collections::HashSet::new();
        let mut row = 0u64;
        while rel.len() < per_relation {
            let left = if r == 0 {
                // row ids keep the first relation duplicate-free
                Value::Int(row as i64)
            } else {
                Value::Int((child.next_u64() % domain as u64) as i64)
            };
            let right = Value::Int((child.next_u64() % domain as u64) as i64);
            row += 1;
            let key = (left.clone(), right.clone());
            if !seen.insert(key) {
                continue;
            }
            let w = weight_range.0 + child.uniform() * (weight_range.1 - weight_range.0);
            let (va, vb) = if rel.schema[0] == a {
                (left, right)
            } else {
                (right, left)
            };
            rel.push(vec![va, vb], w, 0).unwrap();
        }
        relations.push(rel);
    }
    Instance::new(relations).unwrap()
}

/// Random acyclic instance: a random tree shape over `k` relations with
/// shared key attributes along edges, weights from a mix of heavy, light,
/// and zero probabilities. Fanouts are kept small so brute-force oracles
/// stay cheap.
pub fn random_acyclic_instance(
    k: usize,
    max_tuples: usize,
    seed: u64,
) -> Instance {
    let mut rng = SplitRng::new(seed);
    // random parent pointers give a random tree
    let mut parents = vec![usize::MAX; k];
    for i in 1..k {
        parents[i] = (rng.next_u64() % i as u64) as usize;
    }
    // attribute S{i} is shared between node i and its parent; A{i} is private
    let mut schemas: Vec<Vec<String>> = (0..k).map(|i| vec![format!("A{i}")]).collect();
    for i in 1..k {
        let shared = format!("S{i}");
        schemas[i].push(shared.clone());
        schemas[parents[i]].push(shared);
    }
    let mut relations = Vec::with_capacity(k);
    for (i, schema) in schemas.iter().enumerate() {
        let mut rel = Relation::new(format!("R{}", i + 1), schema.clone()).unwrap();
        let rows = 2 + (rng.next_u64() % (max_tuples as u64 - 1)) as usize;
        let mut seen = std::collections::HashSet::new();
        for row in 0..rows {
            let values: Vec<Value> = rel
                .schema
                .clone()
                .iter()
                .map(|a| {
                    if a.starts_with('A') {
                        Value::Int(row as i64)
                    } else {
                        // few distinct key values force real fanout
                        Value::Int((rng.next_u64() % 3) as i64)
                    }
                })
                .collect();
            if !seen.insert(values.clone()) {
                continue;
            }
            let w = match rng.next_u64() % 10 {
                0 => 0.0,
                1 => 1.0,
                2 => 2f64.powi(-((rng.next_u64() % 40) as i32)),
                _ => rng.uniform(),
            };
            rel.push(values, w, 0).unwrap();
        }
        relations.push(rel);
    }
    Instance::new(relations).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_has_requested_size() {
        let inst = chain_instance(3, 300, 0.75, (0.1, 1.0), 7);
        assert_eq!(inst.input_size(), 300);
        assert_eq!(inst.relation_count(), 3);
    }

    #[test]
    fn random_instances_are_acyclic_and_vary() {
        for seed in 0..10 {
            let inst = random_acyclic_instance(2 + (seed as usize % 4), 12, seed);
            assert!(inst.tree.check_connectedness());
        }
    }
}
