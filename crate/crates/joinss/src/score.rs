//! Scores, buckets, and aggregation functions.
//!
//! A tuple with probability `p` has score `floor(-log2 p)`, read exactly from
//! the bit pattern of `p` so that `p = 2^-j` maps to `j` with no floating-log
//! slop. Join-result scores combine component scores per aggregator, and
//! results are bucketed by score: bucket `l` holds probabilities in
//! `(2^-l-1, c * 2^-l]` for a small per-aggregator constant `c`. Scores at or
//! above the cutoff `L` collapse into a single tail bucket.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on relations per query; the edge-cover search is exhaustive.
pub const MAX_RELATIONS: usize = 12;

/// Upper bound on the bucket cutoff, which bounds counter magnitudes below
/// `2^127` so 128-bit arithmetic suffices.
pub const MAX_CUTOFF: u32 = 1000;

/// A bucket score: either a value below the cutoff `L`, or the tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Score {
    Bucket(u32),
    Tail,
}

impl Score {
    /// Array slot for this score; the tail occupies slot `L`.
    pub fn slot(self, cutoff: u32) -> usize {
        match self {
            Score::Bucket(v) => {
                debug_assert!(v < cutoff);
                v as usize
            }
            Score::Tail => cutoff as usize,
        }
    }

    pub fn from_slot(slot: usize, cutoff: u32) -> Score {
        if slot as u32 >= cutoff {
            Score::Tail
        } else {
            Score::Bucket(slot as u32)
        }
    }

    pub fn is_tail(self) -> bool {
        matches!(self, Score::Tail)
    }
}

/// `floor(-log2 p)` from the IEEE-754 representation of `p`, collapsed to
/// `Tail` when it reaches `cutoff` or when `p = 0`.
pub fn tuple_score(p: f64, cutoff: u32) -> Result<Score> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    if p == 0.0 {
        return Ok(Score::Tail);
    }
    let bits = p.to_bits();
    let exponent = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    let neg_log2_floor = if exponent > 0 {
        // normal: p = (1 + m/2^52) * 2^(e-1023); a zero mantissa is an exact
        // power of two and sits at the closed upper end of its bucket
        if mantissa == 0 {
            1023 - exponent
        } else {
            1022 - exponent
        }
    } else {
        // subnormal: p = m * 2^-1074
        let top = 63 - mantissa.leading_zeros() as i64;
        if mantissa == (1u64 << top) {
            1074 - top
        } else {
            1073 - top
        }
    };
    debug_assert!(neg_log2_floor >= 0);
    if neg_log2_floor >= i64::from(cutoff) {
        Ok(Score::Tail)
    } else {
        Ok(Score::Bucket(neg_log2_floor as u32))
    }
}

/// How component weights fold into a join-result weight, and how component
/// scores fold into a result score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggKind {
    Product,
    Min,
    Max,
    Sum,
}

impl AggKind {
    pub fn name(self) -> &'static str {
        match self {
            AggKind::Product => "product",
            AggKind::Min => "min",
            AggKind::Max => "max",
            AggKind::Sum => "sum",
        }
    }

    pub fn parse(s: &str) -> Result<AggKind> {
        match s {
            "product" => Ok(AggKind::Product),
            "min" => Ok(AggKind::Min),
            "max" => Ok(AggKind::Max),
            "sum" => Ok(AggKind::Sum),
            other => Err(Error::InvalidArgument(format!(
                "unknown aggregator {other:?} (expected product|min|max|sum)"
            ))),
        }
    }
}

/// An aggregator bound to a query with `k` relations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregator {
    pub kind: AggKind,
    pub k: usize,
}

impl Aggregator {
    pub fn new(kind: AggKind, k: usize) -> Aggregator {
        Aggregator { kind, k }
    }

    /// Fold two probabilities. SUM clamps at 1 since result weights must be
    /// probabilities.
    pub fn combine_probability(&self, a: f64, b: f64) -> f64 {
        match self.kind {
            AggKind::Product => a * b,
            AggKind::Min => a.min(b),
            AggKind::Max => a.max(b),
            AggKind::Sum => (a + b).min(1.0),
        }
    }

    pub fn probability_identity(&self) -> f64 {
        match self.kind {
            AggKind::Product => 1.0,
            AggKind::Min => 1.0,
            AggKind::Max => 0.0,
            AggKind::Sum => 0.0,
        }
    }

    /// Fold two score slots (tail = slot `cutoff`), staying clamped.
    ///
    /// The direction is fixed by the bucket range invariant
    /// `2^-l-1 < p(u) <= c * 2^-l`: PRODUCT adds scores, MIN takes the
    /// largest component score, MAX and SUM take the smallest.
    pub fn combine_slots(&self, a: usize, b: usize, cutoff: u32) -> usize {
        let l = cutoff as usize;
        match self.kind {
            AggKind::Product => (a + b).min(l),
            AggKind::Min => a.max(b).min(l),
            AggKind::Max | AggKind::Sum => a.min(b),
        }
    }

    /// Neutral slot for `combine_slots`.
    pub fn slot_identity(&self, cutoff: u32) -> usize {
        match self.kind {
            AggKind::Product => 0,
            AggKind::Min => 0,
            AggKind::Max | AggKind::Sum => cutoff as usize,
        }
    }

    /// Largest probability a result in bucket `l` can carry.
    pub fn bucket_upper(&self, score: Score, cutoff: u32) -> f64 {
        let l = match score {
            Score::Bucket(v) => v,
            Score::Tail => cutoff,
        };
        let base = 2f64.powi(-(l as i32));
        match self.kind {
            AggKind::Product | AggKind::Min | AggKind::Max => base,
            AggKind::Sum => (self.k as f64 * base).min(1.0),
        }
    }

    /// Smallest probability a non-tail bucket `l` can carry (exclusive).
    pub fn bucket_lower(&self, l: u32) -> f64 {
        2f64.powi(-(l as i32) - 1)
    }

    /// Rejection overhead factor for the non-tail buckets.
    pub fn uniformity_ratio(&self) -> f64 {
        match self.kind {
            AggKind::Product | AggKind::Min | AggKind::Max => 2.0,
            AggKind::Sum => 2.0 * self.k as f64,
        }
    }
}

/// Result score from the component scores of one join result.
pub fn result_score(components: &[Score], agg: &Aggregator, cutoff: u32) -> Result<Score> {
    if components.is_empty() {
        return Err(Error::InvalidArgument("empty component score list".into()));
    }
    let mut acc = agg.slot_identity(cutoff);
    for s in components {
        acc = agg.combine_slots(acc, s.slot(cutoff), cutoff);
    }
    Ok(Score::from_slot(acc, cutoff))
}

/// Classification of a per-relation score-vector sub-instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Classification {
    /// Max probability at most one over the join size; rejection terminates
    /// in O(1) expected retrievals.
    Light,
    /// Probabilities within the given ratio of each other.
    NearUniform(f64),
}

/// Classify the sub-instance of results whose component score vector is `j`.
pub fn classify_subinstance(j: &[u32], cutoff: u32, agg: &Aggregator) -> Classification {
    let light = match agg.kind {
        AggKind::Product => j.iter().map(|&v| u64::from(v)).sum::<u64>() >= u64::from(cutoff),
        AggKind::Min => j.iter().copied().max().unwrap_or(0) >= cutoff,
        AggKind::Max | AggKind::Sum => j.iter().copied().min().unwrap_or(0) >= cutoff,
    };
    if light {
        Classification::Light
    } else {
        match agg.kind {
            AggKind::Product => Classification::NearUniform((1u64 << j.len()) as f64),
            AggKind::Min | AggKind::Max => Classification::NearUniform(2.0),
            AggKind::Sum => Classification::NearUniform(2.0 * j.len() as f64),
        }
    }
}

/// Bucket cutoff and the size parameters it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreParams {
    /// Bucket cutoff L; scores at or above it share the tail bucket.
    pub cutoff: u32,
    /// Minimum integral edge cover size of the schema hypergraph.
    pub rho: u32,
    /// Input size the cutoff was derived from.
    pub n: u64,
}

impl ScoreParams {
    /// `L = ceil(2 * rho * log2 N)`, clamped to `[1, MAX_CUTOFF]`, which keeps
    /// `2^L >= N^rho` so every counter fits the documented capacity.
    pub fn derive(rho: u32, n: u64, cutoff_override: Option<u32>) -> ScoreParams {
        let cutoff = match cutoff_override {
            Some(c) => c.clamp(1, MAX_CUTOFF),
            None => {
                let bits = (n.max(1) as f64).log2();
                ((2.0 * rho as f64 * bits).ceil() as u32).clamp(1, MAX_CUTOFF)
            }
        };
        ScoreParams { cutoff, rho, n }
    }
}

/// Minimum number of relations whose schemas cover every attribute,
/// found by exhaustive subset search (k is bounded by `MAX_RELATIONS`).
pub fn integral_edge_cover(schemas: &[Vec<String>]) -> Result<u32> {
    let k = schemas.len();
    if k == 0 {
        return Ok(0);
    }
    if k > MAX_RELATIONS {
        return Err(Error::InvalidArgument(format!(
            "{k} relations exceeds the supported maximum of {MAX_RELATIONS}"
        )));
    }
    let mut attrs: Vec<&String> = schemas.iter().flatten().collect();
    attrs.sort();
    attrs.dedup();
    let attr_bit = |a: &String| attrs.binary_search(&a).unwrap();
    let masks: Vec<u64> = schemas
        .iter()
        .map(|s| s.iter().fold(0u64, |m, a| m | (1 << attr_bit(a))))
        .collect();
    let full: u64 = (0..attrs.len()).fold(0u64, |m, b| m | (1 << b));
    let mut best = k as u32;
    for subset in 0u64..(1 << k) {
        let covered = (0..k)
            .filter(|&i| subset & (1 << i) != 0)
            .fold(0u64, |m, i| m | masks[i]);
        if covered == full {
            best = best.min(subset.count_ones());
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn score_of_simple_probabilities() {
        assert_eq!(tuple_score(1.0, 10).unwrap(), Score::Bucket(0));
        assert_eq!(tuple_score(0.5, 10).unwrap(), Score::Bucket(1));
        assert_eq!(tuple_score(0.3, 10).unwrap(), Score::Bucket(1));
        assert_eq!(tuple_score(0.25, 10).unwrap(), Score::Bucket(2));
        assert_eq!(tuple_score(0.0, 10).unwrap(), Score::Tail);
        assert_eq!(tuple_score(1e-9, 10).unwrap(), Score::Tail);
        assert!(tuple_score(1.5, 10).is_err());
        assert!(tuple_score(-0.1, 10).is_err());
    }

    #[test]
    fn score_exact_at_powers_of_two() {
        for j in 0..=200u32 {
            let p = 2f64.powi(-(j as i32));
            assert_eq!(
                tuple_score(p, 1000).unwrap(),
                Score::Bucket(j),
                "p = 2^-{j}"
            );
        }
    }

    #[test]
    fn score_handles_subnormals() {
        // 2^-1074 is the smallest positive double
        let tiny = f64::from_bits(1);
        assert_eq!(tuple_score(tiny, 1000).unwrap(), Score::Tail);
        assert_eq!(tuple_score(2f64.powi(-1040), 1000).unwrap(), Score::Tail);
    }

    #[test]
    fn result_score_per_aggregator() {
        let cutoff = 10;
        let prod = Aggregator::new(AggKind::Product, 2);
        let s = |v| Score::Bucket(v);
        assert_eq!(
            result_score(&[s(0), s(1)], &prod, cutoff).unwrap(),
            s(1)
        );
        assert_eq!(
            result_score(&[s(2), s(1)], &prod, 3).unwrap(),
            Score::Tail
        );
        let min = Aggregator::new(AggKind::Min, 2);
        assert_eq!(result_score(&[s(1), s(2)], &min, cutoff).unwrap(), s(2));
        let max = Aggregator::new(AggKind::Max, 2);
        assert_eq!(result_score(&[s(1), s(2)], &max, cutoff).unwrap(), s(1));
        assert_eq!(
            result_score(&[Score::Tail, s(2)], &max, cutoff).unwrap(),
            s(2)
        );
        assert_eq!(
            result_score(&[Score::Tail, Score::Tail], &max, cutoff).unwrap(),
            Score::Tail
        );
        assert!(result_score(&[], &prod, cutoff).is_err());
    }

    #[test]
    fn min_aggregator_range_example() {
        // components 0.5 and 0.25 score (1, 2); the min probability 0.25
        // falls in (2^-3, 2^-2], i.e. result score 2
        let agg = Aggregator::new(AggKind::Min, 2);
        let a = tuple_score(0.5, 10).unwrap();
        let b = tuple_score(0.25, 10).unwrap();
        let r = result_score(&[a, b], &agg, 10).unwrap();
        assert_eq!(r, Score::Bucket(2));
        let p = agg.combine_probability(0.5, 0.25);
        assert!(agg.bucket_lower(2) < p && p <= agg.bucket_upper(r, 10));
    }

    #[test]
    fn classify_matches_uniformity() {
        let prod = Aggregator::new(AggKind::Product, 2);
        assert_eq!(
            classify_subinstance(&[10, 0], 10, &prod),
            Classification::Light
        );
        assert_eq!(
            classify_subinstance(&[1, 1], 10, &prod),
            Classification::NearUniform(4.0)
        );
        let min = Aggregator::new(AggKind::Min, 2);
        assert_eq!(
            classify_subinstance(&[1, 2], 10, &min),
            Classification::NearUniform(2.0)
        );
        assert_eq!(
            classify_subinstance(&[1, 10], 10, &min),
            Classification::Light
        );
    }

    #[test]
    fn bucket_upper_values() {
        let prod = Aggregator::new(AggKind::Product, 2);
        assert_eq!(prod.bucket_upper(Score::Bucket(3), 10), 0.125);
        assert_eq!(prod.bucket_upper(Score::Tail, 10), 2f64.powi(-10));
        let sum = Aggregator::new(AggKind::Sum, 2);
        assert_eq!(sum.bucket_upper(Score::Bucket(0), 10), 1.0);
        assert_eq!(sum.bucket_upper(Score::Bucket(3), 10), 0.25);
        // tail keeps the same k multiplier so rejection ratios stay <= 1
        assert_eq!(sum.bucket_upper(Score::Tail, 10), 2.0 * 2f64.powi(-10));
    }

    #[test]
    fn edge_cover_examples() {
        let chain = vec![
            vec!["A".into(), "B".into()],
            vec!["B".into(), "C".into()],
            vec!["C".into(), "D".into()],
        ];
        assert_eq!(integral_edge_cover(&chain).unwrap(), 2);
        let single = vec![vec!["A".into()]];
        assert_eq!(integral_edge_cover(&single).unwrap(), 1);
    }

    #[test]
    fn cutoff_covers_join_size() {
        for n in [1u64, 2, 10, 1000, 1 << 20] {
            for rho in [1u32, 2, 3] {
                let params = ScoreParams::derive(rho, n, None);
                assert!(
                    2f64.powi(params.cutoff as i32) >= (n as f64).powi(rho as i32),
                    "2^{} < {n}^{rho}",
                    params.cutoff
                );
            }
        }
    }

    proptest! {
        #[test]
        fn score_brackets_probability(p in 1e-300f64..=1.0) {
            let s = tuple_score(p, MAX_CUTOFF).unwrap();
            if let Score::Bucket(j) = s {
                let upper = 2f64.powi(-(j as i32));
                let lower = upper / 2.0;
                prop_assert!(lower < p && p <= upper, "p={p} j={j}");
            }
        }

        #[test]
        fn combine_slots_is_associative(
            a in 0usize..20, b in 0usize..20, c in 0usize..20,
            kind in prop_oneof![
                Just(AggKind::Product), Just(AggKind::Min),
                Just(AggKind::Max), Just(AggKind::Sum)
            ]
        ) {
            let agg = Aggregator::new(kind, 3);
            let cutoff = 16;
            let ab_c = agg.combine_slots(agg.combine_slots(a, b, cutoff), c, cutoff);
            let a_bc = agg.combine_slots(a, agg.combine_slots(b, c, cutoff), cutoff);
            prop_assert_eq!(ab_c, a_bc);
        }
    }
}
