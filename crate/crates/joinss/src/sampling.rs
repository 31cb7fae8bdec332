//! Subset-sampling primitives: geometric-jump samplers over a direct-access
//! oracle, rejection wrappers, and the batched two-stage sampler that first
//! picks which sub-instances contribute at all.
//!
//! All samplers draw from a caller-supplied [`SplitRng`] and are otherwise
//! stateless, so concurrent use with distinct streams is safe.

use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// Probabilities below this are treated as zero: the geometric jump and the
/// nonempty-coin computations run in the log domain and would underflow.
pub const MIN_PROBABILITY: f64 = 1e-301; // ~2^-1000

fn effective(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::InvalidProbability(p));
    }
    if p > 0.0 && p < MIN_PROBABILITY {
        log::warn!("probability {p:e} below 2^-1000; clamped to 0");
        return Ok(0.0);
    }
    Ok(p)
}

/// `floor(log U / log(1-p))` for an explicit uniform draw; the number of
/// failures before the first success.
pub fn geometric_from_uniform(u: f64, p: f64) -> Result<u64> {
    if p <= 0.0 || p > 1.0 || p.is_nan() {
        return Err(Error::InvalidProbability(p));
    }
    if p == 1.0 {
        return Ok(0);
    }
    debug_assert!(u > 0.0 && u <= 1.0);
    Ok((u.ln() / (-p).ln_1p()).floor() as u64)
}

/// Geometric jump sampled from `rng`.
pub fn sample_geometric(rng: &mut SplitRng, p: f64) -> Result<u64> {
    let u = rng.uniform_pos();
    geometric_from_uniform(u, p)
}

/// `floor(log(1 - q*U) / log(1-p))` with `q = 1-(1-p)^n`: a geometric draw
/// conditioned on landing strictly below `n`. Interval boundaries resolve by
/// flooring; floating-point ties at the top are clamped into range.
pub fn truncated_geometric_from_uniform(u: f64, p: f64, n: u64) -> Result<u64> {
    if p <= 0.0 || p > 1.0 || p.is_nan() {
        return Err(Error::InvalidProbability(p));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "truncated geometric needs n >= 1".into(),
        ));
    }
    if p == 1.0 || n == 1 {
        return Ok(0);
    }
    debug_assert!((0.0..1.0).contains(&u));
    let q = nonempty_probability(n, p);
    let x = (1.0 - q * u).ln() / (-p).ln_1p();
    Ok((x.floor() as u64).min(n - 1))
}

pub fn sample_truncated_geometric(rng: &mut SplitRng, p: f64, n: u64) -> Result<u64> {
    let u = rng.uniform();
    truncated_geometric_from_uniform(u, p, n)
}

/// `1 - (1-p)^n`, the probability that a uniform instance of `size` elements
/// with inclusion probability `p` yields a nonempty sample.
pub fn nonempty_probability(size: u64, p: f64) -> f64 {
    if size == 0 || p == 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    -f64::exp_m1(size as f64 * f64::ln_1p(-p))
}

/// A uniform sub-instance: `size` elements each included with probability
/// `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformInstance {
    pub size: u64,
    pub p: f64,
    pub nonempty_prob: f64,
}

impl UniformInstance {
    pub fn new(size: u64, p: f64) -> Result<UniformInstance> {
        let p = effective(p)?;
        Ok(UniformInstance {
            size,
            p,
            nonempty_prob: nonempty_probability(size, p),
        })
    }
}

/// Ranked access to the elements of one sub-instance plus their true
/// inclusion probabilities. Ranks are 1-based.
pub trait AccessOracle {
    type Item;
    fn len(&self) -> u64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn get(&self, rank: u64) -> Result<Self::Item>;
    fn weight_of(&self, item: &Self::Item) -> f64;
}

/// Plain in-memory oracle over a slice of (element, probability) pairs.
#[derive(Debug, Clone)]
pub struct VecOracle<T: Clone> {
    pub items: Vec<(T, f64)>,
}

impl<T: Clone> AccessOracle for VecOracle<T> {
    type Item = (T, f64);
    fn len(&self) -> u64 {
        self.items.len() as u64
    }
    fn get(&self, rank: u64) -> Result<(T, f64)> {
        self.items
            .get(rank as usize - 1)
            .cloned()
            .ok_or(Error::RankOutOfRange {
                rank: rank as u128,
                max: self.items.len() as u128,
            })
    }
    fn weight_of(&self, item: &(T, f64)) -> f64 {
        item.1
    }
}

/// Uniform sampler: walk the element array with geometric jumps, touching
/// only included positions.
pub fn uss_vanilla<A: AccessOracle>(
    inst: &UniformInstance,
    access: &A,
    rng: &mut SplitRng,
) -> Result<Vec<A::Item>> {
    debug_assert_eq!(inst.size, access.len());
    let mut out = Vec::new();
    if inst.p == 0.0 {
        return Ok(out);
    }
    let mut i: u64 = 0;
    while i < inst.size {
        i = match i.checked_add(1 + sample_geometric(rng, inst.p)?) {
            Some(next) => next,
            None => break,
        };
        if i <= inst.size {
            out.push(access.get(i)?);
        }
    }
    Ok(out)
}

/// Uniform sampler that first flips the nonempty coin, then draws the first
/// included position from the truncated geometric. Same distribution as
/// [`uss_vanilla`]; the separate first stage is what the batched sampler
/// exploits.
pub fn uss_advanced<A: AccessOracle>(
    inst: &UniformInstance,
    access: &A,
    rng: &mut SplitRng,
) -> Result<Vec<A::Item>> {
    debug_assert_eq!(inst.size, access.len());
    let mut out = Vec::new();
    if inst.p == 0.0 || inst.size == 0 {
        return Ok(out);
    }
    if rng.uniform() <= inst.nonempty_prob {
        continue_nonempty(inst, access, rng, &mut out)?;
    }
    Ok(out)
}

/// The body of the advanced sampler conditioned on a nonempty outcome.
fn continue_nonempty<A: AccessOracle>(
    inst: &UniformInstance,
    access: &A,
    rng: &mut SplitRng,
    out: &mut Vec<A::Item>,
) -> Result<()> {
    let mut i = 1 + sample_truncated_geometric(rng, inst.p, inst.size)?;
    out.push(access.get(i)?);
    while i < inst.size {
        i = match i.checked_add(1 + sample_geometric(rng, inst.p)?) {
            Some(next) => next,
            None => break,
        };
        if i <= inst.size {
            out.push(access.get(i)?);
        }
    }
    Ok(())
}

/// A sub-instance with a uniform upper bound on its element probabilities.
pub struct SubInstanceSpec<A: AccessOracle> {
    pub access: A,
    pub p_upper: f64,
}

impl<A: AccessOracle> SubInstanceSpec<A> {
    pub fn new(access: A, p_upper: f64) -> Result<SubInstanceSpec<A>> {
        let p_upper = effective(p_upper)?;
        Ok(SubInstanceSpec { access, p_upper })
    }

    fn uniform(&self) -> Result<UniformInstance> {
        UniformInstance::new(self.access.len(), self.p_upper)
    }
}

/// Exact subset sample of one sub-instance: sample at the upper bound, then
/// keep each element with `weight / p_upper`.
pub fn ss_rejected<A: AccessOracle>(
    spec: &SubInstanceSpec<A>,
    rng: &mut SplitRng,
) -> Result<Vec<A::Item>> {
    let inst = spec.uniform()?;
    let intermediate = uss_advanced(&inst, &spec.access, rng)?;
    reject_filter(spec, intermediate, rng)
}

fn reject_filter<A: AccessOracle>(
    spec: &SubInstanceSpec<A>,
    intermediate: Vec<A::Item>,
    rng: &mut SplitRng,
) -> Result<Vec<A::Item>> {
    let mut out = Vec::with_capacity(intermediate.len());
    for item in intermediate {
        let w = spec.access.weight_of(&item);
        if w > spec.p_upper {
            return Err(Error::WeightAboveUpperBound {
                weight: w,
                upper: spec.p_upper,
            });
        }
        if spec.p_upper > 0.0 && rng.uniform() < w / spec.p_upper {
            out.push(item);
        }
    }
    Ok(out)
}

/// Stage-one index over a disjoint family of sub-instances: the probability
/// that each one contributes at least one intermediate element.
pub struct MetaIndex<A: AccessOracle> {
    pub specs: Vec<SubInstanceSpec<A>>,
    pub nonempty_probs: Vec<f64>,
}

/// The family here is always small (one spec per score bucket), so stage one
/// is a direct coin per sub-instance rather than a nested sampling index.
pub fn build_meta_index<A: AccessOracle>(specs: Vec<SubInstanceSpec<A>>) -> Result<MetaIndex<A>> {
    let nonempty_probs = specs
        .iter()
        .map(|s| Ok(s.uniform()?.nonempty_prob))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetaIndex {
        specs,
        nonempty_probs,
    })
}

/// Two-stage batched sampler: flip the nonempty coin per sub-instance, then
/// run the conditioned sampler plus rejection only where the coin fired.
/// The union is an exact subset sample of the disjoint union instance.
pub fn ss_rejected_batch<A: AccessOracle>(
    meta: &MetaIndex<A>,
    rng: &mut SplitRng,
) -> Result<Vec<A::Item>> {
    let mut out = Vec::new();
    for (i, spec) in meta.specs.iter().enumerate() {
        let mut sub_rng = rng.child(i as u64);
        if !sub_rng.bernoulli(meta.nonempty_probs[i]) {
            continue;
        }
        let inst = spec.uniform()?;
        let mut intermediate = Vec::new();
        continue_nonempty(&inst, &spec.access, &mut sub_rng, &mut intermediate)?;
        out.extend(reject_filter(spec, intermediate, &mut sub_rng)?);
    }
    Ok(out)
}
