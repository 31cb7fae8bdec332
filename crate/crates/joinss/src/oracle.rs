//! Brute-force ground truth and the statistical harness.
//!
//! Nothing here touches the index structures: the reference sampler flips
//! one coin per materialized result, and the frequency checks compare any
//! sampler's output against analytic expectations. Statistical tests run on
//! deterministic streams with pinned seeds, so failures are reproducible.

use std::collections::HashMap;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::instance::JoinResult;
use crate::rng::SplitRng;
use crate::score::{Aggregator, Score};

/// Reference sampler: independent Bernoulli(p) per materialized result.
pub fn naive_subset_sample(results: &[JoinResult], rng: &mut SplitRng) -> Vec<JoinResult> {
    results
        .iter()
        .filter(|r| rng.bernoulli(r.probability))
        .cloned()
        .collect()
}

/// Stable filter of the canonically ordered results by score bucket.
pub fn enumerate_bucket(results: &[JoinResult], score: Score, _agg: &Aggregator) -> Vec<JoinResult> {
    results
        .iter()
        .filter(|r| r.score == score)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultFrequency {
    pub key: String,
    pub expected_probability: f64,
    pub observed: u64,
    pub trials: u64,
    /// Binomial z-score; zero for the exactly-asserted p in {0, 1}.
    pub z: f64,
}

/// Per-result and per-size-histogram comparison of sampled sets against
/// expected inclusion probabilities.
#[derive(Debug, Clone, Serialize)]
pub struct FrequencyReport {
    pub trials: u64,
    pub per_result: Vec<ResultFrequency>,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub max_abs_z: f64,
    pub mean_sample_size: f64,
    pub expected_sample_size: f64,
    pub passed: bool,
}

/// Significance for the chi-square stage; per-result z-scores gate at 4.
pub const CHI_SQUARE_SIGNIFICANCE: f64 = 1e-3;
pub const Z_LIMIT: f64 = 4.0;

/// Distribution of the sample size when result `i` is included independently
/// with probability `p_i`, by dynamic programming.
pub fn poisson_binomial_law(probabilities: &[f64]) -> Vec<f64> {
    let mut law = vec![1.0f64];
    for &p in probabilities {
        let mut next = vec![0.0; law.len() + 1];
        for (k, &mass) in law.iter().enumerate() {
            next[k] += mass * (1.0 - p);
            next[k + 1] += mass * p;
        }
        law = next;
    }
    law
}

/// Upper-tail p-value of a chi-square statistic.
pub fn chi_square_p_value(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("dof > 0");
    1.0 - dist.cdf(statistic)
}

/// Compare observed per-result frequencies and the sample-size histogram
/// against the expected law.
pub fn compare_frequencies(
    trials: &[Vec<JoinResult>],
    expected: &[JoinResult],
) -> Result<FrequencyReport> {
    if expected.is_empty() {
        return Err(Error::InvalidArgument(
            "expected result set is empty".into(),
        ));
    }
    let t = trials.len() as u64;
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut size_histogram = vec![0u64; expected.len() + 1];
    for trial in trials {
        size_histogram[trial.len()] += 1;
        for r in trial {
            *counts.entry(format!("{:?}", r.key())).or_default() += 1;
        }
    }

    let mut per_result = Vec::with_capacity(expected.len());
    let mut max_abs_z: f64 = 0.0;
    let mut hard_failure = false;
    for r in expected {
        let key = format!("{:?}", r.key());
        let observed = counts.get(&key).copied().unwrap_or(0);
        let p = r.probability;
        let z = if p <= 0.0 || p >= 1.0 {
            // exact membership: p = 1 results must appear every time,
            // p = 0 results never
            let want = if p >= 1.0 { t } else { 0 };
            if observed != want {
                hard_failure = true;
            }
            0.0
        } else {
            let mean = t as f64 * p;
            let sd = (t as f64 * p * (1.0 - p)).sqrt();
            (observed as f64 - mean) / sd
        };
        max_abs_z = max_abs_z.max(z.abs());
        per_result.push(ResultFrequency {
            key,
            expected_probability: p,
            observed,
            trials: t,
            z,
        });
    }

    // chi-square of the size histogram against the analytic law, merging
    // bins with tiny expectation
    let probabilities: Vec<f64> = expected.iter().map(|r| r.probability).collect();
    let law = poisson_binomial_law(&probabilities);
    let mut chi = 0.0;
    let mut bins = 0usize;
    let mut acc_obs = 0.0;
    let mut acc_exp = 0.0;
    for (k, &mass) in law.iter().enumerate() {
        acc_obs += size_histogram[k] as f64;
        acc_exp += mass * t as f64;
        if acc_exp >= 5.0 || k == law.len() - 1 {
            if acc_exp > 0.0 {
                chi += (acc_obs - acc_exp).powi(2) / acc_exp;
                bins += 1;
            }
            acc_obs = 0.0;
            acc_exp = 0.0;
        }
    }
    let dof = bins.saturating_sub(1);
    let p_value = chi_square_p_value(chi, dof);

    let mean_sample_size =
        trials.iter().map(|s| s.len() as f64).sum::<f64>() / trials.len() as f64;
    let expected_sample_size: f64 = probabilities.iter().sum();

    let passed = !hard_failure
        && max_abs_z <= Z_LIMIT
        && (dof == 0 || p_value >= CHI_SQUARE_SIGNIFICANCE);
    Ok(FrequencyReport {
        trials: t,
        per_result,
        chi_square: chi,
        degrees_of_freedom: dof,
        p_value,
        max_abs_z,
        mean_sample_size,
        expected_sample_size,
        passed,
    })
}

/// Two-sample chi-square over matching histograms (e.g. subset-size counts
/// from two samplers that should agree in distribution).
pub fn two_sample_chi_square(a: &[u64], b: &[u64]) -> (f64, usize, f64) {
    let len = a.len().max(b.len());
    let get = |h: &[u64], i: usize| h.get(i).copied().unwrap_or(0) as f64;
    let ka: f64 = a.iter().sum::<u64>() as f64;
    let kb: f64 = b.iter().sum::<u64>() as f64;
    let (ra, rb) = ((kb / ka).sqrt(), (ka / kb).sqrt());
    let mut chi = 0.0;
    let mut bins = 0usize;
    let mut acc_a = 0.0;
    let mut acc_b = 0.0;
    for i in 0..len {
        acc_a += get(a, i);
        acc_b += get(b, i);
        // merge until both pools are populated enough
        if acc_a + acc_b >= 10.0 || i == len - 1 {
            if acc_a + acc_b > 0.0 {
                chi += (ra * acc_a - rb * acc_b).powi(2) / (acc_a + acc_b);
                bins += 1;
            }
            acc_a = 0.0;
            acc_b = 0.0;
        }
    }
    let dof = bins.saturating_sub(1);
    (chi, dof, chi_square_p_value(chi, dof))
}

/// Pairwise sample correlation of inclusion indicators across trials, for
/// independence checks. Returns the largest |r| over all result pairs.
pub fn max_pairwise_indicator_correlation(
    trials: &[Vec<JoinResult>],
    expected: &[JoinResult],
) -> f64 {
    let t = trials.len();
    let keys: Vec<String> = expected.iter().map(|r| format!("{:?}", r.key())).collect();
    let mut indicators = vec![vec![0u8; t]; keys.len()];
    for (trial_idx, trial) in trials.iter().enumerate() {
        for r in trial {
            let key = format!("{:?}", r.key());
            if let Some(i) = keys.iter().position(|k| *k == key) {
                indicators[i][trial_idx] = 1;
            }
        }
    }
    let mut max_r: f64 = 0.0;
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            if let Some(r) = correlation(&indicators[i], &indicators[j]) {
                max_r = max_r.max(r.abs());
            }
        }
    }
    max_r
}

fn correlation(a: &[u8], b: &[u8]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let mb = b.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = f64::from(x) - ma;
        let dy = f64::from(y) - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        // constant indicators (p in {0,1}) carry no correlation signal
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}
