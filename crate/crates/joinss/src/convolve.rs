//! Score-array convolution.
//!
//! Count arrays are indexed by score slot `0..=L` where slot `L` is the tail.
//! `convolve(a, b, shift, ...)` produces `out[s] = sum of a[s1]*b[s2]` over
//! all slot pairs whose three-way combination with `shift` lands on `s`.
//! For PRODUCT that is the additive convolution `s1 + s2 = s - shift`
//! (clamped at the tail); the other aggregators substitute their own
//! combiner. Arithmetic is exact 128-bit with overflow checks; a floating
//! FFT path exists for PRODUCT and must round back to the exact result.

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};
use crate::score::Aggregator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvolveMode {
    /// Exact pairwise products, O(L^2) worst case. The default.
    Schoolbook,
    /// Floating FFT with 16-bit limb splitting, PRODUCT only; falls back to
    /// schoolbook for other combiners or oversized entries.
    Fft,
}

fn checked_term(out: &mut u128, a: u128, b: u128) -> Result<()> {
    let prod = a
        .checked_mul(b)
        .ok_or_else(|| Error::Capacity("convolution term overflows u128".into()))?;
    *out = out
        .checked_add(prod)
        .ok_or_else(|| Error::Capacity("convolution sum overflows u128".into()))?;
    Ok(())
}

/// Slot pairs `(s1, s2)` with `combine(s1, s2) = target`, in lexicographic
/// order. This order is shared by the ranked-access walk and the batched
/// walk, so it is part of the index's canonical ordering.
pub fn slot_pairs(agg: &Aggregator, target: usize, cutoff: u32) -> Vec<(usize, usize)> {
    use crate::score::AggKind::*;
    let l = cutoff as usize;
    let mut pairs = Vec::new();
    match agg.kind {
        Product => {
            // s1 + s2 = target, both below the tail (tail + anything = tail)
            if target < l {
                for s1 in 0..=target {
                    pairs.push((s1, target - s1));
                }
            } else {
                for s1 in 0..=l {
                    for s2 in 0..=l {
                        if s1 + s2 >= l {
                            pairs.push((s1, s2));
                        }
                    }
                }
            }
        }
        Min => {
            // max(s1, s2) = target
            for s1 in 0..target {
                pairs.push((s1, target));
            }
            for s2 in 0..=target {
                pairs.push((target, s2));
            }
        }
        Max | Sum => {
            // min(s1, s2) = target
            for s2 in target..=l {
                pairs.push((target, s2));
            }
            for s1 in target + 1..=l {
                pairs.push((s1, target));
            }
        }
    }
    debug_assert!(pairs.windows(2).all(|w| w[0] < w[1]), "lexicographic");
    pairs
}

/// Exact combiner-aware convolution of two slot arrays of length `L+1`,
/// folding in the fixed slot `shift` (a tuple's own score).
pub fn convolve_schoolbook(
    a: &[u128],
    b: &[u128],
    shift: usize,
    agg: &Aggregator,
    cutoff: u32,
) -> Result<Vec<u128>> {
    let slots = cutoff as usize + 1;
    debug_assert!(a.len() <= slots && b.len() <= slots && shift < slots + 1);
    let mut out = vec![0u128; slots];
    for (s1, &va) in a.iter().enumerate() {
        if va == 0 {
            continue;
        }
        for (s2, &vb) in b.iter().enumerate() {
            if vb == 0 {
                continue;
            }
            let s = agg.combine_slots(agg.combine_slots(s1, s2, cutoff), shift, cutoff);
            checked_term(&mut out[s], va, vb)?;
        }
    }
    Ok(out)
}

/// Convolve with the selected mode.
pub fn convolve(
    a: &[u128],
    b: &[u128],
    shift: usize,
    agg: &Aggregator,
    cutoff: u32,
    mode: ConvolveMode,
) -> Result<Vec<u128>> {
    match mode {
        ConvolveMode::Schoolbook => convolve_schoolbook(a, b, shift, agg, cutoff),
        ConvolveMode::Fft => convolve_fft(a, b, shift, agg, cutoff),
    }
}

const LIMB_BITS: u32 = 16;
const LIMB_MASK: u128 = (1 << LIMB_BITS) - 1;

/// FFT path: split entries into 16-bit limbs so every limb-product
/// coefficient stays far below 2^53 and rounds back exactly, then recombine
/// in u128. Applies to the additive (PRODUCT) combiner with entries below
/// 2^64; anything else falls back to the schoolbook path.
pub fn convolve_fft(
    a: &[u128],
    b: &[u128],
    shift: usize,
    agg: &Aggregator,
    cutoff: u32,
) -> Result<Vec<u128>> {
    use crate::score::AggKind;
    let max_entry = a.iter().chain(b.iter()).copied().max().unwrap_or(0);
    if agg.kind != AggKind::Product || max_entry >= (1u128 << 63) {
        return convolve_schoolbook(a, b, shift, agg, cutoff);
    }
    let slots = cutoff as usize + 1;
    let limbs = ((128 - max_entry.leading_zeros()).div_ceil(LIMB_BITS)).max(1);

    let n = (a.len() + b.len()).next_power_of_two().max(2);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let limb_slice = |src: &[u128], limb: u32| -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (i, &v) in src.iter().enumerate() {
            buf[i].re = ((v >> (limb * LIMB_BITS)) & LIMB_MASK) as f64;
        }
        buf
    };

    let a_hat: Vec<Vec<Complex64>> = (0..limbs)
        .map(|limb| {
            let mut buf = limb_slice(a, limb);
            fft.process(&mut buf);
            buf
        })
        .collect();
    let b_hat: Vec<Vec<Complex64>> = (0..limbs)
        .map(|limb| {
            let mut buf = limb_slice(b, limb);
            fft.process(&mut buf);
            buf
        })
        .collect();
    // rustfft's inverse is unnormalized
    let scale = 1.0 / n as f64;

    // raw additive convolution before shift/clamp, as exact integers
    let mut raw = vec![0u128; a.len() + b.len() - 1];
    let mut prod = vec![Complex64::new(0.0, 0.0); n];
    for la in 0..limbs {
        for lb in 0..limbs {
            for i in 0..n {
                prod[i] = a_hat[la as usize][i] * b_hat[lb as usize][i];
            }
            ifft.process(&mut prod);
            let shift_bits = (la + lb) * LIMB_BITS;
            for (i, slot) in raw.iter_mut().enumerate() {
                let coeff = (prod[i].re * scale).round();
                debug_assert!(coeff >= -0.5);
                if coeff >= 0.5 {
                    let term = (coeff as u128)
                        .checked_shl(shift_bits)
                        .filter(|t| t >> shift_bits == coeff as u128)
                        .ok_or_else(|| {
                            Error::Capacity("fft recombination overflows u128".into())
                        })?;
                    *slot = slot.checked_add(term).ok_or_else(|| {
                        Error::Capacity("fft recombination overflows u128".into())
                    })?;
                }
            }
        }
    }
    let mut out = vec![0u128; slots];
    for (s, &v) in raw.iter().enumerate() {
        if v == 0 {
            continue;
        }
        let target = agg.combine_slots(s, shift, cutoff);
        out[target] = out[target]
            .checked_add(v)
            .ok_or_else(|| Error::Capacity("convolution sum overflows u128".into()))?;
    }
    Ok(out)
}
