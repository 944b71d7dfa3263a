//! Small numeric utilities used across evaluators and solvers:
//! compensated summation, probability-vector checks, simplex tools,
//! quantized fingerprints for merging nearly identical atoms, and a
//! deterministic categorical sampler.

use rand::Rng;

use crate::error::{Result, TeamError};

/// Tolerance for exact-arithmetic checks (row sums, weight sums, merges).
pub const EXACT_TOL: f64 = 1e-12;

/// Tolerance for accumulated floating sums (densities, change of measure).
pub const ACCUM_TOL: f64 = 1e-9;

/// Quantization scale for atom fingerprints: 2^40 ≈ 1.1e12, so values
/// closer than ~9.1e-13 collapse to the same fingerprint. Dyadic rationals
/// (the bulk of hand-built test data) quantize exactly.
const FINGERPRINT_SCALE: f64 = (1u64 << 40) as f64;

/// Neumaier compensated accumulator: error stays O(ε·Σ|terms|) regardless
/// of term count or ordering, which keeps reorder-sensitive comparisons
/// (e.g. cost before/after symmetrization) inside a 1e-12 budget.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    #[must_use]
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, term: f64) {
        let t = self.sum + term;
        if self.sum.abs() >= term.abs() {
            self.compensation += (self.sum - t) + term;
        } else {
            self.compensation += (term - t) + self.sum;
        }
        self.sum = t;
    }

    #[must_use]
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Checks that `v` is a probability vector: entries in [0, 1] (up to sign
/// noise) and total within `EXACT_TOL` of 1.
pub fn check_probability_vector(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(TeamError::Config(format!("{what}: empty probability vector")));
    }
    let mut total = KahanSum::new();
    for (i, &p) in v.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0 + EXACT_TOL).contains(&p) {
            return Err(TeamError::Config(format!(
                "{what}: entry {i} = {p} is not a probability"
            )));
        }
        total.add(p);
    }
    let s = total.value();
    if (s - 1.0).abs() > EXACT_TOL {
        return Err(TeamError::Config(format!(
            "{what}: entries sum to {s}, expected 1 within {EXACT_TOL}"
        )));
    }
    Ok(())
}

/// Quantized fingerprint of one float (see `FINGERPRINT_SCALE`).
#[must_use]
pub fn fingerprint(x: f64) -> i64 {
    (x * FINGERPRINT_SCALE).round() as i64
}

/// Quantized fingerprint of a float slice.
#[must_use]
pub fn fingerprint_slice(xs: &[f64]) -> Vec<i64> {
    xs.iter().copied().map(fingerprint).collect()
}

/// Euclidean projection of `x` onto the probability simplex
/// {p : p_i ≥ 0, Σp_i = 1}. Standard sort-and-threshold algorithm.
#[must_use]
pub fn project_to_simplex(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    debug_assert!(n > 0);
    let mut sorted: Vec<f64> = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    let mut support = 0usize;
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
            support = k + 1;
        }
    }
    debug_assert!(support > 0);
    x.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// All points of the simplex grid with the given `pitch` denominator:
/// vectors (k_1/pitch, …, k_d/pitch) with Σk_i = pitch. Enumeration order
/// is lexicographic in (k_1, …, k_{d-1}), so results are reproducible.
#[must_use]
pub fn simplex_grid(dim: usize, pitch: usize) -> Vec<Vec<f64>> {
    assert!(dim >= 1 && pitch >= 1);
    let mut out = Vec::new();
    let mut counts = vec![0usize; dim];
    fill_compositions(pitch, 0, &mut counts, &mut out, pitch);
    out
}

fn fill_compositions(
    remaining: usize,
    pos: usize,
    counts: &mut Vec<usize>,
    out: &mut Vec<Vec<f64>>,
    pitch: usize,
) {
    if pos == counts.len() - 1 {
        counts[pos] = remaining;
        out.push(counts.iter().map(|&k| k as f64 / pitch as f64).collect());
        return;
    }
    for k in 0..=remaining {
        counts[pos] = k;
        fill_compositions(remaining - k, pos + 1, counts, out, pitch);
    }
}

/// Number of simplex-grid points without materializing them:
/// C(pitch + dim - 1, dim - 1), saturating at `u64::MAX`.
#[must_use]
pub fn simplex_grid_len(dim: usize, pitch: usize) -> u64 {
    binomial_u64(pitch as u64 + dim as u64 - 1, dim as u64 - 1)
}

fn binomial_u64(n: u64, k: u64) -> u64 {
    let k = k.min(n - k.min(n));
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u64::MAX,
        };
    }
    acc
}

/// Binomial coefficient in f64 via the multiplicative recurrence (stable
/// and exact to f64 precision for the N ≤ 64 team sizes used here).
#[must_use]
pub fn binomial_f64(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Multinomial coefficient n! / Π k_i! as f64, via a product of binomials.
#[must_use]
pub fn multinomial_f64(counts: &[usize]) -> f64 {
    let mut total = 0usize;
    let mut acc = 1.0f64;
    for &k in counts {
        total += k;
        acc *= binomial_f64(total, k);
    }
    acc
}

/// All ways to write `total` as an ordered sum of `parts` nonnegative
/// integers, in lexicographic order (the integer skeleton of
/// [`simplex_grid`]; count given by `simplex_grid_len(parts, total)`).
#[must_use]
pub fn integer_compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(remaining: usize, parts_left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts_left == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for take in 0..=remaining {
            prefix.push(take);
            rec(remaining - take, parts_left - 1, prefix, out);
            prefix.pop();
        }
    }
    if parts == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    rec(total, parts, &mut Vec::with_capacity(parts), &mut out);
    out
}

/// Draws an index from a categorical distribution by inverse-CDF walk.
/// Consumes exactly one `f64` from the RNG, so estimators that sample the
/// same distribution at the same point of their schedule stay seed-matched.
pub fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Total variation distance ½ Σ |p_i − q_i| between two finite laws over a
/// common label set.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(TeamError::Config("tv_distance: empty input".into()));
    }
    if p.len() != q.len() {
        return Err(TeamError::Config(format!(
            "tv_distance: mismatched supports ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    let mut acc = KahanSum::new();
    for (a, b) in p.iter().zip(q) {
        acc.add((a - b).abs());
    }
    Ok(0.5 * acc.value())
}
