//! Wilcoxon rank-sum (Mann-Whitney) test with midranks for ties.
//!
//! Small pooled samples (n1 + n2 <= 12) get a two-sided p by exhaustive
//! enumeration of all C(n, n1) group assignments; larger samples use the
//! normal approximation with tie and continuity corrections. Midranks are
//! kept as doubled integers so enumeration comparisons are exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EXACT_LIMIT: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "normal_approx")]
    NormalApprox,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StatResult {
    /// Rank sum of the first sample (midranks).
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    pub n1: usize,
    pub n2: usize,
}

/// Doubled midranks (2x the average rank of each tie run) of the pooled
/// samples, in pooled order (a first, then b). Doubling keeps them integral.
fn doubled_midranks(a: &[f64], b: &[f64]) -> Vec<i64> {
    let n = a.len() + b.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let val = |i: usize| if i < a.len() { a[i] } else { b[i - a.len()] };
    idx.sort_by(|&i, &j| val(i).partial_cmp(&val(j)).unwrap());
    let mut out = vec![0i64; n];
    let mut pos = 0usize;
    while pos < n {
        let mut end = pos + 1;
        while end < n && val(idx[end]) == val(idx[pos]) {
            end += 1;
        }
        // Ranks pos+1 ..= end (1-based); midrank doubled = (pos+1) + end.
        let doubled = (pos + 1 + end) as i64;
        for &i in &idx[pos..end] {
            out[i] = doubled;
        }
        pos = end;
    }
    out
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn check_inputs(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArg("wilcoxon needs both samples nonempty".into()));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArg("wilcoxon samples must be finite".into()));
    }
    Ok(())
}

/// Exact two-sided p: fraction of group assignments whose rank sum deviates
/// from the null mean at least as much as observed.
pub fn wilcoxon_exact(a: &[f64], b: &[f64]) -> Result<StatResult> {
    check_inputs(a, b)?;
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    assert!(n <= 63, "exact enumeration limited to small samples");
    let ranks2 = doubled_midranks(a, b);
    let w2_obs: i64 = ranks2[..n1].iter().sum();
    let mu2 = (n1 * (n + 1)) as i64; // doubled null mean n1(n+1)/2
    let dev = (w2_obs - mu2).abs();

    let mut hits = 0u64;
    let mut total = 0u64;
    // Walk all n-bit masks with popcount n1.
    let mut mask: u64 = (1u64 << n1) - 1;
    let limit: u64 = 1u64 << n;
    while mask < limit {
        let mut sum = 0i64;
        let mut m = mask;
        while m != 0 {
            let i = m.trailing_zeros() as usize;
            sum += ranks2[i];
            m &= m - 1;
        }
        total += 1;
        if (sum - mu2).abs() >= dev {
            hits += 1;
        }
        // Next mask with same popcount (Gosper's hack).
        let c = mask & mask.wrapping_neg();
        let r = mask + c;
        if r >= limit || c == 0 {
            break;
        }
        mask = (((r ^ mask) >> 2) / c) | r;
    }
    Ok(StatResult {
        statistic: w2_obs as f64 / 2.0,
        p_value: hits as f64 / total as f64,
        method: Method::Exact,
        n1,
        n2,
    })
}

/// Standard normal CDF via the Abramowitz-Stegun 7.1.26 erf polynomial
/// (|error| < 1.5e-7, ample for the approximate branch).
pub fn normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let (x, sign) = if x < 0.0 { (-x, -1.0) } else { (x, 1.0) };
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = sign * (1.0 - poly * (-x * x).exp());
    0.5 * (1.0 + erf)
}

/// Normal approximation with tie correction and continuity correction.
pub fn wilcoxon_normal(a: &[f64], b: &[f64]) -> Result<StatResult> {
    check_inputs(a, b)?;
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    let ranks2 = doubled_midranks(a, b);
    let w: f64 = ranks2[..n1].iter().map(|&r| r as f64 / 2.0).sum();
    let mu = n1 as f64 * (n + 1) as f64 / 2.0;

    // Tie runs from the doubled midranks: count multiplicity of each value.
    let mut sorted = ranks2.clone();
    sorted.sort_unstable();
    let mut tie_term = 0.0;
    let mut pos = 0;
    while pos < n {
        let mut end = pos + 1;
        while end < n && sorted[end] == sorted[pos] {
            end += 1;
        }
        let t = (end - pos) as f64;
        tie_term += t * t * t - t;
        pos = end;
    }
    let var = (n1 as f64 * n2 as f64 / 12.0)
        * ((n + 1) as f64 - tie_term / (n as f64 * (n as f64 - 1.0)));
    if var <= 0.0 {
        // Every pooled value identical: zero-deviation statistic.
        return Ok(StatResult { statistic: w, p_value: 1.0, method: Method::NormalApprox, n1, n2 });
    }
    // Continuity correction = half the lattice step of W. The statistic moves
    // on the lattice spanned by midrank differences: gcd 2 (tie-free) gives
    // the textbook 0.5, odd gcds from ties halve it.
    let g = ranks2.iter().fold(0u64, |g, &r| gcd(g, (r - ranks2[0]).unsigned_abs()));
    let cc = g as f64 / 4.0;
    let z = ((w - mu).abs() - cc).max(0.0) / var.sqrt();
    let p = (2.0 * (1.0 - normal_cdf(z))).min(1.0);
    Ok(StatResult { statistic: w, p_value: p, method: Method::NormalApprox, n1, n2 })
}

/// Two-sided rank-sum test; exact for pooled sizes up to [`EXACT_LIMIT`].
pub fn wilcoxon_ranksum(a: &[f64], b: &[f64]) -> Result<StatResult> {
    check_inputs(a, b)?;
    if a.len() + b.len() <= EXACT_LIMIT {
        wilcoxon_exact(a, b)
    } else {
        wilcoxon_normal(a, b)
    }
}
