//! Risk-level solvers.
//!
//! `epsilon_compression(k, β, N)` inverts the compression-based bound: the
//! unique `ε` in `[k/N, 1)` with
//!
//! ```text
//! β/(2N) Σ_{m=k}^{N-1} C(m,k)/C(N,k) (1-ε)^(m-N)
//!   + β/(6N) Σ_{m=N+1}^{4N} C(m,k)/C(N,k) (1-ε)^(m-N) = 1
//! ```
//!
//! `epsilon_direct(r, β, N)` inverts the binomial tail
//! `Σ_{j<=r} C(N,j) ε^j (1-ε)^(N-j) = β/N`.
//!
//! Both are evaluated in log space and solved by bisection.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("beta must lie in (0, 1), got {0}")]
    InvalidBeta(f64),
    #[error("sample count must be positive")]
    ZeroSamples,
    #[error("count {k} exceeds sample count {n}")]
    CountTooLarge { k: usize, n: usize },
    #[error("no sign change of LHS - 1 on [{lo}, {hi}]: LHS = {lhs_lo} and {lhs_hi}")]
    NoSignChange { lo: f64, hi: f64, lhs_lo: f64, lhs_hi: f64 },
}

const MAX_BISECTIONS: usize = 200;

fn check(k: usize, beta: f64, n: usize) -> Result<(), BoundError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(BoundError::InvalidBeta(beta));
    }
    if n == 0 {
        return Err(BoundError::ZeroSamples);
    }
    if k > n {
        return Err(BoundError::CountTooLarge { k, n });
    }
    Ok(())
}

fn ln_factorial(m: usize) -> f64 {
    ln_gamma(m as f64 + 1.0)
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `log Σ exp(a_i)` over the iterator.
fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Bisection on an increasing function; returns the upper end of the final
/// bracket. Only interior points are evaluated.
fn bisect_increasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Log of the left-hand side of the compression equation, as a closure in `ε`.
fn compression_log_lhs(k: usize, beta: f64, n: usize) -> impl Fn(f64) -> f64 {
    let ln_cnk = ln_choose(n, k);
    let w_low = (beta / (2.0 * n as f64)).ln();
    let w_high = (beta / (6.0 * n as f64)).ln();
    // (log weight + log binomial ratio, exponent m - N)
    let terms: Vec<(f64, f64)> = (k..n)
        .map(|m| (w_low + ln_choose(m, k) - ln_cnk, m as f64 - n as f64))
        .chain((n + 1..=4 * n).map(|m| (w_high + ln_choose(m, k) - ln_cnk, m as f64 - n as f64)))
        .collect();
    move |eps: f64| {
        let l1e = (-eps).ln_1p();
        log_sum_exp(terms.iter().map(|&(c, p)| c + p * l1e))
    }
}

/// Left-hand side of the compression equation at `ε`.
pub fn compression_lhs(k: usize, beta: f64, n: usize, eps: f64) -> Result<f64, BoundError> {
    check(k, beta, n)?;
    Ok(compression_log_lhs(k, beta, n)(eps).exp())
}

/// Risk level from a compression set (or discarded set) of size `k` out of `n`.
pub fn epsilon_compression(k: usize, beta: f64, n: usize) -> Result<f64, BoundError> {
    check(k, beta, n)?;
    if k == n {
        return Ok(1.0);
    }
    let f = compression_log_lhs(k, beta, n);
    let lo = k as f64 / n as f64;
    // For k < N the m = k term carries (1-ε)^(k-N), so the LHS diverges as
    // ε -> 1 and only the lower end needs checking.
    let f_lo = f(lo);
    if !(f_lo < 0.0) {
        return Err(BoundError::NoSignChange {
            lo,
            hi: 1.0,
            lhs_lo: f_lo.exp(),
            lhs_hi: f64::INFINITY,
        });
    }
    Ok(bisect_increasing(f, lo, 1.0))
}

/// Log of the binomial tail `P[Bin(n, ε) <= r]`.
fn ln_binomial_tail(r: usize, n: usize, eps: f64) -> f64 {
    let (le, l1e) = (eps.ln(), (-eps).ln_1p());
    log_sum_exp((0..=r).map(|j| ln_choose(n, j) + j as f64 * le + (n - j) as f64 * l1e))
}

/// Risk level from counting `r` property-violating samples out of `n`.
pub fn epsilon_direct(r: usize, beta: f64, n: usize) -> Result<f64, BoundError> {
    check(r, beta, n)?;
    if r == n {
        return Ok(1.0);
    }
    let target = (beta / n as f64).ln();
    // The tail decreases in ε, so bisect on its negation.
    Ok(bisect_increasing(|e| target - ln_binomial_tail(r, n, e), 0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n: usize,
    pub eps_compression: f64,
    pub eps_direct: f64,
}

/// `ε_compression(k, β, N)` next to `ε_direct(max(k-1, 0), β, N)` for every `N`.
pub fn bound_comparison_table(beta: f64, ns: &[usize], k: usize) -> Result<Vec<BoundRow>, BoundError> {
    ns.iter()
        .map(|&n| {
            Ok(BoundRow {
                n,
                eps_compression: epsilon_compression(k, beta, n)?,
                eps_direct: epsilon_direct(k.saturating_sub(1), beta, n)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_cases_are_exactly_one() {
        for n in [1, 10, 100, 1000] {
            assert_eq!(epsilon_compression(n, 0.01, n).unwrap(), 1.0);
            assert_eq!(epsilon_direct(n, 0.01, n).unwrap(), 1.0);
        }
    }

    #[test]
    fn direct_zero_discards() {
        let e = epsilon_direct(0, 1e-5, 1000).unwrap();
        assert!((e - 0.01825).abs() < 1e-4);
        let closed = 1.0 - (1e-5f64 / 1000.0).powf(1.0 / 1000.0);
        assert!((e - closed).abs() < 1e-9);
    }

    #[test]
    fn compression_two_of_thousand() {
        let e = epsilon_compression(2, 1e-5, 1000).unwrap();
        assert!((e - 0.02039).abs() < 5e-6, "{e}");
    }

    #[test]
    fn compression_at_lower_end_is_small() {
        // k = 0: LHS(0) = β/2 + β/2 = β.
        let lhs = compression_lhs(0, 0.3, 50, 0.0).unwrap();
        assert!((lhs - 0.3).abs() < 1e-12);
    }

    #[test]
    fn root_close_to_one() {
        // k = N - 1: the m = k term alone gives 1 - ε ≈ β/(2N²) = 1.25e-13.
        let e = epsilon_compression(1999, 1e-6, 2000).unwrap();
        assert!(e < 1.0 && e > 1.0 - 1e-12, "{e}");
        assert!(((1.0 - e) / 1.25e-13 - 1.0).abs() < 1e-2, "{e}");
    }

    #[test]
    fn parameter_errors() {
        assert_eq!(epsilon_compression(1, 0.0, 10), Err(BoundError::InvalidBeta(0.0)));
        assert_eq!(epsilon_direct(1, 1.0, 10), Err(BoundError::InvalidBeta(1.0)));
        assert_eq!(epsilon_direct(11, 0.1, 10), Err(BoundError::CountTooLarge { k: 11, n: 10 }));
        assert_eq!(epsilon_compression(0, 0.1, 0), Err(BoundError::ZeroSamples));
    }

    #[test]
    fn monotone_probes() {
        let b = 1e-5;
        assert!(epsilon_compression(5, b, 1000).unwrap() > epsilon_compression(1, b, 1000).unwrap());
        assert!(epsilon_compression(3, b, 2000).unwrap() < epsilon_compression(3, b, 1000).unwrap());
        assert!(epsilon_compression(3, 1e-8, 1000).unwrap() > epsilon_compression(3, b, 1000).unwrap());
        assert!(epsilon_direct(3, b, 1000).unwrap() > epsilon_direct(2, b, 1000).unwrap());
    }

    #[test]
    fn table_rows() {
        let rows = bound_comparison_table(1e-5, &[100, 250, 500, 1000], 1).unwrap();
        assert_eq!(rows.len(), 4);
        assert!((rows[3].eps_direct - 0.01825).abs() < 1e-4);
        for w in rows.windows(2) {
            assert!(w[1].eps_compression <= w[0].eps_compression);
            assert!(w[1].eps_direct <= w[0].eps_direct);
        }
        // With one compression sample against zero violations the compression
        // bound is the larger one for small N only.
        assert!(rows[0].eps_compression > rows[0].eps_direct);
        assert!(rows[3].eps_compression < rows[3].eps_direct);
    }
}
