//! Closed-form tail-probability bounds for the samplers: a Hoeffding-style
//! bound for the truncated permutation sampler, per-position marginal ranges
//! derived from size-based utility bounds, a Bennett-style bound for the
//! class sampler, and union-bound aggregation over the value vector in
//! `l^p` norms.
//!
//! All probabilities come back both raw and clamped to one; the raw value is
//! what you plot, the clamped value is the probability statement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PlayerId;

/// A tail bound before and after clamping into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundValue {
    pub raw: f64,
    pub clamped: f64,
}

impl BoundValue {
    fn from_raw(raw: f64) -> Self {
        Self {
            raw,
            clamped: raw.min(1.0),
        }
    }
}

/// Inputs of the truncated-sampler bound for one client.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TmcBoundInput {
    /// `m_j`: samples with the client in position `j`, for `j = 1..=k`.
    pub per_position_samples: Vec<u64>,
    /// Largest per-position marginal range over positions `1..=k`.
    pub r_max: f64,
    /// Deviation being bounded.
    pub epsilon: f64,
    /// Truncation bias: the gap between the full value and its restriction
    /// to the first `k` positions. Must be strictly below `epsilon`.
    pub epsilon_k: f64,
}

impl TmcBoundInput {
    pub fn k(&self) -> usize {
        self.per_position_samples.len()
    }

    fn validate(&self) -> Result<()> {
        if self.per_position_samples.is_empty() {
            return Err(Error::InvalidBound("need at least one position count".into()));
        }
        if !(self.r_max > 0.0) {
            return Err(Error::InvalidBound("r_max must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidBound("epsilon must be positive".into()));
        }
        if !(self.epsilon_k >= 0.0) {
            return Err(Error::InvalidBound("epsilon_k must be non-negative".into()));
        }
        if self.epsilon <= self.epsilon_k {
            return Err(Error::InvalidBound(format!(
                "epsilon ({}) must exceed epsilon_k ({}); the bound is vacuous otherwise",
                self.epsilon, self.epsilon_k
            )));
        }
        Ok(())
    }
}

/// `min(1, sum_{j=1..k} 2 exp(-2 m_j (eps - eps_k)^2 / (k^2 r_max^2)))`.
pub fn tmc_bound(input: &TmcBoundInput) -> Result<BoundValue> {
    input.validate()?;
    let k = input.k() as f64;
    let gap = input.epsilon - input.epsilon_k;
    let denom = k * k * input.r_max * input.r_max;
    let raw = input
        .per_position_samples
        .iter()
        .map(|&m| 2.0 * (-2.0 * m as f64 * gap * gap / denom).exp())
        .sum();
    Ok(BoundValue::from_raw(raw))
}

/// Upper bound on the marginal-contribution range at position `k + 1`
/// (1-based `k`), from per-point utility bounds by coalition size:
/// `a[j] * (j+1) <= U <= b[j] * (j+1)` for coalitions of size `j + 1`
/// (0-based storage: `a[0]` bounds singletons).
///
/// The general form is
/// `(b_{k+1} - a_k) k + b_{k+1} - (a_{k+1} - b_k) k - a_{k+1}`;
/// with `nonnegative` the lower end tightens to
/// `c_{k+1} = max((a_{k+1} - b_k) k + a_{k+1}, 0)`.
pub fn positional_range(a: &[f64], b: &[f64], k: usize, nonnegative: bool) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidBound("bound arrays must have equal length".into()));
    }
    if k == 0 || k >= a.len() {
        return Err(Error::InvalidBound(format!(
            "need bounds for sizes k = {k} and k + 1; got {} entries",
            a.len()
        )));
    }
    for (j, (&lo, &hi)) in a.iter().zip(b).enumerate() {
        if lo > hi {
            return Err(Error::InvalidBound(format!(
                "a[{j}] = {lo} exceeds b[{j}] = {hi}"
            )));
        }
    }
    let kf = k as f64;
    let (a_k, b_k) = (a[k - 1], b[k - 1]);
    let (a_k1, b_k1) = (a[k], b[k]);
    let upper = (b_k1 - a_k) * kf + b_k1;
    let lower = if nonnegative {
        ((a_k1 - b_k) * kf + a_k1).max(0.0)
    } else {
        (a_k1 - b_k) * kf + a_k1
    };
    Ok(upper - lower)
}

/// The Bennett rate function `h(x) = (1 + x) ln(1 + x) - x` for `x >= 0`.
pub fn bennett_h(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidBound(format!("h(x) needs x >= 0, got {x}")));
    }
    Ok((1.0 + x) * x.ln_1p() - x)
}

/// Inputs of the class-sampler bound for one client.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmcBoundInput {
    /// Selection probability of the client's class.
    pub q: f64,
    /// Sample size `T`.
    pub sample_size: u64,
    /// Range of the client's marginal contribution.
    pub delta: f64,
    /// Deviation being bounded.
    pub epsilon: f64,
}

impl CmcBoundInput {
    fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::InvalidBound(format!(
                "selection probability must lie in (0, 1], got {}",
                self.q
            )));
        }
        if self.sample_size == 0 {
            return Err(Error::InvalidBound("sample size must be positive".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidBound("delta must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidBound("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// `min(1, exp(-(2q - q^2) T h(eps / ((2q - q^2) delta))))`.
pub fn cmc_bound(input: &CmcBoundInput) -> Result<BoundValue> {
    input.validate()?;
    let variance_factor = 2.0 * input.q - input.q * input.q;
    let h = bennett_h(input.epsilon / (variance_factor * input.delta))?;
    let raw = (-variance_factor * input.sample_size as f64 * h).exp();
    Ok(BoundValue::from_raw(raw))
}

/// Union bound over the value vector in the `l^p` norm: each client's tail
/// is evaluated at `eps / n^(1/p)` for finite `p`, or at `eps` for the sup
/// norm, and the results are summed and clamped.
pub fn vector_bound(
    per_client_bound: impl Fn(PlayerId, f64) -> f64,
    n: usize,
    p: f64,
    epsilon: f64,
) -> Result<BoundValue> {
    if n == 0 {
        return Err(Error::InvalidBound("need at least one client".into()));
    }
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidBound(format!("p must lie in [1, inf], got {p}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidBound("epsilon must be positive".into()));
    }
    let per_client_eps = if p.is_infinite() {
        epsilon
    } else {
        epsilon / (n as f64).powf(1.0 / p)
    };
    let raw = (0..n).map(|i| per_client_bound(i, per_client_eps)).sum();
    Ok(BoundValue::from_raw(raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tmc_bound_single_position_closed_form() {
        // k = 1, m = 1000, r_max = 1, eps - eps_k = 0.1: 2 exp(-20).
        let input = TmcBoundInput {
            per_position_samples: vec![1000],
            r_max: 1.0,
            epsilon: 0.1,
            epsilon_k: 0.0,
        };
        let bound = tmc_bound(&input).unwrap();
        let expected = 2.0 * (-20.0f64).exp();
        assert!((bound.raw - expected).abs() < 1e-22);
        assert!((expected - 4.12e-9).abs() < 1e-11);
        assert_eq!(bound.clamped, bound.raw);
    }

    #[test]
    fn tmc_bound_without_samples_is_vacuous() {
        let input = TmcBoundInput {
            per_position_samples: vec![0, 0, 0],
            r_max: 1.0,
            epsilon: 0.5,
            epsilon_k: 0.0,
        };
        let bound = tmc_bound(&input).unwrap();
        assert_eq!(bound.raw, 6.0); // 2k
        assert_eq!(bound.clamped, 1.0);
    }

    #[test]
    fn tmc_bound_shrinks_when_samples_double() {
        let base = TmcBoundInput {
            per_position_samples: vec![100, 200, 300],
            r_max: 2.0,
            epsilon: 0.6,
            epsilon_k: 0.1,
        };
        let doubled = TmcBoundInput {
            per_position_samples: vec![200, 400, 600],
            ..base.clone()
        };
        assert!(tmc_bound(&doubled).unwrap().raw < tmc_bound(&base).unwrap().raw);
    }

    #[test]
    fn tmc_bound_rejects_epsilon_below_bias() {
        let input = TmcBoundInput {
            per_position_samples: vec![10],
            r_max: 1.0,
            epsilon: 0.05,
            epsilon_k: 0.1,
        };
        assert!(matches!(tmc_bound(&input), Err(Error::InvalidBound(_))));
    }

    #[test]
    fn positional_range_degenerate_equal_bounds() {
        let a = vec![2.0; 5];
        let b = vec![2.0; 5];
        assert_eq!(positional_range(&a, &b, 3, false).unwrap(), 0.0);
    }

    #[test]
    fn positional_range_unit_box_both_forms() {
        // a = 0, b = 1 everywhere: general form 2k + 1, non-negative k + 1.
        let a = vec![0.0; 6];
        let b = vec![1.0; 6];
        for k in 1..=4usize {
            let general = positional_range(&a, &b, k, false).unwrap();
            assert_eq!(general, (2 * k + 1) as f64);
            let tightened = positional_range(&a, &b, k, true).unwrap();
            assert_eq!(tightened, (k + 1) as f64);
            assert!(tightened < general);
        }
    }

    #[test]
    fn positional_range_nonnegative_tightens_only_when_applicable() {
        // a close to b: the non-negative floor stays above zero and the
        // tightened range is strictly smaller than the general one.
        let a = vec![1.0, 1.0, 1.0];
        let b = vec![1.1, 1.1, 1.1];
        let general = positional_range(&a, &b, 1, false).unwrap();
        let tightened = positional_range(&a, &b, 1, true).unwrap();
        assert!(tightened < general);
        assert!((general - (0.1 + 1.1 + 0.1 - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn positional_range_rejects_inverted_bounds() {
        assert!(positional_range(&[1.0, 2.0], &[0.5, 3.0], 1, false).is_err());
        assert!(positional_range(&[0.0], &[1.0], 1, false).is_err()); // k+1 missing
    }

    #[test]
    fn bennett_h_reference_values() {
        assert_eq!(bennett_h(0.0).unwrap(), 0.0);
        let h1 = bennett_h(1.0).unwrap();
        assert!((h1 - (2.0 * std::f64::consts::LN_2 - 1.0)).abs() < 1e-15);
        assert!(bennett_h(-0.1).is_err());
        // Strictly increasing on a grid.
        let mut prev = 0.0;
        for i in 1..=100 {
            let x = i as f64 * 0.1;
            let h = bennett_h(x).unwrap();
            assert!(h > prev);
            prev = h;
        }
    }

    #[test]
    fn cmc_bound_matches_hand_evaluation() {
        // q = 0.8, T = 1000, delta = 1, eps = 0.1: about 6.4e-3.
        let input = CmcBoundInput {
            q: 0.8,
            sample_size: 1000,
            delta: 1.0,
            epsilon: 0.1,
        };
        let bound = cmc_bound(&input).unwrap();
        let factor = 2.0 * 0.8 - 0.64;
        let expected = (-factor * 1000.0 * bennett_h(0.1 / factor).unwrap()).exp();
        assert!((bound.raw - expected).abs() < 1e-15);
        assert!((bound.raw - 6.4e-3).abs() < 3e-4);
    }

    #[test]
    fn cmc_bound_full_selection_is_plain_bennett() {
        let input = CmcBoundInput {
            q: 1.0,
            sample_size: 500,
            delta: 2.0,
            epsilon: 0.2,
        };
        let bound = cmc_bound(&input).unwrap();
        let expected = (-500.0 * bennett_h(0.1).unwrap()).exp();
        assert!((bound.raw - expected).abs() < 1e-15);
    }

    #[test]
    fn cmc_bound_decreases_with_sample_size() {
        let small = CmcBoundInput {
            q: 0.5,
            sample_size: 100,
            delta: 1.0,
            epsilon: 0.1,
        };
        let large = CmcBoundInput {
            sample_size: 200,
            ..small.clone()
        };
        assert!(cmc_bound(&large).unwrap().raw < cmc_bound(&small).unwrap().raw);
    }

    #[test]
    fn cmc_bound_rejects_out_of_range_q() {
        for q in [0.0, -0.5, 1.5] {
            let input = CmcBoundInput {
                q,
                sample_size: 10,
                delta: 1.0,
                epsilon: 0.1,
            };
            assert!(cmc_bound(&input).is_err());
        }
    }

    #[test]
    fn vector_bound_single_client_is_identity() {
        for p in [1.0, 2.0, f64::INFINITY] {
            let bound = vector_bound(|_, e| e * 0.5, 1, p, 0.4).unwrap();
            assert!((bound.raw - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn vector_bound_sup_norm_is_union_bound() {
        let bound = vector_bound(|_, e| (-e).exp() * 0.1, 4, f64::INFINITY, 0.5).unwrap();
        let single = (-0.5f64).exp() * 0.1;
        assert!((bound.raw - 4.0 * single).abs() < 1e-15);
    }

    #[test]
    fn vector_bound_splits_epsilon_for_finite_p() {
        // p = 2, n = 4, beta(e) = exp(-e^2): substitute e' = eps / sqrt(4).
        let eps = 0.8;
        let bound = vector_bound(|_, e| (-e * e).exp(), 4, 2.0, eps).unwrap();
        let expected = 4.0 * (-(eps / 2.0) * (eps / 2.0)).exp();
        assert!((bound.raw - expected).abs() < 1e-15);
        assert_eq!(bound.clamped, 1.0);
    }

    #[test]
    fn vector_bound_rejects_bad_p() {
        assert!(vector_bound(|_, _| 0.0, 2, 0.5, 0.1).is_err());
        assert!(vector_bound(|_, _| 0.0, 2, f64::NAN, 0.1).is_err());
    }
}
