//! PAC-Bayesian bounds on the majority-vote risk.
//!
//! With probability at least `1 − δ` over the hold-out sample, for every
//! posterior `ρ` and every `λ ∈ (0, 2)`:
//!
//! ```text
//! L(MV_ρ) ≤ 4 · ( E_ρ²[L̂] / (1 − λ/2) + (2·KL(ρ‖π) + ln(2√n/δ)) / (λ(1 − λ/2)n) )
//! ```
//!
//! where `E_ρ²[L̂]` is the expected tandem loss. The first-order baseline
//! bounds the vote by twice the Gibbs risk in the same λ-form:
//!
//! ```text
//! L(MV_ρ) ≤ 2 · ( E_ρ[L̂] / (1 − λ/2) + (KL(ρ‖π) + ln(2√n/δ)) / (λ(1 − λ/2)n) )
//! ```

use serde::{Deserialize, Serialize};

use crate::data::{check_prior, check_simplex, WeightDistribution};
use crate::error::{Error, Result};
use crate::loss::{expected_gibbs, expected_tandem, LossTables};

pub const DEFAULT_DELTA: f64 = 0.05;

/// Confidence `delta` and effective sample size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub delta: f64,
    pub n: usize,
}

impl BoundParams {
    pub fn new(delta: f64, n: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::DeltaOutOfRange(delta));
        }
        if n == 0 {
            return Err(Error::EmptySample);
        }
        Ok(BoundParams { delta, n })
    }

    /// Parameters for tables estimated with overlap sets (`n = n_min`).
    pub fn for_tables(delta: f64, loss: &LossTables) -> Result<Self> {
        Self::new(delta, loss.n_min)
    }

    /// `ln(2√n / δ)`.
    pub fn log_term(&self) -> f64 {
        (2.0 * (self.n as f64).sqrt() / self.delta).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    FirstOrder,
    Tandem,
    Hoeffding,
}

impl BoundKind {
    /// Outer factor and KL coefficient of the λ-form.
    pub(crate) fn coefficients(self) -> (f64, f64) {
        match self {
            BoundKind::Tandem => (4.0, 2.0),
            BoundKind::FirstOrder | BoundKind::Hoeffding => (2.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub lambda: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    /// `min(raw_value, 1)`.
    pub value: f64,
    pub raw_value: f64,
    pub vacuous: bool,
    pub lambda: f64,
    pub kl: f64,
    pub delta: f64,
    pub n: usize,
    /// `E_ρ²[L̂]` for the tandem bound, `E_ρ[L̂]` for the first-order one.
    pub expected_loss: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TracePoint>,
}

impl BoundReport {
    fn new(kind: BoundKind, raw: f64, lambda: f64, kl: f64, expected_loss: f64, p: BoundParams) -> Self {
        BoundReport {
            kind,
            value: raw.min(1.0),
            raw_value: raw,
            vacuous: raw >= 1.0,
            lambda,
            kl,
            delta: p.delta,
            n: p.n,
            expected_loss,
            trace: Vec::new(),
        }
    }

    /// Accuracy-style guarantee, `1 − value`.
    pub fn guarantee(&self) -> f64 {
        1.0 - self.value
    }
}

/// `KL(ρ‖π) = Σ ρ_i ln(ρ_i/π_i)`, with `0 · ln 0 = 0`.
pub fn kl_divergence(rho: &[f64], pi: &[f64]) -> Result<f64> {
    if rho.len() != pi.len() {
        return Err(Error::WeightLength {
            expected: pi.len(),
            found: rho.len(),
        });
    }
    if let Some((index, &value)) = pi.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositivePrior { index, value });
    }
    Ok(kl_unchecked(rho, pi))
}

pub(crate) fn kl_unchecked(rho: &[f64], pi: &[f64]) -> f64 {
    let kl: f64 = rho
        .iter()
        .zip(pi)
        .filter(|(&r, _)| r > 0.0)
        .map(|(&r, &p)| r * (r / p).ln())
        .sum();
    // Rounding can push a zero divergence slightly negative.
    kl.max(0.0)
}

/// The λ-form `factor · (E/(1−λ/2) + (c·KL + ln(2√n/δ)) / (λ(1−λ/2)n))`.
pub(crate) fn lambda_form(kind: BoundKind, expected: f64, kl: f64, lambda: f64, p: BoundParams) -> f64 {
    let (factor, kl_coef) = kind.coefficients();
    let shrink = 1.0 - lambda / 2.0;
    factor * (expected / shrink + (kl_coef * kl + p.log_term()) / (lambda * shrink * p.n as f64))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 2.0 {
        Ok(())
    } else {
        Err(Error::LambdaOutOfRange(lambda))
    }
}

/// Raw tandem bound from its scalar ingredients.
pub fn tandem_bound_value(expected_tandem: f64, kl: f64, lambda: f64, p: BoundParams) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda_form(BoundKind::Tandem, expected_tandem, kl, lambda, p))
}

/// Raw first-order bound from its scalar ingredients.
pub fn first_order_bound_value(expected_gibbs: f64, kl: f64, lambda: f64, p: BoundParams) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(lambda_form(BoundKind::FirstOrder, expected_gibbs, kl, lambda, p))
}

fn check_weights(loss: &LossTables, w: &WeightDistribution) -> Result<()> {
    if w.rho.len() != loss.num_members() {
        return Err(Error::WeightLength {
            expected: loss.num_members(),
            found: w.rho.len(),
        });
    }
    check_simplex(&w.rho)?;
    check_prior(&w.pi)?;
    check_lambda(w.lambda)
}

/// Second-order (tandem) bound at the weights and λ of `w`.
pub fn tandem_bound(loss: &LossTables, w: &WeightDistribution, p: BoundParams) -> Result<BoundReport> {
    check_weights(loss, w)?;
    let kl = kl_divergence(&w.rho, &w.pi)?;
    let expected = expected_tandem(loss, &w.rho);
    let raw = lambda_form(BoundKind::Tandem, expected, kl, w.lambda, p);
    Ok(BoundReport::new(BoundKind::Tandem, raw, w.lambda, kl, expected, p))
}

/// First-order bound (twice the Gibbs risk) at the weights and λ of `w`.
pub fn first_order_bound(loss: &LossTables, w: &WeightDistribution, p: BoundParams) -> Result<BoundReport> {
    check_weights(loss, w)?;
    let kl = kl_divergence(&w.rho, &w.pi)?;
    let expected = expected_gibbs(loss, &w.rho);
    let raw = lambda_form(BoundKind::FirstOrder, expected, kl, w.lambda, p);
    Ok(BoundReport::new(BoundKind::FirstOrder, raw, w.lambda, kl, expected, p))
}

/// Majority-vote error bound for `m` voters with independent errors, each of
/// rate at most `p_max < 1/2`: `exp(−2((m+1)/2 − m·p_max)² / m)`.
pub fn hoeffding_mv_bound(m: usize, p_max: f64) -> Result<f64> {
    if !(p_max < 0.5) || p_max < 0.0 {
        return Err(Error::NotBetterThanChance(p_max));
    }
    if m == 0 {
        return Err(Error::EmptySample);
    }
    let m = m as f64;
    let eps = (m + 1.0) / 2.0 - m * p_max;
    Ok((-2.0 * eps * eps / m).exp())
}
