//! Bound minimization over the ensemble weights.
//!
//! For a fixed `ρ` both bounds are convex in `λ` with the closed-form
//! minimizer [`optimal_lambda`]. For a fixed `λ` the tandem bound is, up to a
//! positive factor, `f(ρ) = ρᵀL̂ρ + 2/(λn) · KL(ρ‖π)`. The optimizer
//! alternates an exact `λ` update with sign-based (iRprop⁻) steps on softmax
//! parameters `θ`, `ρ = softmax(θ)`, starting from uniform weights, and
//! returns the best iterate seen.

use serde::{Deserialize, Serialize};

use crate::bounds::{kl_unchecked, lambda_form, BoundKind, BoundParams, TracePoint};
use crate::data::{check_prior, check_simplex, uniform, WeightDistribution, LAMBDA_MAX, LAMBDA_MIN};
use crate::error::{Error, Result};
use crate::loss::{expected_gibbs, expected_tandem, LossTables};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Tandem,
    FirstOrder,
}

impl Objective {
    pub fn bound_kind(self) -> BoundKind {
        match self {
            Objective::Tandem => BoundKind::Tandem,
            Objective::FirstOrder => BoundKind::FirstOrder,
        }
    }

    fn expected_loss(self, loss: &LossTables, rho: &[f64]) -> f64 {
        match self {
            Objective::Tandem => expected_tandem(loss, rho),
            Objective::FirstOrder => expected_gibbs(loss, rho),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_outer_iters: usize,
    pub inner_grad_steps: usize,
    /// Absolute tolerance on the change of the bound between outer iterations.
    pub tolerance: f64,
    pub initial_step: f64,
    pub increase_factor: f64,
    pub decrease_factor: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Lower limit on every weight; keeps `ln(ρ_i/π_i)` finite.
    pub rho_floor: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_outer_iters: 200,
            inner_grad_steps: 1,
            tolerance: 1e-9,
            initial_step: 0.1,
            increase_factor: 1.2,
            decrease_factor: 0.5,
            min_step: 1e-8,
            max_step: 50.0,
            rho_floor: 1e-12,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_owned()));
        if !(0.0 < self.decrease_factor && self.decrease_factor < 1.0 && 1.0 < self.increase_factor) {
            return fail("need 0 < decrease_factor < 1 < increase_factor");
        }
        if !(self.tolerance > 0.0) {
            return fail("tolerance must be positive");
        }
        if !(0.0 < self.min_step && self.min_step <= self.initial_step && self.initial_step <= self.max_step) {
            return fail("need 0 < min_step <= initial_step <= max_step");
        }
        if !(self.rho_floor > 0.0 && self.rho_floor < 1.0) {
            return fail("rho_floor must lie in (0, 1)");
        }
        if self.inner_grad_steps == 0 {
            return fail("inner_grad_steps must be at least 1");
        }
        Ok(())
    }
}

/// Per-iteration record of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda: f64,
    /// Raw bound at the current iterate.
    pub objective: f64,
    /// Smallest raw bound seen so far.
    pub best_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub objective: Objective,
    pub weights: WeightDistribution,
    /// Raw bound at the returned weights (not clipped to 1).
    pub bound: f64,
    pub kl: f64,
    pub expected_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

impl OptimizationResult {
    pub fn bound_trace(&self) -> Vec<TracePoint> {
        self.trace
            .iter()
            .map(|r| TracePoint {
                iteration: r.iteration,
                lambda: r.lambda,
                objective: r.best_objective,
            })
            .collect()
    }
}

/// Minimizer over `λ` of `E/(1−λ/2) + C/(λ(1−λ/2)n)`, where `C` is the
/// numerator of the complexity term.
fn lambda_for_complexity(expected_loss: f64, complexity: f64, n: usize) -> f64 {
    let ratio = 2.0 * n as f64 * expected_loss / complexity;
    let lambda = 2.0 / ((ratio + 1.0).sqrt() + 1.0);
    lambda.clamp(LAMBDA_MIN, LAMBDA_MAX)
}

/// Closed-form optimal `λ` of the tandem bound for a fixed `ρ`:
/// `2 / (√(2n·E / (2KL + ln(2√n/δ)) + 1) + 1)`.
pub fn optimal_lambda(expected_loss: f64, kl: f64, n: usize, delta: f64) -> f64 {
    let log_term = (2.0 * (n as f64).sqrt() / delta).ln();
    lambda_for_complexity(expected_loss, 2.0 * kl + log_term, n)
}

/// Closed-form optimal `λ` of the first-order bound (KL coefficient 1).
pub fn optimal_lambda_first_order(expected_loss: f64, kl: f64, n: usize, delta: f64) -> f64 {
    let log_term = (2.0 * (n as f64).sqrt() / delta).ln();
    lambda_for_complexity(expected_loss, kl + log_term, n)
}

/// Optimal `λ` for `objective` at `rho`.
pub fn optimal_lambda_for(objective: Objective, expected_loss: f64, kl: f64, p: BoundParams) -> f64 {
    match objective {
        Objective::Tandem => optimal_lambda(expected_loss, kl, p.n, p.delta),
        Objective::FirstOrder => optimal_lambda_first_order(expected_loss, kl, p.n, p.delta),
    }
}

/// Bound of `objective` at `rho` with its own optimal `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub lambda: f64,
    pub kl: f64,
    pub expected_loss: f64,
    pub bound: f64,
}

/// Evaluates the raw bound at `rho` with the closed-form `λ`. Inputs are
/// assumed validated.
pub fn evaluate_at(objective: Objective, loss: &LossTables, rho: &[f64], pi: &[f64], p: BoundParams) -> Evaluation {
    let kl = kl_unchecked(rho, pi);
    let expected_loss = objective.expected_loss(loss, rho);
    let lambda = optimal_lambda_for(objective, expected_loss, kl, p);
    Evaluation {
        lambda,
        kl,
        expected_loss,
        bound: lambda_form(objective.bound_kind(), expected_loss, kl, lambda, p),
    }
}

/// Ambient gradient with `ln ρ_i` supplied by the caller.
fn ambient_gradient(
    objective: Objective,
    loss: &LossTables,
    rho: &[f64],
    log_rho: &[f64],
    pi: &[f64],
    lambda: f64,
    n: usize,
) -> Vec<f64> {
    match objective {
        Objective::Tandem => {
            let c = 2.0 / (lambda * n as f64);
            loss.tandem_matrix
                .iter()
                .zip(log_rho.iter().zip(pi))
                .map(|(row, (&lr, &p))| {
                    let lr_dot: f64 = row.iter().zip(rho).map(|(l, r)| l * r).sum();
                    2.0 * lr_dot + c * (1.0 + lr - p.ln())
                })
                .collect()
        }
        Objective::FirstOrder => {
            let c = 1.0 / (lambda * n as f64);
            loss.gibbs_losses
                .iter()
                .zip(log_rho.iter().zip(pi))
                .map(|(&l, (&lr, &p))| l + c * (1.0 + lr - p.ln()))
                .collect()
        }
    }
}

fn check_gradient_inputs(loss: &LossTables, w: &WeightDistribution, floor: f64) -> Result<()> {
    if w.rho.len() != loss.num_members() || w.pi.len() != loss.num_members() {
        return Err(Error::WeightLength {
            expected: loss.num_members(),
            found: w.rho.len(),
        });
    }
    check_simplex(&w.rho)?;
    check_prior(&w.pi)?;
    if !(w.lambda > 0.0 && w.lambda < 2.0) {
        return Err(Error::LambdaOutOfRange(w.lambda));
    }
    if let Some((index, &value)) = w.rho.iter().enumerate().find(|(_, &r)| r < floor) {
        return Err(Error::BelowFloor { index, value, floor });
    }
    Ok(())
}

/// Gradient of `ρᵀL̂ρ + 2/(λn)·KL(ρ‖π)` with respect to `ρ`:
/// `2 Σ_j ρ_j L̂_ij + 2/(λn)·(1 + ln(ρ_i/π_i))`.
///
/// Every `ρ_i` must be at least `floor`.
pub fn tandem_rho_gradient(loss: &LossTables, w: &WeightDistribution, p: BoundParams, floor: f64) -> Result<Vec<f64>> {
    check_gradient_inputs(loss, w, floor)?;
    let log_rho: Vec<f64> = w.rho.iter().map(|r| r.ln()).collect();
    Ok(ambient_gradient(Objective::Tandem, loss, &w.rho, &log_rho, &w.pi, w.lambda, p.n))
}

/// Gradient of `E_ρ[L̂] + 1/(λn)·KL(ρ‖π)` with respect to `ρ`.
pub fn first_order_rho_gradient(
    loss: &LossTables,
    w: &WeightDistribution,
    p: BoundParams,
    floor: f64,
) -> Result<Vec<f64>> {
    check_gradient_inputs(loss, w, floor)?;
    let log_rho: Vec<f64> = w.rho.iter().map(|r| r.ln()).collect();
    Ok(ambient_gradient(Objective::FirstOrder, loss, &w.rho, &log_rho, &w.pi, w.lambda, p.n))
}

/// `softmax(θ)` and `log softmax(θ)`.
pub fn softmax(theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = theta.iter().map(|t| t - max).collect();
    let exps: Vec<f64> = shifted.iter().map(|s| s.exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_sum = sum.ln();
    (
        exps.iter().map(|e| e / sum).collect(),
        shifted.iter().map(|s| s - log_sum).collect(),
    )
}

/// Pulls a gradient with respect to `ρ` back through `ρ = softmax(θ)`:
/// `∂/∂θ_j = ρ_j (g_j − Σ_k ρ_k g_k)`.
pub fn softmax_pullback(rho: &[f64], grad: &[f64]) -> Vec<f64> {
    let mean: f64 = rho.iter().zip(grad).map(|(r, g)| r * g).sum();
    rho.iter().zip(grad).map(|(r, g)| r * (g - mean)).collect()
}

/// iRprop⁻: per-coordinate step sizes adapted by gradient-sign agreement,
/// without weight backtracking.
#[derive(Debug, Clone)]
pub struct Rprop {
    steps: Vec<f64>,
    prev_grad: Vec<f64>,
    increase: f64,
    decrease: f64,
    min_step: f64,
    max_step: f64,
}

impl Rprop {
    pub fn new(dim: usize, cfg: &OptimizerConfig) -> Self {
        Rprop {
            steps: vec![cfg.initial_step; dim],
            prev_grad: vec![0.0; dim],
            increase: cfg.increase_factor,
            decrease: cfg.decrease_factor,
            min_step: cfg.min_step,
            max_step: cfg.max_step,
        }
    }

    /// Moves `params` against the sign of `grad`; returns whether any
    /// coordinate moved.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> bool {
        let mut moved = false;
        for (k, &g) in grad.iter().enumerate() {
            let mut g = g;
            let agreement = g * self.prev_grad[k];
            if agreement > 0.0 {
                self.steps[k] = (self.steps[k] * self.increase).min(self.max_step);
            } else if agreement < 0.0 {
                self.steps[k] = (self.steps[k] * self.decrease).max(self.min_step);
                g = 0.0;
            }
            if g != 0.0 {
                params[k] -= g.signum() * self.steps[k];
                moved = true;
            }
            self.prev_grad[k] = g;
        }
        moved
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }
}

/// Keeps every `softmax(θ)_i ≥ floor` by bounding `θ_i` from below relative
/// to the largest entry.
fn clamp_theta(theta: &mut [f64], floor: f64) {
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lowest = max + (floor * theta.len() as f64).ln();
    for t in theta.iter_mut() {
        if *t < lowest {
            *t = lowest;
        }
    }
}

/// Minimizes the chosen bound over `ρ` and `λ`.
///
/// The first iterate is the uniform weighting with its optimal `λ`, and the
/// best iterate is returned, so the result is never worse than uniform.
pub fn optimize_weights(
    loss: &LossTables,
    pi: &[f64],
    p: BoundParams,
    cfg: &OptimizerConfig,
    objective: Objective,
) -> Result<OptimizationResult> {
    cfg.validate()?;
    let m = loss.num_members();
    if pi.len() != m {
        return Err(Error::WeightLength {
            expected: m,
            found: pi.len(),
        });
    }
    check_prior(pi)?;

    let mut theta = vec![0.0; m];
    let mut rho = uniform(m);
    let mut log_rho = vec![-(m as f64).ln(); m];
    let first = evaluate_at(objective, loss, &rho, pi, p);

    let mut best_rho = rho.clone();
    let mut best = first;
    let mut trace = vec![IterationRecord {
        iteration: 0,
        lambda: first.lambda,
        objective: first.bound,
        best_objective: first.bound,
    }];

    let mut converged = m == 1;
    let mut iterations = 0;
    let mut current = first;
    let mut quiet = 0;
    let mut rprop = Rprop::new(m, cfg);

    while !converged && iterations < cfg.max_outer_iters {
        iterations += 1;
        for _ in 0..cfg.inner_grad_steps {
            let grad = ambient_gradient(objective, loss, &rho, &log_rho, pi, current.lambda, p.n);
            let grad_theta = softmax_pullback(&rho, &grad);
            rprop.step(&mut theta, &grad_theta);
            clamp_theta(&mut theta, cfg.rho_floor);
            (rho, log_rho) = softmax(&theta);
        }

        let next = evaluate_at(objective, loss, &rho, pi, p);
        if next.bound < best.bound {
            best = next;
            best_rho.clone_from(&rho);
        }
        trace.push(IterationRecord {
            iteration: iterations,
            lambda: next.lambda,
            objective: next.bound,
            best_objective: best.bound,
        });

        // Two quiet iterations in a row: a single one can be a sign flip
        // where iRprop⁻ holds every coordinate still.
        if (next.bound - current.bound).abs() < cfg.tolerance {
            quiet += 1;
        } else {
            quiet = 0;
        }
        converged = quiet >= 2 || rprop.steps().iter().all(|&s| s <= cfg.min_step);
        current = next;
    }

    Ok(OptimizationResult {
        objective,
        weights: WeightDistribution {
            rho: best_rho,
            pi: pi.to_vec(),
            lambda: best.lambda,
        },
        bound: best.bound,
        kl: best.kl,
        expected_loss: best.expected_loss,
        iterations,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::tandem_bound;

    fn matrix_2() -> LossTables {
        LossTables::from_shared_matrix(vec![vec![0.2, 0.05], vec![0.05, 0.3]], 100).unwrap()
    }

    #[test]
    fn lambda_closed_form_examples() {
        assert_eq!(optimal_lambda(0.0, 0.0, 1000, 0.05), 1.0);
        assert_eq!(optimal_lambda(0.0, 3.0, 10, 0.2), 1.0);
        let log_term = (2.0 * 1000f64.sqrt() / 0.05).ln();
        let expected = 2.0 / ((80.0 / log_term + 1.0f64).sqrt() + 1.0);
        assert_eq!(optimal_lambda(0.04, 0.0, 1000, 0.05), expected);
        assert!((expected - 0.4451495).abs() < 1e-7);
        assert!(optimal_lambda(1e6, 0.0, 1000, 0.05) < 1e-2);
    }

    #[test]
    fn gradient_at_uniform_prior_drops_log_term() {
        let w = WeightDistribution::uniform(2, 1.0).unwrap();
        let p = BoundParams::new(0.05, 100).unwrap();
        let g = tandem_rho_gradient(&matrix_2(), &w, p, 1e-12).unwrap();
        assert!((g[0] - 0.27).abs() < 1e-15);
        assert!((g[1] - 0.37).abs() < 1e-15);
    }

    #[test]
    fn gradient_rejects_boundary_weights() {
        let w = WeightDistribution::new(vec![1.0, 0.0], vec![0.5, 0.5], 1.0).unwrap();
        let p = BoundParams::new(0.05, 100).unwrap();
        let e = tandem_rho_gradient(&matrix_2(), &w, p, 1e-12).unwrap_err();
        assert!(matches!(e, Error::BelowFloor { index: 1, .. }));
    }

    #[test]
    fn rprop_adapts_steps_by_sign() {
        let cfg = OptimizerConfig::default();
        let mut r = Rprop::new(2, &cfg);
        let mut x = [0.0, 0.0];
        r.step(&mut x, &[1.0, -1.0]);
        assert_eq!(x, [-0.1, 0.1]);
        r.step(&mut x, &[1.0, 1.0]);
        assert!((r.steps()[0] - 0.12).abs() < 1e-15);
        assert!((r.steps()[1] - 0.05).abs() < 1e-15);
        // the flipped coordinate holds still for one step
        assert!((x[0] + 0.22).abs() < 1e-15);
        assert_eq!(x[1], 0.1);
    }

    #[test]
    fn single_member_needs_no_iterations() {
        let loss = LossTables::from_shared_matrix(vec![vec![0.1]], 200).unwrap();
        let p = BoundParams::new(0.05, 200).unwrap();
        let r = optimize_weights(&loss, &[1.0], p, &OptimizerConfig::default(), Objective::Tandem).unwrap();
        assert_eq!(r.weights.rho, vec![1.0]);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.weights.lambda, optimal_lambda(0.1, 0.0, 200, 0.05));
    }

    #[test]
    fn result_matches_public_bound_and_never_loses_to_uniform() {
        let loss = LossTables::from_shared_matrix(
            vec![vec![0.2, 0.15, 0.02], vec![0.15, 0.22, 0.05], vec![0.02, 0.05, 0.3]],
            500,
        )
        .unwrap();
        let p = BoundParams::new(0.05, 500).unwrap();
        let pi = uniform(3);
        let r = optimize_weights(&loss, &pi, p, &OptimizerConfig::default(), Objective::Tandem).unwrap();
        let report = tandem_bound(&loss, &r.weights, p).unwrap();
        assert_eq!(report.raw_value, r.bound);
        assert!(r.bound <= r.trace[0].objective);
        for pair in r.trace.windows(2) {
            assert!(pair[1].best_objective <= pair[0].best_objective);
        }
    }

    #[test]
    fn config_validation() {
        let bad = OptimizerConfig {
            decrease_factor: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(OptimizerConfig::default().validate().is_ok());
    }
}
