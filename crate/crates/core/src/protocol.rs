//! End-to-end evaluation protocols: fitting weights on a hold-out set,
//! test-time cross-validation and ensemble subsampling.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{evaluate, Aggregation};
use crate::bounds::{first_order_bound, tandem_bound, BoundParams, BoundReport};
use crate::data::{check_simplex, uniform, Ensemble, PredictionMode, WeightDistribution};
use crate::error::{Error, Result};
use crate::loss::{error_indicators, expected_gibbs, expected_tandem, tandem_tables, LossTables};
use crate::optimize::{
    optimal_lambda, optimal_lambda_first_order, optimize_weights, IterationRecord, Objective, OptimizerConfig,
};

/// How the ensemble weights are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    Uniform,
    Optimize(Objective),
    Fixed(Vec<f64>),
}

/// Weights fitted on one hold-out set, certified by both bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub rho: Vec<f64>,
    pub tandem: BoundReport,
    pub first_order: BoundReport,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<IterationRecord>,
}

/// Loss tables of an ensemble on its own hold-out masks.
pub fn loss_tables(ensemble: &Ensemble) -> Result<LossTables> {
    let err = error_indicators(&ensemble.set, &ensemble.labels);
    tandem_tables(&err, &ensemble.mask, &ensemble.set.member_ids())
}

/// Both bounds at `rho`, each with its own closed-form `λ`.
pub fn certify(loss: &LossTables, rho: &[f64], pi: &[f64], p: BoundParams) -> Result<(BoundReport, BoundReport)> {
    let kl = crate::bounds::kl_divergence(rho, pi)?;
    let lambda_t = optimal_lambda(expected_tandem(loss, rho), kl, p.n, p.delta);
    let lambda_f = optimal_lambda_first_order(expected_gibbs(loss, rho), kl, p.n, p.delta);
    let tandem = tandem_bound(loss, &WeightDistribution::new(rho.to_vec(), pi.to_vec(), lambda_t)?, p)?;
    let first = first_order_bound(loss, &WeightDistribution::new(rho.to_vec(), pi.to_vec(), lambda_f)?, p)?;
    Ok((tandem, first))
}

/// Chooses weights on `ensemble` and evaluates both bounds there.
pub fn fit(ensemble: &Ensemble, weighting: &Weighting, delta: f64, cfg: &OptimizerConfig) -> Result<Fit> {
    let loss = loss_tables(ensemble)?;
    let p = BoundParams::for_tables(delta, &loss)?;
    let m = ensemble.num_members();
    let (rho, iterations, converged, trace) = match weighting {
        Weighting::Uniform => (uniform(m), 0, true, Vec::new()),
        Weighting::Fixed(rho) => {
            if rho.len() != m {
                return Err(Error::WeightLength {
                    expected: m,
                    found: rho.len(),
                });
            }
            check_simplex(rho)?;
            (rho.clone(), 0, true, Vec::new())
        }
        Weighting::Optimize(objective) => {
            let r = optimize_weights(&loss, &ensemble.prior, p, cfg, *objective)?;
            (r.weights.rho, r.iterations, r.converged, r.trace)
        }
    };
    let (mut tandem, mut first_order) = certify(&loss, &rho, &ensemble.prior, p)?;
    let points: Vec<_> = trace
        .iter()
        .map(|r| crate::bounds::TracePoint {
            iteration: r.iteration,
            lambda: r.lambda,
            objective: r.best_objective,
        })
        .collect();
    match weighting {
        Weighting::Optimize(Objective::Tandem) => tandem.trace = points,
        Weighting::Optimize(Objective::FirstOrder) => first_order.trace = points,
        _ => {}
    }
    Ok(Fit {
        rho,
        tandem,
        first_order,
        iterations,
        converged,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub mv: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg: Option<f64>,
}

/// Majority-vote accuracy, plus averaging accuracy in probability mode.
pub fn accuracies(ensemble: &Ensemble, rho: &[f64]) -> Result<Accuracies> {
    let mv = evaluate(&ensemble.set, &ensemble.labels, rho, Aggregation::MajorityVote)?;
    let avg = match ensemble.set.mode() {
        Some(PredictionMode::Prob) => Some(evaluate(&ensemble.set, &ensemble.labels, rho, Aggregation::Average)?),
        _ => None,
    };
    Ok(Accuracies { mv, avg })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// Examples the weights were fitted on.
    pub fit_examples: Vec<usize>,
    /// Examples the accuracies were measured on.
    pub eval_examples: Vec<usize>,
    pub fit: Fit,
    pub accuracy: Accuracies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtcvReport {
    pub seed: Option<u64>,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: Accuracies,
}

/// Random half split: a uniformly random permutation cut at `⌈n/2⌉`, so odd
/// `n` puts the extra example in the first fold. Folds are returned sorted.
pub fn half_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = n.div_ceil(2);
    let mut a = perm[..cut].to_vec();
    let mut b = perm[cut..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Test-time cross-validation over a seeded random half split.
pub fn ttcv_run(
    ensemble: &Ensemble,
    weighting: &Weighting,
    delta: f64,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<TtcvReport> {
    let n = ensemble.num_examples();
    if n < 2 {
        return Err(Error::TooFewExamples(n));
    }
    let (a, b) = half_split(n, seed);
    let mut report = ttcv_with_split(ensemble, &a, &b, weighting, delta, cfg)?;
    report.seed = Some(seed);
    Ok(report)
}

/// Test-time cross-validation over a given split: fit on `a` and evaluate on
/// `b`, then swap; accuracies are averaged over the two folds.
pub fn ttcv_with_split(
    ensemble: &Ensemble,
    a: &[usize],
    b: &[usize],
    weighting: &Weighting,
    delta: f64,
    cfg: &OptimizerConfig,
) -> Result<TtcvReport> {
    let fold = |fit_on: &[usize], eval_on: &[usize]| -> Result<FoldResult> {
        let fit = fit(&ensemble.select_examples(fit_on), weighting, delta, cfg)?;
        let accuracy = accuracies(&ensemble.select_examples(eval_on), &fit.rho)?;
        Ok(FoldResult {
            fit_examples: fit_on.to_vec(),
            eval_examples: eval_on.to_vec(),
            fit,
            accuracy,
        })
    };
    let folds = vec![fold(a, b)?, fold(b, a)?];
    let mean_accuracy = Accuracies {
        mv: (folds[0].accuracy.mv + folds[1].accuracy.mv) / 2.0,
        avg: folds[0].accuracy.avg.zip(folds[1].accuracy.avg).map(|(x, y)| (x + y) / 2.0),
    };
    Ok(TtcvReport {
        seed: None,
        folds,
        mean_accuracy,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    pub members: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Measure accuracy by test-time cross-validation instead of on the
    /// fitting data itself.
    pub ttcv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub members: Vec<String>,
    pub rho: Vec<f64>,
    pub accuracy: Accuracies,
    pub tandem_bound: f64,
    pub first_order_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleReport {
    pub pool_size: usize,
    pub members: usize,
    pub repeats: Vec<RepeatResult>,
    pub accuracy_mv: Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_avg: Option<Summary>,
    pub tandem_bound: Summary,
    pub first_order_bound: Summary,
    /// Standard deviations divide by the number of repeats.
    pub std_convention: String,
    /// Set when a single repeat makes every standard deviation zero.
    pub degenerate_std: bool,
}

/// Draws `repeats` member subsets without replacement (repeat `r` uses seed
/// `seed + r`), fits and evaluates each, and summarizes over repeats.
///
/// With `ttcv` every repeat uses the same data split, derived from `seed`.
pub fn subsample_protocol(
    ensemble: &Ensemble,
    sub: &SubsampleConfig,
    weighting: &Weighting,
    delta: f64,
    cfg: &OptimizerConfig,
) -> Result<SubsampleReport> {
    let pool = ensemble.num_members();
    if sub.members > pool || sub.members == 0 {
        return Err(Error::SubsetTooLarge {
            requested: sub.members,
            pool,
        });
    }
    if sub.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    if let Weighting::Fixed(_) = weighting {
        return Err(Error::Config("fixed weights cannot be applied to member subsets".into()));
    }
    let repeats: Vec<RepeatResult> = (0..sub.repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub.seed.wrapping_add(r as u64));
            let mut chosen = index::sample(&mut rng, pool, sub.members).into_vec();
            chosen.sort_unstable();
            let subset = ensemble.select_members(&chosen);
            let fit = fit(&subset, weighting, delta, cfg)?;
            let accuracy = if sub.ttcv {
                ttcv_run(&subset, weighting, delta, cfg, sub.seed)?.mean_accuracy
            } else {
                accuracies(&subset, &fit.rho)?
            };
            Ok(RepeatResult {
                repeat: r,
                members: subset.set.member_ids().iter().map(|s| s.to_string()).collect(),
                rho: fit.rho,
                accuracy,
                tandem_bound: fit.tandem.value,
                first_order_bound: fit.first_order.value,
            })
        })
        .collect::<Result<_>>()?;

    let collect = |f: &dyn Fn(&RepeatResult) -> f64| Summary::of(&repeats.iter().map(f).collect::<Vec<_>>());
    let accuracy_avg = if repeats.iter().all(|r| r.accuracy.avg.is_some()) {
        Some(collect(&|r| r.accuracy.avg.unwrap()))
    } else {
        None
    };
    Ok(SubsampleReport {
        pool_size: pool,
        members: sub.members,
        accuracy_mv: collect(&|r| r.accuracy.mv),
        accuracy_avg,
        tandem_bound: collect(&|r| r.tandem_bound),
        first_order_bound: collect(&|r| r.first_order_bound),
        degenerate_std: sub.repeats == 1,
        std_convention: "population".into(),
        repeats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabelVector, Member, PredictionSet};

    fn small() -> Ensemble {
        let labels = vec![0, 1, 1, 0, 1, 0, 0, 1];
        let set = PredictionSet::new(
            2,
            vec![
                Member::hard("a", vec![0, 1, 1, 0, 1, 0, 1, 1]),
                Member::hard("b", vec![0, 1, 0, 0, 1, 0, 0, 1]),
                Member::hard("c", vec![1, 1, 1, 0, 1, 1, 0, 1]),
            ],
        )
        .unwrap();
        Ensemble::new(set, LabelVector::new(labels)).unwrap()
    }

    #[test]
    fn half_split_is_deterministic_and_complete() {
        let (a, b) = half_split(7, 3);
        assert_eq!((a.len(), b.len()), (4, 3));
        assert_eq!(half_split(7, 3), (a.clone(), b.clone()));
        let mut all: Vec<_> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn ttcv_mean_is_fold_average() {
        let e = small();
        let r = ttcv_run(&e, &Weighting::Optimize(Objective::Tandem), 0.05, &OptimizerConfig::default(), 9)
            .unwrap();
        assert_eq!(r.mean_accuracy.mv, (r.folds[0].accuracy.mv + r.folds[1].accuracy.mv) / 2.0);
        assert_eq!(r.folds[0].fit_examples, r.folds[1].eval_examples);
    }

    #[test]
    fn ttcv_rejects_single_example() {
        let e = small().select_examples(&[0]);
        assert!(matches!(
            ttcv_run(&e, &Weighting::Uniform, 0.05, &OptimizerConfig::default(), 0),
            Err(Error::TooFewExamples(1))
        ));
    }

    #[test]
    fn summary_uses_population_std() {
        let s = Summary::of(&[0.9, 0.92]);
        assert!((s.mean - 0.91).abs() < 1e-15);
        assert!((s.std - 0.01).abs() < 1e-12);
        assert_eq!(Summary::of(&[0.5]).std, 0.0);
    }

    #[test]
    fn subsample_full_pool_has_zero_spread() {
        let sub = SubsampleConfig {
            members: 3,
            repeats: 4,
            seed: 1,
            ttcv: false,
        };
        let r = subsample_protocol(&small(), &sub, &Weighting::Optimize(Objective::Tandem), 0.05, &OptimizerConfig::default())
            .unwrap();
        assert_eq!(r.accuracy_mv.std, 0.0);
        assert_eq!(r.tandem_bound.std, 0.0);
        assert!(!r.degenerate_std);
    }

    #[test]
    fn subsample_rejects_oversized_subsets() {
        let sub = SubsampleConfig {
            members: 4,
            repeats: 1,
            seed: 0,
            ttcv: false,
        };
        assert!(matches!(
            subsample_protocol(&small(), &sub, &Weighting::Uniform, 0.05, &OptimizerConfig::default()),
            Err(Error::SubsetTooLarge { requested: 4, pool: 3 })
        ));
    }
}
