//! Synthetic ensembles with controlled error rates and error correlation,
//! plus exact and Monte Carlo oracles for majority-vote risks.
//!
//! Each example is "globally hard" with probability `c`, in which case every
//! member errs. Otherwise member `i` errs independently with rate
//! `q_i = (p_i − c) / (1 − c)`, so its marginal error rate is
//! `c + (1 − c) q_i = p_i`. A wrong prediction is drawn uniformly from the
//! `K − 1` wrong classes and labels are uniform over the `K` classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::predict_mv;
use crate::bounds::hoeffding_mv_bound;
use crate::data::{argmax, Ensemble, LabelVector, Member, PredictionMode, PredictionSet};
use crate::error::{Error, Result};
use crate::optimize::{Objective, OptimizerConfig};
use crate::protocol::{fit, Summary, Weighting};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_members: usize,
    pub num_examples: usize,
    #[serde(default = "two")]
    pub num_classes: usize,
    /// Marginal error rate of every member.
    pub error_rates: Vec<f64>,
    /// Probability that an example is hard for every member.
    #[serde(default)]
    pub correlation: f64,
    /// Groups of members that share identical predictions. The first index
    /// of a group is its source; all members of a group need the same rate.
    #[serde(default)]
    pub duplicate_groups: Vec<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

fn two() -> usize {
    2
}

impl SyntheticSpec {
    /// Independent members (`c = 0`) with the given error rates.
    pub fn independent(error_rates: Vec<f64>, num_examples: usize, seed: u64) -> Self {
        SyntheticSpec {
            num_members: error_rates.len(),
            num_examples,
            num_classes: 2,
            error_rates,
            correlation: 0.0,
            duplicate_groups: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InfeasibleSpec(msg));
        if self.num_members == 0 || self.num_examples == 0 {
            return fail("need at least one member and one example".into());
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.error_rates.len() != self.num_members {
            return fail(format!(
                "{} error rates for {} members",
                self.error_rates.len(),
                self.num_members
            ));
        }
        let c = self.correlation;
        if !(0.0..=1.0).contains(&c) {
            return fail(format!("correlation {c} is outside [0, 1]"));
        }
        for (i, &p) in self.error_rates.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("error rate {p} of member {i} is outside [0, 1]"));
            }
            if p < c {
                return fail(format!("error rate {p} of member {i} is below the correlation {c}"));
            }
        }
        let mut seen = vec![false; self.num_members];
        for group in &self.duplicate_groups {
            for &i in group {
                if i >= self.num_members || seen[i] {
                    return fail(format!("duplicate group index {i} is out of range or repeated"));
                }
                seen[i] = true;
                if self.error_rates[i] != self.error_rates[group[0]] {
                    return fail(format!("members of duplicate group {group:?} need equal error rates"));
                }
            }
        }
        Ok(())
    }

    /// Source member of every member: itself, or the first member of its
    /// duplicate group.
    fn sources(&self) -> Vec<usize> {
        let mut source: Vec<usize> = (0..self.num_members).collect();
        for group in &self.duplicate_groups {
            if let Some(&lead) = group.iter().min() {
                for &i in group {
                    source[i] = lead;
                }
            }
        }
        source
    }

    fn independent_rate(&self, i: usize) -> f64 {
        let c = self.correlation;
        if c >= 1.0 {
            0.0
        } else {
            ((self.error_rates[i] - c) / (1.0 - c)).clamp(0.0, 1.0)
        }
    }
}

/// Draws examples from a validated spec.
struct Sampler {
    k: usize,
    c: f64,
    source: Vec<usize>,
    q: Vec<f64>,
}

impl Sampler {
    fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Sampler {
            k: spec.num_classes,
            c: spec.correlation,
            source: spec.sources(),
            q: (0..spec.num_members).map(|i| spec.independent_rate(i)).collect(),
        })
    }

    /// Fills `votes` with every member's prediction and returns the label.
    fn draw<R: Rng>(&self, rng: &mut R, votes: &mut [usize]) -> usize {
        let label = rng.gen_range(0..self.k);
        let hard = self.c > 0.0 && rng.gen::<f64>() < self.c;
        for i in 0..votes.len() {
            let s = self.source[i];
            if s != i {
                votes[i] = votes[s];
                continue;
            }
            let err = hard || (self.q[i] > 0.0 && rng.gen::<f64>() < self.q[i]);
            votes[i] = if err {
                let wrong = rng.gen_range(0..self.k - 1);
                if wrong >= label {
                    wrong + 1
                } else {
                    wrong
                }
            } else {
                label
            };
        }
        label
    }
}

/// Derives independent seeds for repetitions and chunks (SplitMix64).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws a prediction set and labels; probability rows are one-hot.
pub fn generate(spec: &SyntheticSpec) -> Result<(PredictionSet, LabelVector)> {
    generate_with_mode(spec, PredictionMode::Prob)
}

pub fn generate_with_mode(spec: &SyntheticSpec, mode: PredictionMode) -> Result<(PredictionSet, LabelVector)> {
    let sampler = Sampler::new(spec)?;
    let (m, n, k) = (spec.num_members, spec.num_examples, spec.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut votes = vec![0; m];
    let mut predictions = vec![Vec::with_capacity(n); m];
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(sampler.draw(&mut rng, &mut votes));
        for (col, &v) in predictions.iter_mut().zip(&votes) {
            col.push(v);
        }
    }
    let members = predictions
        .into_iter()
        .enumerate()
        .map(|(i, classes)| match mode {
            PredictionMode::Hard => Member::hard(format!("m{i}"), classes),
            PredictionMode::Prob => {
                let mut rows = vec![0.0; n * k];
                for (t, &c) in classes.iter().enumerate() {
                    rows[t * k + c] = 1.0;
                }
                Member::probabilities(format!("m{i}"), rows)
            }
        })
        .collect();
    Ok((PredictionSet::new(k, members)?, LabelVector::new(labels)))
}

/// Generated set wrapped as an ensemble with full masks and a uniform prior.
pub fn generate_ensemble(spec: &SyntheticSpec, mode: PredictionMode) -> Result<Ensemble> {
    let (set, labels) = generate_with_mode(spec, mode)?;
    Ensemble::new(set, labels)
}

/// `P(S ≥ ⌊m/2⌋ + 1)` for `S ~ Binomial(m, p)`: the probability that a
/// strict majority of `m` independent voters errs. Summed in the log domain.
pub fn exact_mv_error_binomial(m: usize, p: f64) -> f64 {
    let k_min = m / 2 + 1;
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    // ln C(m, k) built incrementally from ln C(m, 0) = 0.
    let mut ln_choose = 0.0;
    let mut terms = Vec::with_capacity(m + 1 - k_min);
    for k in 0..=m {
        if k >= k_min {
            terms.push(ln_choose + k as f64 * lp + (m - k) as f64 * lq);
        }
        if k < m {
            ln_choose += ((m - k) as f64).ln() - ((k + 1) as f64).ln();
        }
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()).exp().min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub trials: u64,
}

const MC_CHUNK: u64 = 1 << 16;

/// Monte Carlo estimate of the weighted-majority-vote error under the spec.
///
/// Trials run in fixed-size chunks, each with its own derived seed, so the
/// result does not depend on the number of threads.
pub fn mc_mv_error(spec: &SyntheticSpec, rho: &[f64], trials: u64) -> Result<McEstimate> {
    let sampler = Sampler::new(spec)?;
    if rho.len() != spec.num_members {
        return Err(Error::WeightLength {
            expected: spec.num_members,
            found: rho.len(),
        });
    }
    if trials == 0 {
        return Err(Error::EmptySample);
    }
    let chunks = trials.div_ceil(MC_CHUNK);
    let errors: u64 = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, chunk));
            let count = MC_CHUNK.min(trials - chunk * MC_CHUNK);
            let mut votes = vec![0; spec.num_members];
            let mut tally = vec![0.0; spec.num_classes];
            let mut errors = 0u64;
            for _ in 0..count {
                let label = sampler.draw(&mut rng, &mut votes);
                tally.iter_mut().for_each(|v| *v = 0.0);
                for (&v, &w) in votes.iter().zip(rho) {
                    tally[v] += w;
                }
                if argmax(&tally) != label {
                    errors += 1;
                }
            }
            errors
        })
        .sum();
    let estimate = errors as f64 / trials as f64;
    Ok(McEstimate {
        estimate,
        std_error: (estimate * (1.0 - estimate) / trials as f64).sqrt(),
        trials,
    })
}

/// Largest enumeration (in joint outcomes) [`exact_mv_risk`] will attempt.
pub const EXACT_ENUMERATION_LIMIT: usize = 4_000_000;

/// Exact weighted-majority-vote risk under the spec by enumerating all joint
/// outcomes of the distinct (non-duplicate) members; `None` when that
/// enumeration exceeds [`EXACT_ENUMERATION_LIMIT`].
pub fn exact_mv_risk(spec: &SyntheticSpec, rho: &[f64]) -> Result<Option<f64>> {
    spec.validate()?;
    if rho.len() != spec.num_members {
        return Err(Error::WeightLength {
            expected: spec.num_members,
            found: rho.len(),
        });
    }
    let k = spec.num_classes;
    let source = spec.sources();
    let leaders: Vec<usize> = (0..spec.num_members).filter(|&i| source[i] == i).collect();
    let weights: Vec<f64> = leaders
        .iter()
        .map(|&l| (0..spec.num_members).filter(|&i| source[i] == l).map(|i| rho[i]).sum())
        .collect();
    let cost = (k as f64).powi(leaders.len() as i32 + 1);
    if cost > EXACT_ENUMERATION_LIMIT as f64 {
        return Ok(None);
    }
    let q: Vec<f64> = leaders.iter().map(|&l| spec.independent_rate(l)).collect();
    let wrong_share = 1.0 / (k - 1) as f64;
    let c = spec.correlation;
    let outcomes = k.pow(leaders.len() as u32);
    let mut tally = vec![0.0; k];

    let mut risk = 0.0;
    for label in 0..k {
        let mut easy = 0.0;
        let mut hard = 0.0;
        // Outcome digit d of leader j: 0 is the correct class, d ≥ 1 the
        // d-th wrong class.
        for code in 0..outcomes {
            let mut rest = code;
            let mut prob_easy = 1.0;
            let mut all_wrong = true;
            tally.iter_mut().for_each(|v| *v = 0.0);
            for (j, &w) in weights.iter().enumerate() {
                let d = rest % k;
                rest /= k;
                let class = if d == 0 {
                    all_wrong = false;
                    prob_easy *= 1.0 - q[j];
                    label
                } else {
                    prob_easy *= q[j] * wrong_share;
                    let wrong = d - 1;
                    if wrong >= label {
                        wrong + 1
                    } else {
                        wrong
                    }
                };
                tally[class] += w;
            }
            if argmax(&tally) != label {
                easy += prob_easy;
                if all_wrong {
                    hard += wrong_share.powi(weights.len() as i32);
                }
            }
        }
        risk += (c * hard + (1.0 - c) * easy) / k as f64;
    }
    Ok(Some(risk))
}

/// True majority-vote risk: exact when enumerable, otherwise a Monte Carlo
/// estimate with `fallback_trials` draws from an independent seed.
pub fn true_mv_risk(spec: &SyntheticSpec, rho: &[f64], fallback_trials: u64) -> Result<f64> {
    match exact_mv_risk(spec, rho)? {
        Some(r) => Ok(r),
        None => {
            let independent = SyntheticSpec {
                seed: derive_seed(spec.seed, u64::MAX),
                ..spec.clone()
            };
            Ok(mc_mv_error(&independent, rho, fallback_trials)?.estimate)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub repetition: usize,
    pub bound: f64,
    pub true_risk: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub delta: f64,
    pub repetitions: usize,
    pub covered: usize,
    pub coverage: f64,
    pub bound: Summary,
    pub true_risk: Summary,
    pub records: Vec<CoverageRecord>,
}

/// Repeatedly draws a hold-out set of `spec.num_examples` examples, fits
/// tandem-optimal weights on it and checks the clipped tandem bound against
/// the true majority-vote risk of those weights.
pub fn bound_coverage_experiment(
    spec: &SyntheticSpec,
    delta: f64,
    repetitions: usize,
    cfg: &OptimizerConfig,
) -> Result<CoverageReport> {
    spec.validate()?;
    if repetitions == 0 {
        return Err(Error::EmptySample);
    }
    let records: Vec<CoverageRecord> = (0..repetitions)
        .into_par_iter()
        .map(|r| {
            let draw = SyntheticSpec {
                seed: derive_seed(spec.seed, r as u64),
                ..spec.clone()
            };
            let ensemble = generate_ensemble(&draw, PredictionMode::Hard)?;
            let fit = fit(&ensemble, &Weighting::Optimize(Objective::Tandem), delta, cfg)?;
            let true_risk = true_mv_risk(&draw, &fit.rho, 1_000_000)?;
            Ok(CoverageRecord {
                repetition: r,
                bound: fit.tandem.value,
                true_risk,
                covered: fit.tandem.value >= true_risk,
            })
        })
        .collect::<Result<_>>()?;
    let covered = records.iter().filter(|r| r.covered).count();
    Ok(CoverageReport {
        delta,
        repetitions,
        covered,
        coverage: covered as f64 / repetitions as f64,
        bound: Summary::of(&records.iter().map(|r| r.bound).collect::<Vec<_>>()),
        true_risk: Summary::of(&records.iter().map(|r| r.true_risk).collect::<Vec<_>>()),
        records,
    })
}

/// One row of a cancellation-of-errors sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub members: usize,
    pub error_rate: f64,
    /// `c + (1 − c)·P(strict majority of independent errors)`; the exact
    /// majority-vote error for two classes and odd `members`.
    pub exact: f64,
    /// Hoeffding bound, defined for independent members with rate below 1/2.
    pub hoeffding: Option<f64>,
    pub mc: f64,
    pub std_error: f64,
}

/// Majority-vote error of `m` identical uniformly weighted members for every
/// `m` in `members`, using the classes, correlation and seed of `base`.
pub fn cancellation_sweep(base: &SyntheticSpec, error_rate: f64, members: &[usize], trials: u64) -> Result<Vec<SweepRow>> {
    members
        .iter()
        .map(|&m| {
            let spec = SyntheticSpec {
                num_members: m,
                error_rates: vec![error_rate; m],
                duplicate_groups: Vec::new(),
                ..base.clone()
            };
            spec.validate()?;
            let c = spec.correlation;
            let exact = c + (1.0 - c) * exact_mv_error_binomial(m, spec.independent_rate(0));
            let hoeffding = if c == 0.0 && error_rate < 0.5 {
                Some(hoeffding_mv_bound(m, error_rate)?)
            } else {
                None
            };
            let mc = mc_mv_error(&spec, &vec![1.0 / m as f64; m], trials)?;
            Ok(SweepRow {
                members: m,
                error_rate,
                exact,
                hoeffding,
                mc: mc.estimate,
                std_error: mc.std_error,
            })
        })
        .collect()
}

/// Empirical weighted-majority-vote error on a labelled set.
pub fn empirical_mv_risk(set: &PredictionSet, labels: &LabelVector, rho: &[f64]) -> f64 {
    let n = set.num_examples();
    let wrong = (0..n).filter(|&t| predict_mv(set, rho, t) != labels[t]).count();
    wrong as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{error_indicators, tandem_tables};
    use crate::data::OverlapMask;

    #[test]
    fn error_free_members_copy_the_labels() {
        let spec = SyntheticSpec::independent(vec![0.0; 3], 50, 4);
        let (set, labels) = generate(&spec).unwrap();
        for i in 0..3 {
            for t in 0..50 {
                assert_eq!(set.predicted_class(i, t), labels[t]);
            }
        }
    }

    #[test]
    fn duplicate_group_members_are_identical() {
        let spec = SyntheticSpec {
            duplicate_groups: vec![vec![0, 1]],
            ..SyntheticSpec::independent(vec![0.3, 0.3, 0.2], 400, 8)
        };
        let (set, labels) = generate(&spec).unwrap();
        assert_eq!(set.members()[0].predictions, set.members()[1].predictions);
        let err = error_indicators(&set, &labels);
        let t = tandem_tables(&err, &OverlapMask::full(3, 400), &[]).unwrap();
        assert_eq!(t.tandem_matrix[0][1], t.tandem_matrix[0][0]);
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let spec = SyntheticSpec {
            correlation: 0.3,
            ..SyntheticSpec::independent(vec![0.2, 0.4], 10, 0)
        };
        assert!(matches!(generate(&spec), Err(Error::InfeasibleSpec(_))));
    }

    #[test]
    fn binomial_tail_examples() {
        assert!((exact_mv_error_binomial(1, 0.3) - 0.3).abs() < 1e-15);
        assert!((exact_mv_error_binomial(3, 0.3) - 0.216).abs() < 1e-15);
        assert!((exact_mv_error_binomial(3, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(exact_mv_error_binomial(5, 0.0), 0.0);
        let big = exact_mv_error_binomial(10_000, 0.45);
        assert!(big.is_finite() && big > 0.0 && big < 1e-10);
    }

    #[test]
    fn exact_risk_matches_binomial_for_identical_members() {
        for &m in &[1, 3, 5, 7] {
            let spec = SyntheticSpec::independent(vec![0.3; m], 1, 0);
            let r = exact_mv_risk(&spec, &vec![1.0 / m as f64; m]).unwrap().unwrap();
            assert!((r - exact_mv_error_binomial(m, 0.3)).abs() < 1e-14, "m = {m}");
        }
    }

    #[test]
    fn fully_correlated_spec_always_errs() {
        let spec = SyntheticSpec {
            correlation: 1.0,
            ..SyntheticSpec::independent(vec![1.0; 3], 1, 5)
        };
        let rho = vec![1.0 / 3.0; 3];
        assert_eq!(mc_mv_error(&spec, &rho, 10_000).unwrap().estimate, 1.0);
        assert!((exact_mv_risk(&spec, &rho).unwrap().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_risk_with_several_classes_agrees_with_monte_carlo() {
        let spec = SyntheticSpec {
            num_classes: 4,
            correlation: 0.1,
            ..SyntheticSpec::independent(vec![0.35, 0.4, 0.3], 1, 11)
        };
        let rho = [0.5, 0.2, 0.3];
        let exact = exact_mv_risk(&spec, &rho).unwrap().unwrap();
        let mc = mc_mv_error(&spec, &rho, 400_000).unwrap();
        assert!((mc.estimate - exact).abs() < 4.0 * mc.std_error, "{exact} vs {mc:?}");
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let spec = SyntheticSpec::independent(vec![0.2, 0.3, 0.4], 1, 99);
        let rho = [0.2, 0.3, 0.5];
        assert_eq!(mc_mv_error(&spec, &rho, 200_000).unwrap(), mc_mv_error(&spec, &rho, 200_000).unwrap());
    }
}
