//! Zero-one and tandem losses.
//!
//! The tandem loss of a pair of members is the fraction of examples on which
//! both err. Each pair is estimated on the intersection of the two members'
//! hold-out sets, and the sample size entering the bounds is the smallest
//! single-member hold-out size.

use serde::{Deserialize, Serialize};

use crate::data::{LabelVector, OverlapMask, PredictionSet};
use crate::error::{Error, Result};

/// Bit-packed `M × n` matrix; bit `(i, t)` is set iff member `i` misclassifies
/// example `t`. Every entry is computed, masking happens in [`tandem_tables`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorIndicators {
    num_examples: usize,
    rows: Vec<Vec<u64>>,
}

impl ErrorIndicators {
    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let num_examples = rows.first().map_or(0, Vec::len);
        ErrorIndicators {
            num_examples,
            rows: rows.iter().map(|r| pack(r)).collect(),
        }
    }

    pub fn num_members(&self) -> usize {
        self.rows.len()
    }

    pub fn num_examples(&self) -> usize {
        self.num_examples
    }

    pub fn get(&self, member: usize, t: usize) -> bool {
        self.rows[member][t / 64] >> (t % 64) & 1 == 1
    }

    pub fn row(&self, member: usize) -> Vec<bool> {
        (0..self.num_examples).map(|t| self.get(member, t)).collect()
    }
}

fn pack(bits: &[bool]) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64)];
    for (t, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        words[t / 64] |= 1 << (t % 64);
    }
    words
}

/// Error indicators of every member against the labels.
pub fn error_indicators(set: &PredictionSet, labels: &LabelVector) -> ErrorIndicators {
    let n = set.num_examples();
    let rows: Vec<Vec<bool>> = (0..set.num_members())
        .map(|i| (0..n).map(|t| set.predicted_class(i, t) != labels[t]).collect())
        .collect();
    ErrorIndicators::from_rows(&rows)
}

/// Empirical first- and second-order losses of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTables {
    /// Zero-one loss of each member on its own hold-out set.
    pub gibbs_losses: Vec<f64>,
    /// Tandem loss of each pair on the pair's overlap.
    pub tandem_matrix: Vec<Vec<f64>>,
    pub pair_counts: Vec<Vec<usize>>,
    pub member_counts: Vec<usize>,
    /// Sample size used by the bounds, `min_i n_i`.
    pub n_min: usize,
}

impl LossTables {
    /// Tables for a single shared hold-out set of size `n`.
    ///
    /// The diagonal of `tandem_matrix` is taken as the member losses.
    pub fn from_shared_matrix(tandem_matrix: Vec<Vec<f64>>, n: usize) -> Result<Self> {
        let m = tandem_matrix.len();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        for (i, row) in tandem_matrix.iter().enumerate() {
            if row.len() != m {
                return Err(Error::WeightLength {
                    expected: m,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) || v != tandem_matrix[j][i] {
                    return Err(Error::NotOnSimplex(format!(
                        "tandem entry ({i}, {j}) = {v} is not a symmetric loss in [0, 1]"
                    )));
                }
            }
        }
        Ok(LossTables {
            gibbs_losses: (0..m).map(|i| tandem_matrix[i][i]).collect(),
            tandem_matrix,
            pair_counts: vec![vec![n; m]; m],
            member_counts: vec![n; m],
            n_min: n,
        })
    }

    pub fn num_members(&self) -> usize {
        self.gibbs_losses.len()
    }

    pub fn select_members(&self, indices: &[usize]) -> LossTables {
        let pick = |mat: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            indices
                .iter()
                .map(|&i| indices.iter().map(|&j| mat[i][j]).collect())
                .collect()
        };
        let member_counts: Vec<usize> = indices.iter().map(|&i| self.member_counts[i]).collect();
        LossTables {
            gibbs_losses: indices.iter().map(|&i| self.gibbs_losses[i]).collect(),
            tandem_matrix: pick(&self.tandem_matrix),
            pair_counts: indices
                .iter()
                .map(|&i| indices.iter().map(|&j| self.pair_counts[i][j]).collect())
                .collect(),
            n_min: member_counts.iter().copied().min().unwrap_or(0),
            member_counts,
        }
    }
}

fn count_and(a: &[u64], b: &[u64]) -> usize {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as usize).sum()
}

fn count_and3(a: &[u64], b: &[u64], c: &[u64], d: &[u64]) -> usize {
    a.iter()
        .zip(b)
        .zip(c.iter().zip(d))
        .map(|((w, x), (y, z))| (w & x & y & z).count_ones() as usize)
        .sum()
}

/// Member losses and the pairwise tandem-loss matrix over overlap sets.
///
/// Fails naming the first pair (in row-major order) without any shared
/// hold-out example. `ids` supplies member names for that error.
pub fn tandem_tables(err: &ErrorIndicators, mask: &OverlapMask, ids: &[&str]) -> Result<LossTables> {
    let m = err.num_members();
    let masks: Vec<Vec<u64>> = (0..m).map(|i| pack(mask.member(i))).collect();
    let name = |i: usize| ids.get(i).map_or_else(|| i.to_string(), |s| s.to_string());

    let mut tandem_matrix = vec![vec![0.0; m]; m];
    let mut pair_counts = vec![vec![0usize; m]; m];
    for i in 0..m {
        for j in i..m {
            let n_ij = count_and(&masks[i], &masks[j]);
            if n_ij == 0 {
                return Err(Error::EmptyOverlap {
                    first: name(i),
                    second: name(j),
                });
            }
            let joint = count_and3(&err.rows[i], &err.rows[j], &masks[i], &masks[j]);
            let v = joint as f64 / n_ij as f64;
            tandem_matrix[i][j] = v;
            tandem_matrix[j][i] = v;
            pair_counts[i][j] = n_ij;
            pair_counts[j][i] = n_ij;
        }
    }
    let member_counts: Vec<usize> = (0..m).map(|i| pair_counts[i][i]).collect();
    let gibbs_losses = (0..m).map(|i| tandem_matrix[i][i]).collect();
    Ok(LossTables {
        gibbs_losses,
        tandem_matrix,
        pair_counts,
        n_min: member_counts.iter().copied().min().unwrap_or(0),
        member_counts,
    })
}

/// `ρᵀ L̂ ρ`: expected tandem loss of two independent draws from `rho`.
pub fn expected_tandem(loss: &LossTables, rho: &[f64]) -> f64 {
    let mut total = 0.0;
    for (row, &ri) in loss.tandem_matrix.iter().zip(rho) {
        let inner: f64 = row.iter().zip(rho).map(|(l, rj)| l * rj).sum();
        total += ri * inner;
    }
    total
}

/// `Σ_i ρ_i L̂_i`: empirical risk of the Gibbs classifier.
pub fn expected_gibbs(loss: &LossTables, rho: &[f64]) -> f64 {
    loss.gibbs_losses.iter().zip(rho).map(|(l, r)| l * r).sum()
}
