//! Weighted aggregation of member predictions.
//!
//! Both rules break ties towards the lowest class index.

use serde::{Deserialize, Serialize};

use crate::data::{argmax, LabelVector, PredictionMode, PredictionSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// `argmax_y Σ_i ρ_i 1[y = h_i(x)]`.
    #[serde(rename = "mv")]
    MajorityVote,
    /// `argmax_y Σ_i ρ_i p_i(y|x)`; probability mode only.
    #[serde(rename = "avg")]
    Average,
}

/// Weighted-average prediction for example `t`.
pub fn predict_avg(set: &PredictionSet, rho: &[f64], t: usize) -> Result<usize> {
    if set.mode() != Some(PredictionMode::Prob) {
        return Err(Error::HardModeAverage);
    }
    let mut mixture = vec![0.0; set.num_classes()];
    for (i, &w) in rho.iter().enumerate() {
        let row = set.row(i, t).expect("probability mode");
        for (acc, &p) in mixture.iter_mut().zip(row) {
            *acc += w * p;
        }
    }
    Ok(argmax(&mixture))
}

/// Weighted majority vote for example `t`.
pub fn predict_mv(set: &PredictionSet, rho: &[f64], t: usize) -> usize {
    let mut votes = vec![0.0; set.num_classes()];
    for (i, &w) in rho.iter().enumerate() {
        votes[set.predicted_class(i, t)] += w;
    }
    argmax(&votes)
}

pub fn predict(set: &PredictionSet, rho: &[f64], aggregation: Aggregation, t: usize) -> Result<usize> {
    match aggregation {
        Aggregation::MajorityVote => Ok(predict_mv(set, rho, t)),
        Aggregation::Average => predict_avg(set, rho, t),
    }
}

/// Aggregated predictions for every example.
pub fn predict_all(set: &PredictionSet, rho: &[f64], aggregation: Aggregation) -> Result<Vec<usize>> {
    (0..set.num_examples())
        .map(|t| predict(set, rho, aggregation, t))
        .collect()
}

/// Fraction of examples where the aggregated prediction equals the label.
pub fn evaluate(set: &PredictionSet, labels: &LabelVector, rho: &[f64], aggregation: Aggregation) -> Result<f64> {
    let preds = predict_all(set, rho, aggregation)?;
    let correct = preds
        .iter()
        .zip(labels.as_slice())
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / set.num_examples() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Member;

    fn prob_pair() -> PredictionSet {
        PredictionSet::new(
            2,
            vec![
                Member::probabilities("a", vec![0.9, 0.1]),
                Member::probabilities("b", vec![0.2, 0.8]),
            ],
        )
        .unwrap()
    }

    fn votes(classes: &[usize]) -> PredictionSet {
        let members = classes
            .iter()
            .enumerate()
            .map(|(i, &c)| Member::hard(format!("m{i}"), vec![c]))
            .collect();
        PredictionSet::new(2, members).unwrap()
    }

    #[test]
    fn average_rule() {
        let set = prob_pair();
        assert_eq!(predict_avg(&set, &[1.0, 0.0], 0).unwrap(), 0);
        assert_eq!(predict_avg(&set, &[0.0, 1.0], 0).unwrap(), 1);
        assert_eq!(predict_avg(&set, &[0.5, 0.5], 0).unwrap(), 0);
        assert_eq!(predict_avg(&set, &[0.25, 0.75], 0).unwrap(), 1);
    }

    #[test]
    fn average_needs_probabilities() {
        assert!(matches!(predict_avg(&votes(&[0]), &[1.0], 0), Err(Error::HardModeAverage)));
    }

    #[test]
    fn majority_vote_rule() {
        let third = 1.0 / 3.0;
        assert_eq!(predict_mv(&votes(&[0, 0, 1]), &[third; 3], 0), 0);
        assert_eq!(predict_mv(&votes(&[0, 1]), &[0.3, 0.7], 0), 1);
        assert_eq!(predict_mv(&votes(&[0, 1]), &[0.5, 0.5], 0), 0);
        assert_eq!(predict_mv(&votes(&[1, 0]), &[0.5, 0.5], 0), 0);
    }

    #[test]
    fn accuracy() {
        let labels = vec![0, 1, 1, 0];
        let perfect = PredictionSet::new(2, vec![Member::hard("a", labels.clone()), Member::hard("b", labels.clone())])
            .unwrap();
        let y = LabelVector::new(labels);
        assert_eq!(evaluate(&perfect, &y, &[0.5, 0.5], Aggregation::MajorityVote).unwrap(), 1.0);

        let one = PredictionSet::new(2, vec![Member::hard("a", vec![0, 0, 1, 1])]).unwrap();
        assert_eq!(evaluate(&one, &y, &[1.0], Aggregation::MajorityVote).unwrap(), 0.5);
    }
}
