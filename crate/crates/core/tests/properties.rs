use ensemble_pac::bounds::{first_order_bound_value, tandem_bound_value};
use ensemble_pac::data::Violation;
use ensemble_pac::optimize::{first_order_rho_gradient, optimal_lambda_first_order};
use ensemble_pac::prelude::*;
use ensemble_pac::Error;
use proptest::prelude::*;

fn normalized(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|r| r / s).collect()
}

/// Random ensemble: probabilities or hard labels, partial masks, random prior.
fn ensemble_strategy() -> impl Strategy<Value = Ensemble> {
    (1usize..5, 1usize..20, 2usize..4, any::<bool>(), any::<bool>()).prop_flat_map(|(m, n, k, hard, flat_prior)| {
        (
            prop::collection::vec(prop::collection::vec(0.01f64..1.0, n * k), m),
            prop::collection::vec(0..k, n),
            prop::collection::vec(prop::collection::vec(any::<bool>(), n), m),
            prop::collection::vec(0.1f64..1.0, m),
        )
            .prop_map(move |(scores, labels, mut masks, prior)| {
                let members = scores
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let rows: Vec<f64> = s.chunks(k).flat_map(normalized).collect();
                        if hard {
                            let classes = rows.chunks(k).map(ensemble_pac::data::argmax).collect();
                            Member::hard(format!("m{i}"), classes)
                        } else {
                            Member {
                                run_id: Some(format!("run{}", i % 2)),
                                ..Member::probabilities(format!("m{i}"), rows)
                            }
                        }
                    })
                    .collect();
                for mask in &mut masks {
                    mask[0] = true;
                }
                let prior = if flat_prior { vec![1.0 / m as f64; m] } else { normalized(&prior) };
                let set = PredictionSet::new(k, members).unwrap();
                Ensemble::with_mask(set, LabelVector::new(labels), OverlapMask::new(masks), prior).unwrap()
            })
    })
}

/// Error rows and masks where every pair of members shares example 0.
fn errors_strategy() -> impl Strategy<Value = (Vec<Vec<bool>>, Vec<Vec<bool>>)> {
    (1usize..7, 1usize..200).prop_flat_map(|(m, n)| {
        (
            prop::collection::vec(prop::collection::vec(any::<bool>(), n), m),
            prop::collection::vec(prop::collection::vec(any::<bool>(), n), m),
        )
            .prop_map(|(err, mut mask)| {
                for row in &mut mask {
                    row[0] = true;
                }
                (err, mask)
            })
    })
}

fn naive_tandem(err: &[Vec<bool>], mask: &[Vec<bool>], i: usize, j: usize) -> f64 {
    let n = err[0].len();
    let shared: Vec<usize> = (0..n).filter(|&t| mask[i][t] && mask[j][t]).collect();
    let both = shared.iter().filter(|&&t| err[i][t] && err[j][t]).count();
    both as f64 / shared.len() as f64
}

proptest! {
    #[test]
    fn manifest_round_trip_is_exact(ensemble in ensemble_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(dir.path(), &ensemble).unwrap();
        prop_assert_eq!(load_manifest(&path).unwrap(), ensemble);
    }

    #[test]
    fn packed_tandem_matches_naive_counts((err, mask) in errors_strategy()) {
        let m = err.len();
        let ids: Vec<String> = (0..m).map(|i| format!("m{i}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let indicators = ensemble_pac::loss::ErrorIndicators::from_rows(&err);
        let tables = tandem_tables(&indicators, &OverlapMask::new(mask.clone()), &id_refs).unwrap();
        for i in 0..m {
            for j in 0..m {
                prop_assert_eq!(tables.tandem_matrix[i][j], naive_tandem(&err, &mask, i, j));
            }
            prop_assert_eq!(tables.gibbs_losses[i], naive_tandem(&err, &mask, i, i));
        }
        let n_min = mask.iter().map(|r| r.iter().filter(|&&b| b).count()).min().unwrap();
        prop_assert_eq!(tables.n_min, n_min);
    }

    #[test]
    fn shared_mask_tables_are_symmetric_and_within_frechet_limits(
        (err, _) in errors_strategy(),
        raw in prop::collection::vec(0.01f64..1.0, 7),
    ) {
        let m = err.len();
        let n = err[0].len();
        let indicators = ensemble_pac::loss::ErrorIndicators::from_rows(&err);
        let ids: Vec<String> = (0..m).map(|i| format!("m{i}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let t = tandem_tables(&indicators, &OverlapMask::full(m, n), &id_refs).unwrap();
        for i in 0..m {
            prop_assert_eq!(t.tandem_matrix[i][i], t.gibbs_losses[i]);
            for j in 0..m {
                let (a, b) = (t.gibbs_losses[i], t.gibbs_losses[j]);
                let v = t.tandem_matrix[i][j];
                prop_assert_eq!(v, t.tandem_matrix[j][i]);
                prop_assert!(v <= a.min(b) + 1e-15);
                prop_assert!(v >= (a + b - 1.0).max(0.0) - 1e-15);
            }
        }
        // E_ρ²[L̂] as the mean over examples of the squared weighted error mass.
        let rho = normalized(&raw[..m]);
        let direct: f64 = (0..n)
            .map(|s| {
                let mass: f64 = (0..m).filter(|&i| err[i][s]).map(|i| rho[i]).sum();
                mass * mass
            })
            .sum::<f64>() / n as f64;
        prop_assert!((expected_tandem(&t, &rho) - direct).abs() <= 1e-15);
    }

    #[test]
    fn majority_vote_ignores_weight_scale_and_member_order(
        votes in prop::collection::vec(0usize..4, 1..9),
        numerators in prop::collection::vec(1u32..64, 9),
        shift in 0usize..9,
        scale_pow in -4i32..5,
    ) {
        let m = votes.len();
        let rho: Vec<f64> = numerators[..m].iter().map(|&k| k as f64 / 64.0).collect();
        let set = |order: &[usize]| {
            let members = order.iter().map(|&i| Member::hard(format!("m{i}"), vec![votes[i]])).collect();
            PredictionSet::new(4, members).unwrap()
        };
        let identity: Vec<usize> = (0..m).collect();
        let base = predict_mv(&set(&identity), &rho, 0);

        let scaled: Vec<f64> = rho.iter().map(|r| r * 2f64.powi(scale_pow)).collect();
        prop_assert_eq!(predict_mv(&set(&identity), &scaled, 0), base);

        let order: Vec<usize> = (0..m).map(|i| (i + shift) % m).collect();
        let permuted: Vec<f64> = order.iter().map(|&i| rho[i]).collect();
        prop_assert_eq!(predict_mv(&set(&order), &permuted, 0), base);
    }

    #[test]
    fn averaging_one_hot_rows_is_majority_vote(
        classes in prop::collection::vec(prop::collection::vec(0usize..3, 6), 1..6),
        raw in prop::collection::vec(0.01f64..1.0, 6),
    ) {
        let k = 3;
        let members: Vec<Member> = classes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let rows = c.iter().flat_map(|&y| (0..k).map(move |j| if j == y { 1.0 } else { 0.0 })).collect();
                Member::probabilities(format!("m{i}"), rows)
            })
            .collect();
        let set = PredictionSet::new(k, members).unwrap();
        let rho = normalized(&raw[..classes.len()]);
        prop_assert_eq!(
            predict_all(&set, &rho, Aggregation::Average).unwrap(),
            predict_all(&set, &rho, Aggregation::MajorityVote).unwrap()
        );
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_the_prior(
        raw_rho in prop::collection::vec(0.0f64..1.0, 2..8),
        raw_pi in prop::collection::vec(0.05f64..1.0, 8),
    ) {
        prop_assume!(raw_rho.iter().sum::<f64>() > 0.1);
        let rho = normalized(&raw_rho);
        let pi = normalized(&raw_pi[..rho.len()]);
        let kl = kl_divergence(&rho, &pi).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert_eq!(kl_divergence(&pi, &pi).unwrap(), 0.0);
    }

    #[test]
    fn bounds_grow_with_loss_and_kl_and_shrink_with_n(
        e in 0.0f64..0.4,
        de in 1e-4f64..0.1,
        kl in 0.0f64..3.0,
        dkl in 1e-3f64..1.0,
        n in 10usize..10_000,
        lambda in 0.01f64..1.99,
    ) {
        let p = BoundParams::new(0.05, n).unwrap();
        let bigger_n = BoundParams::new(0.05, n * 2).unwrap();
        for f in [tandem_bound_value, first_order_bound_value] {
            let v = f(e, kl, lambda, p).unwrap();
            prop_assert!(f(e + de, kl, lambda, p).unwrap() > v);
            prop_assert!(f(e, kl + dkl, lambda, p).unwrap() > v);
            prop_assert!(f(e, kl, lambda, bigger_n).unwrap() < v);
        }
    }

    #[test]
    fn first_order_gradient_matches_finite_differences(
        gibbs in prop::collection::vec(0.0f64..0.5, 2..8),
        raw in prop::collection::vec(0.05f64..1.0, 8),
        lambda in 0.05f64..1.95,
        n in 20usize..5000,
    ) {
        let m = gibbs.len();
        let mut matrix = vec![vec![0.0; m]; m];
        for i in 0..m {
            matrix[i][i] = gibbs[i];
        }
        let loss = LossTables::from_shared_matrix(matrix, n).unwrap();
        let rho = normalized(&raw[..m]);
        let pi = vec![1.0 / m as f64; m];
        let w = WeightDistribution::new(rho.clone(), pi.clone(), lambda).unwrap();
        let g = first_order_rho_gradient(&loss, &w, BoundParams::new(0.05, n).unwrap(), 1e-12).unwrap();
        let f = |r: &[f64]| -> f64 {
            let lin: f64 = r.iter().zip(&gibbs).map(|(a, b)| a * b).sum();
            let kl: f64 = r.iter().zip(&pi).map(|(a, b)| a * (a / b).ln()).sum();
            lin + kl / (lambda * n as f64)
        };
        let h = 1e-6;
        for i in 0..m {
            let mut up = rho.clone();
            let mut down = rho.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
        }
    }
}

#[test]
fn closed_form_lambdas_beat_a_grid() {
    let p = BoundParams::new(0.05, 500).unwrap();
    for &(e, kl) in &[(0.0, 0.0), (0.01, 0.5), (0.1, 0.0), (0.3, 2.0), (0.45, 0.1)] {
        let lt = optimal_lambda(e, kl, 500, 0.05);
        let lf = optimal_lambda_first_order(e, kl, 500, 0.05);
        let t_star = tandem_bound_value(e, kl, lt, p).unwrap();
        let f_star = first_order_bound_value(e, kl, lf, p).unwrap();
        for k in 1..=50 {
            let l = k as f64 / 25.5;
            assert!(t_star <= tandem_bound_value(e, kl, l, p).unwrap() * (1.0 + 1e-12));
            assert!(f_star <= first_order_bound_value(e, kl, l, p).unwrap() * (1.0 + 1e-12));
        }
    }
}

#[test]
fn short_prediction_file_is_a_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("labels.csv"), "0\n1\n1\n0\n").unwrap();
    std::fs::write(d.join("a.csv"), "0.9,0.1\n0.2,0.8\n0.3,0.7\n0.6,0.4\n").unwrap();
    std::fs::write(d.join("b.csv"), "0.9,0.1\n0.2,0.8\n0.3,0.7\n").unwrap();
    std::fs::write(
        d.join("manifest.json"),
        r#"{"num_classes": 2, "mode": "prob", "labels": "labels.csv", "members": [
            {"id": "a", "predictions": "a.csv"}, {"id": "b", "predictions": "b.csv"}]}"#,
    )
    .unwrap();
    let err = load_manifest(d.join("manifest.json")).unwrap_err();
    let Error::Invalid(violations) = &err else {
        panic!("unexpected error {err}");
    };
    assert!(matches!(violations.as_slice(), [Violation::PredictionLength { .. }]));
    let msg = err.to_string();
    assert!(msg.contains("dimension mismatch") && msg.contains('b'), "{msg}");
}

#[test]
fn missing_prior_is_uniform() {
    let spec = SyntheticSpec::independent(vec![0.2; 5], 30, 3);
    let ensemble = generate_ensemble(&spec, PredictionMode::Hard).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_manifest(dir.path(), &ensemble).unwrap();
    let text = std::fs::read_to_string(&path).unwrap().replace("\"prior\": \"uniform\",", "");
    assert!(!text.contains("prior"));
    std::fs::write(&path, text).unwrap();
    assert_eq!(load_manifest(&path).unwrap().prior, vec![0.2; 5]);
}

#[test]
fn generator_marginals_and_joint_errors() {
    let n = 100_000;
    let spec = SyntheticSpec {
        num_classes: 3,
        correlation: 0.1,
        ..SyntheticSpec::independent(vec![0.3, 0.2, 0.4], n, 12)
    };
    let (set, labels) = generate(&spec).unwrap();
    let err = error_indicators(&set, &labels);
    let rate = |i: usize| (0..n).filter(|&t| err.get(i, t)).count() as f64 / n as f64;
    for (i, &p) in spec.error_rates.iter().enumerate() {
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((rate(i) - p).abs() < 4.0 * sd, "member {i}: {} vs {p}", rate(i));
    }
    // P(both err) = c + (1 − c)·q_0·q_1 with q_i = (p_i − c)/(1 − c).
    let c = 0.1;
    let q = |p: f64| (p - c) / (1.0 - c);
    let joint = c + (1.0 - c) * q(0.3) * q(0.2);
    let observed = (0..n).filter(|&t| err.get(0, t) && err.get(1, t)).count() as f64 / n as f64;
    assert!((observed - joint).abs() < 4.0 * (joint * (1.0 - joint) / n as f64).sqrt());
    // Wrong predictions avoid the label and spread over the other classes.
    let wrong_low: usize = (0..n)
        .filter(|&t| err.get(0, t))
        .filter(|&t| set.predicted_class(0, t) == (labels[t] + 1) % 3)
        .count();
    let wrong = (0..n).filter(|&t| err.get(0, t)).count();
    assert!((wrong_low as f64 / wrong as f64 - 0.5).abs() < 0.02);
}

#[test]
fn independent_members_have_product_tandem_loss() {
    let n = 100_000;
    let spec = SyntheticSpec::independent(vec![0.3, 0.3], n, 21);
    let ensemble = generate_ensemble(&spec, PredictionMode::Hard).unwrap();
    let t = ensemble_pac::protocol::loss_tables(&ensemble).unwrap();
    let sd = (0.09f64 * 0.91 / n as f64).sqrt();
    assert!((t.tandem_matrix[0][1] - 0.09).abs() < 4.0 * sd, "{}", t.tandem_matrix[0][1]);
}

#[test]
fn duplicated_members_share_predictions() {
    let spec = SyntheticSpec {
        duplicate_groups: vec![vec![0, 2]],
        ..SyntheticSpec::independent(vec![0.2, 0.3, 0.2], 500, 5)
    };
    let (set, _) = generate(&spec).unwrap();
    assert!((0..500).all(|t| set.predicted_class(0, t) == set.predicted_class(2, t)));
    assert!((0..500).any(|t| set.predicted_class(0, t) != set.predicted_class(1, t)));
}

#[test]
fn generation_is_reproducible() {
    let spec = SyntheticSpec::independent(vec![0.2, 0.3], 300, 99);
    assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    let other = SyntheticSpec { seed: 100, ..spec.clone() };
    assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
}

#[test]
fn exact_enumeration_agrees_with_binomial_and_monte_carlo() {
    let spec = SyntheticSpec::independent(vec![0.3; 5], 1, 3);
    let uniform = vec![0.2; 5];
    let exact = ensemble_pac::sim::exact_mv_risk(&spec, &uniform).unwrap().unwrap();
    assert!((exact - exact_mv_error_binomial(5, 0.3)).abs() < 1e-14);

    let spec = SyntheticSpec {
        num_classes: 3,
        correlation: 0.05,
        ..SyntheticSpec::independent(vec![0.2, 0.3, 0.25, 0.35], 1, 4)
    };
    let rho = vec![0.4, 0.1, 0.3, 0.2];
    let exact = ensemble_pac::sim::exact_mv_risk(&spec, &rho).unwrap().unwrap();
    let mc = mc_mv_error(&spec, &rho, 400_000).unwrap();
    assert!((mc.estimate - exact).abs() < 4.0 * mc.std_error, "{} vs {exact}", mc.estimate);
}

#[test]
fn hoeffding_needs_better_than_chance_members() {
    assert!(hoeffding_mv_bound(3, 0.5).is_err());
    assert!(hoeffding_mv_bound(3, 0.7).is_err());
    assert!(hoeffding_mv_bound(0, 0.2).is_err());
}
