//! SMO solver checked against the independent projected-gradient dual
//! oracle.

mod common;

use common::{feature_from, qp_dual_oracle};
use gazekit::classifier::{
    dual_objective, expand_alphas, kkt_max_violation, rbf_kernel, train_binary_svm_with,
    SmoOptions,
};
use gazekit::features::FeatureVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn q_matrix(features: &[FeatureVector], labels: &[f64], gamma: f64) -> Vec<Vec<f64>> {
    let n = features.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| labels[i] * labels[j] * rbf_kernel(&features[i], &features[j], gamma))
                .collect()
        })
        .collect()
}

#[test]
fn xor_alphas_match_the_oracle() {
    let features = vec![
        feature_from(&[0.0, 0.0]),
        feature_from(&[1.0, 1.0]),
        feature_from(&[0.0, 1.0]),
        feature_from(&[1.0, 0.0]),
    ];
    let labels = vec![1.0, 1.0, -1.0, -1.0];
    let c = 10.0;
    let gamma = 1.0;
    let svm = train_binary_svm_with(
        &features,
        &labels,
        c,
        gamma,
        &[1.0; 4],
        SmoOptions {
            tol: 1e-10,
            ..SmoOptions::default()
        },
    )
    .unwrap();
    let oracle = qp_dual_oracle(&q_matrix(&features, &labels, gamma), &[c; 4], &labels, 40_000);

    let alphas = expand_alphas(&svm, &labels, 4);
    for (a, o) in alphas.iter().zip(&oracle.alpha) {
        assert!((a - o).abs() < 1e-5, "alpha mismatch: {a} vs {o}");
    }
    for (x, y) in features.iter().zip(&labels) {
        assert_eq!(svm.decision(x).signum(), *y);
    }
}

#[test]
fn dual_objective_matches_oracle_on_separable_cloud() {
    // The spec's 20-point separable example.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..20 {
        let side = if i < 10 { -1.0 } else { 1.0 };
        features.push(feature_from(&[
            side * (1.0 + rng.random_range(0.0..0.5)),
            rng.random_range(-0.8..0.8),
        ]));
        labels.push(side);
    }
    let (c, gamma) = (5.0, 0.7);
    let svm = train_binary_svm_with(
        &features,
        &labels,
        c,
        gamma,
        &vec![1.0; 20],
        SmoOptions {
            tol: 1e-10,
            ..SmoOptions::default()
        },
    )
    .unwrap();
    let alphas = expand_alphas(&svm, &labels, 20);
    let smo_obj = dual_objective(&features, &labels, &alphas, gamma);
    let oracle = qp_dual_oracle(
        &q_matrix(&features, &labels, gamma),
        &vec![c; 20],
        &labels,
        60_000,
    );
    let rel = (smo_obj - oracle.objective).abs() / oracle.objective.abs().max(1.0);
    assert!(rel < 1e-6, "objective {smo_obj} vs oracle {}", oracle.objective);
}

#[test]
fn class_weighting_equals_duplication() {
    // Duplicating one class's samples m times at weight 1 must yield the
    // same decision function as weighting that class by m.
    let m = 3;
    let base_pos = [
        [0.6, 0.3],
        [0.9, -0.2],
    ];
    let base_neg = [
        [-0.7, 0.1],
        [-0.5, -0.4],
        [-0.9, 0.5],
    ];
    let tol = SmoOptions {
        tol: 1e-10,
        ..SmoOptions::default()
    };
    let (c, gamma) = (2.0, 0.8);

    // Weighted formulation: positives carry weight m.
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    for p in base_pos {
        features.push(feature_from(&p));
        labels.push(1.0);
        weights.push(m as f64);
    }
    for p in base_neg {
        features.push(feature_from(&p));
        labels.push(-1.0);
        weights.push(1.0);
    }
    let weighted = train_binary_svm_with(&features, &labels, c, gamma, &weights, tol).unwrap();

    // Duplicated formulation.
    let mut dup_features = Vec::new();
    let mut dup_labels = Vec::new();
    for p in base_pos {
        for _ in 0..m {
            dup_features.push(feature_from(&p));
            dup_labels.push(1.0);
        }
    }
    for p in base_neg {
        dup_features.push(feature_from(&p));
        dup_labels.push(-1.0);
    }
    let duplicated = train_binary_svm_with(
        &dup_features,
        &dup_labels,
        c,
        gamma,
        &vec![1.0; dup_features.len()],
        tol,
    )
    .unwrap();

    for probe in [
        feature_from(&[0.0, 0.0]),
        feature_from(&[0.4, 0.2]),
        feature_from(&[-0.6, -0.1]),
        feature_from(&[1.2, 0.8]),
    ] {
        let a = weighted.decision(&probe);
        let b = duplicated.decision(&probe);
        assert!((a - b).abs() < 1e-6, "decision mismatch: {a} vs {b}");
    }
}

#[test]
fn trained_machines_are_deterministic_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let features: Vec<FeatureVector> = (0..14)
        .map(|_| feature_from(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
        .collect();
    let labels: Vec<f64> = (0..14).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let weights = vec![1.0; 14];
    let a = train_binary_svm_with(&features, &labels, 3.0, 0.9, &weights, SmoOptions::default())
        .unwrap();
    let b = train_binary_svm_with(&features, &labels, 3.0, 0.9, &weights, SmoOptions::default())
        .unwrap();
    assert_eq!(
        serde_json::to_vec(&a).unwrap(),
        serde_json::to_vec(&b).unwrap()
    );
}

#[test]
fn default_tolerance_machines_satisfy_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for instance in 0..10 {
        let n = rng.random_range(8..=16);
        let dims = rng.random_range(2..=4);
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let coords: Vec<f64> = (0..dims).map(|_| rng.random_range(-1.5..1.5)).collect();
            features.push(feature_from(&coords));
            labels.push(if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        }
        if !labels.contains(&1.0) {
            labels[0] = 1.0;
        }
        if !labels.contains(&-1.0) {
            labels[1] = -1.0;
        }
        let c = [0.5, 2.0, 10.0][instance % 3];
        let gamma = rng.random_range(0.3..1.5);
        let weights: Vec<f64> = (0..n)
            .map(|_| [0.5, 1.0, 2.0][rng.random_range(0..3)])
            .collect();
        let svm = train_binary_svm_with(
            &features,
            &labels,
            c,
            gamma,
            &weights,
            SmoOptions::default(),
        )
        .unwrap();
        let boxes: Vec<f64> = weights.iter().map(|w| c * w).collect();
        let violation = kkt_max_violation(&svm, &features, &labels, &boxes);
        assert!(
            violation <= 1e-3,
            "instance {instance}: KKT violation {violation}"
        );
    }
}
