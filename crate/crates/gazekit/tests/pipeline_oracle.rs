//! End-to-end pipeline properties driven by the synthetic-scene oracle.

use gazekit::augment::{augment_regressor_set, AugmentPlan};
use gazekit::classifier::{train_svc, SmoOptions};
use gazekit::dataset::{annotate_gaze, split_by_subject, GazeClass, KeypointFrame, Keypoint};
use gazekit::features::{build_feature, LabeledFeature, RegressionSample};
use gazekit::pipeline::{
    evaluate_split, run_batch, EvalOptions, FrameRecord, ReconstructionFlag,
};
use gazekit::regressor::{mean_predictor_rmse, train, CguRegressor, TrainConfig};
use gazekit::synthgen::{generate_dataset, SceneConfig};

fn labeled(frames: &[&KeypointFrame]) -> Vec<LabeledFeature> {
    frames
        .iter()
        .map(|f| LabeledFeature {
            feature: build_feature(f).unwrap(),
            label: f.label.unwrap(),
        })
        .collect()
}

fn regression_samples(frames: &[&KeypointFrame], depth: f64) -> Vec<RegressionSample> {
    frames
        .iter()
        .filter(|f| f.label == Some(GazeClass::Workspace))
        .map(|f| {
            let d = f.centroid_depth.unwrap_or(depth);
            let ann = annotate_gaze(f, f.target_ccs.unwrap(), d).unwrap();
            RegressionSample {
                feature: build_feature(f).unwrap(),
                gaze2d: ann.gaze2d,
            }
        })
        .collect()
}

/// Ground-truth-passthrough regressor isolates the geometry: RMSE must be
/// zero and the reconstructed versor exact.
#[test]
fn oracle_regressor_gives_zero_rmse_and_exact_versors() {
    let cfg = SceneConfig {
        samples_per_class: [60, 60, 60, 120],
        num_subjects: 8,
        pixel_noise_std: 0.5,
        seed: 912,
        ..SceneConfig::default()
    };
    let frames = generate_dataset(&cfg).unwrap();
    let plan = split_by_subject(&frames, 1, (3, 1), 4).unwrap();
    let (train_frames, test_frames) = plan.splits[0].partition(&frames);

    let svc = train_svc(
        &labeled(&train_frames),
        10.0,
        1.0,
        SmoOptions::default(),
    )
    .unwrap();
    // The regressor is bypassed by the oracle flag; an untrained net works.
    let net = CguRegressor::new(0);
    let owned: Vec<KeypointFrame> = test_frames.into_iter().cloned().collect();
    let metrics = evaluate_split(
        &owned,
        &svc,
        &net,
        1.0,
        EvalOptions {
            oracle_regressor: true,
            ..EvalOptions::default()
        },
    )
    .unwrap();
    let rmse = metrics.gaze_rmse_2d.expect("workspace frames present");
    assert!(rmse < 1e-9, "oracle RMSE {rmse}");
    let angle = metrics.angular_error_mean_deg.unwrap();
    assert!(angle < 1e-6, "oracle angular error {angle}");
}

/// The spec's capacity example: a 2000-frame synthetic workspace set
/// trained at the default recipe beats a third of the mean-predictor RMSE.
#[test]
fn regressor_beats_a_third_of_the_mean_predictor_on_2000_frames() {
    let cfg = SceneConfig {
        samples_per_class: [0, 0, 0, 2000],
        seed: 777,
        ..SceneConfig::default()
    };
    let frames = generate_dataset(&cfg).unwrap();
    let plan = split_by_subject(&frames, 1, (19, 5), 7).unwrap();
    let (train_frames, test_frames) = plan.splits[0].partition(&frames);
    let train_samples =
        augment_regressor_set(&regression_samples(&train_frames, 1.0), &AugmentPlan::default());
    let (net, _) = train(&train_samples, &TrainConfig::default()).unwrap();

    let test_samples = regression_samples(&test_frames, 1.0);
    let mut sq = 0.0;
    for s in &test_samples {
        let out = net.predict(&s.feature);
        sq += (out.gaze2d.x - s.gaze2d.x).powi(2) + (out.gaze2d.y - s.gaze2d.y).powi(2);
    }
    let rmse = (sq / (2.0 * test_samples.len() as f64)).sqrt();
    let baseline = mean_predictor_rmse(&test_samples);
    assert!(
        rmse <= baseline / 3.0,
        "rmse {rmse} vs third of baseline {}",
        baseline / 3.0
    );
}

/// Gating exactness and failure records over a mixed batch.
#[test]
fn batch_outputs_gate_gaze_fields_and_keep_failures_inline() {
    let cfg = SceneConfig {
        samples_per_class: [40, 40, 40, 40],
        num_subjects: 6,
        pixel_noise_std: 0.5,
        seed: 33,
        ..SceneConfig::default()
    };
    let mut frames = generate_dataset(&cfg).unwrap();
    let plan = split_by_subject(&frames, 1, (2, 1), 4).unwrap();
    let (train_frames, _) = plan.splits[0].partition(&frames);
    let svc = train_svc(&labeled(&train_frames), 10.0, 1.0, SmoOptions::default()).unwrap();
    let ws = regression_samples(&train_frames, 1.0);
    let (net, _) = train(
        &ws,
        &TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        },
    )
    .unwrap();

    // Break one frame completely: all confidences zero.
    for kp in &mut frames[7].keypoints {
        *kp = Keypoint {
            name: kp.name.clone(),
            x: 0.0,
            y: 0.0,
            k: 0.0,
        };
    }
    let records = run_batch(&frames, &svc, &net, 1.0);
    assert_eq!(records.len(), frames.len());
    let mut failures = 0;
    for (record, frame) in records.iter().zip(&frames) {
        match record {
            FrameRecord::Ok(result) => {
                assert_eq!(result.frame_id, frame.frame_id);
                let forwarded = result.predicted_class == GazeClass::Workspace;
                assert_eq!(result.gaze2d.is_some(), forwarded);
                assert_eq!(result.gaze3d.is_some(), forwarded);
                assert_eq!(result.sigma.is_some(), forwarded);
                if forwarded {
                    assert!((result.gaze3d.unwrap().norm() - 1.0).abs() < 1e-9);
                    assert!(matches!(
                        result.reconstruction_flag,
                        ReconstructionFlag::Ok | ReconstructionFlag::TangentFallback
                    ));
                } else {
                    assert_eq!(result.reconstruction_flag, ReconstructionFlag::None);
                }
            }
            FrameRecord::Failed(failure) => {
                assert_eq!(failure.frame_id, frames[7].frame_id);
                failures += 1;
            }
        }
    }
    assert_eq!(failures, 1);
}

/// Macro-F1 of a uniformly random predictor on balanced truth converges to
/// its analytic expectation (all per-class precisions and recalls are 1/4,
/// so F1 per class is 1/4 as well).
#[test]
fn random_predictor_macro_f1_matches_expectation() {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let n_per_class = 3000;
    let truths: Vec<GazeClass> = GazeClass::ALL.repeat(n_per_class);
    let predictions: Vec<GazeClass> = truths
        .iter()
        .map(|_| GazeClass::ALL[rng.random_range(0..4)])
        .collect();
    let metrics = gazekit::pipeline::evaluate_classifier(&predictions, &truths).unwrap();
    // Accuracy estimate has σ = sqrt(p(1-p)/n); macro-F1 concentrates at
    // the same rate. Use a 3σ band plus a small smoothing allowance.
    let n = truths.len() as f64;
    let band = 3.0 * (0.25 * 0.75 / n).sqrt() + 0.01;
    assert!(
        (metrics.accuracy - 0.25).abs() < band,
        "accuracy {}",
        metrics.accuracy
    );
    assert!(
        (metrics.macro_f1 - 0.25).abs() < band,
        "macro F1 {}",
        metrics.macro_f1
    );
}
