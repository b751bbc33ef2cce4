//! One-vs-rest multiclass gaze classifier.
//!
//! One RBF binary machine per gaze class, trained on the same weighted
//! samples with that class against the rest. Prediction takes the argmax of
//! the four decision values and reports a softmax of them as confidence.
//! Hyperparameters come from an exhaustive grid search scored by stratified
//! k-fold cross-validation.

mod mlp;
mod svm;

pub use mlp::{predict_mlp, train_mlp_classifier, MlpClassifier};
pub use svm::{
    dual_objective, expand_alphas, kkt_max_violation, rbf_kernel, train_binary_svm,
    train_binary_svm_with, BinarySvm, SmoOptions,
};

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::full_class_weights;
use crate::dataset::GazeClass;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, LabeledFeature, FEATURE_LEN};

const SVC_FORMAT_TAG: &str = "gazekit-svc/1";

/// One-vs-rest set of four binary machines, keyed by the fixed class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvcModel {
    pub format: String,
    pub class_order: [GazeClass; 4],
    /// Class weights the machines were trained with.
    pub class_weights: [f64; 4],
    pub machines: Vec<BinarySvm>,
}

impl SvcModel {
    /// Decision value of each one-vs-rest machine, in class order.
    pub fn decision_values(&self, x: &FeatureVector) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (slot, machine) in out.iter_mut().zip(&self.machines) {
            *slot = machine.decision(x);
        }
        out
    }

    /// Predicted class and its confidence, the softmax of the four decision
    /// values at the argmax. Ties go to the earlier class in the fixed
    /// order.
    pub fn predict(&self, x: &FeatureVector) -> (GazeClass, f64) {
        let decisions = self.decision_values(x);
        let mut best = 0;
        for i in 1..4 {
            if decisions[i] > decisions[best] {
                best = i;
            }
        }
        (self.class_order[best], softmax_at(&decisions, best))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer(&mut writer, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SvcModel> {
        let file = File::open(path).map_err(|_| Error::ModelMissing(path.display().to_string()))?;
        let model: SvcModel = serde_json::from_reader(BufReader::new(file))?;
        if model.format != SVC_FORMAT_TAG {
            return Err(Error::ConfigError(format!(
                "unsupported classifier model format {:?}",
                model.format
            )));
        }
        Ok(model)
    }
}

fn softmax_at(values: &[f64; 4], index: usize) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    (values[index] - max).exp() / sum
}

/// Trains the four one-vs-rest machines with inverse-frequency class
/// weights computed from `samples`.
pub fn train_svc(
    samples: &[LabeledFeature],
    c: f64,
    gamma: f64,
    opts: SmoOptions,
) -> Result<SvcModel> {
    let labels: Vec<GazeClass> = samples.iter().map(|s| s.label).collect();
    let class_weights = full_class_weights(&labels)?;
    let features: Vec<FeatureVector> = samples.iter().map(|s| s.feature).collect();
    let sample_weights: Vec<f64> = samples
        .iter()
        .map(|s| class_weights[s.label.index()])
        .collect();

    let mut machines = Vec::with_capacity(4);
    for class in GazeClass::ALL {
        let binary_labels: Vec<f64> = samples
            .iter()
            .map(|s| if s.label == class { 1.0 } else { -1.0 })
            .collect();
        machines.push(train_binary_svm_with(
            &features,
            &binary_labels,
            c,
            gamma,
            &sample_weights,
            opts,
        )?);
    }
    Ok(SvcModel {
        format: SVC_FORMAT_TAG.to_string(),
        class_order: GazeClass::ALL,
        class_weights,
        machines,
    })
}

/// Fraction of samples the model classifies correctly.
pub fn svc_accuracy(model: &SvcModel, samples: &[LabeledFeature]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples
        .iter()
        .filter(|s| model.predict(&s.feature).0 == s.label)
        .count();
    correct as f64 / samples.len() as f64
}

/// A kernel width, either a literal value or the data-driven
/// `1 / (57 · var(X))` scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, rename_all = "snake_case")]
pub enum GammaSpec {
    Named(NamedGamma),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedGamma {
    Scale,
}

impl GammaSpec {
    pub fn resolve(&self, samples: &[LabeledFeature]) -> f64 {
        match self {
            GammaSpec::Value(v) => *v,
            GammaSpec::Named(NamedGamma::Scale) => scale_gamma(samples),
        }
    }
}

/// `1 / (n_features · var(X))` over all feature components; falls back to 1
/// when the variance vanishes.
pub fn scale_gamma(samples: &[LabeledFeature]) -> f64 {
    let n = (samples.len() * FEATURE_LEN) as f64;
    if n == 0.0 {
        return 1.0;
    }
    let mean: f64 = samples
        .iter()
        .flat_map(|s| s.feature.as_slice())
        .sum::<f64>()
        / n;
    let var: f64 = samples
        .iter()
        .flat_map(|s| s.feature.as_slice())
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    if var <= 0.0 {
        1.0
    } else {
        1.0 / (FEATURE_LEN as f64 * var)
    }
}

/// Hyperparameter grid for the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvcGrid {
    pub c_values: Vec<f64>,
    pub gamma_values: Vec<GammaSpec>,
}

impl Default for SvcGrid {
    fn default() -> Self {
        SvcGrid {
            c_values: vec![0.1, 1.0, 10.0, 100.0],
            gamma_values: vec![
                GammaSpec::Named(NamedGamma::Scale),
                GammaSpec::Value(0.001),
                GammaSpec::Value(0.01),
                GammaSpec::Value(0.1),
                GammaSpec::Value(1.0),
            ],
        }
    }
}

/// Accuracy of one grid point across the folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub c: f64,
    pub gamma: f64,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Outcome of the exhaustive search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchReport {
    pub entries: Vec<GridEntry>,
    pub selected_c: f64,
    pub selected_gamma: f64,
    /// Fold index assigned to each input sample.
    pub fold_assignment: Vec<usize>,
}

/// Exhaustive search over the grid, scored by stratified k-fold
/// cross-validation. The selected pair maximizes mean fold accuracy; ties
/// break toward smaller C, then smaller gamma.
pub fn grid_search_cv(
    samples: &[LabeledFeature],
    grid: &SvcGrid,
    folds: usize,
    seed: u64,
    opts: SmoOptions,
) -> Result<GridSearchReport> {
    if folds < 2 {
        return Err(Error::ConfigError(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    if grid.c_values.is_empty() || grid.gamma_values.is_empty() {
        return Err(Error::ConfigError("empty hyperparameter grid".into()));
    }
    let fold_assignment = stratified_folds(samples, folds, seed)?;

    let mut entries = Vec::new();
    for c in &grid.c_values {
        for gamma_spec in &grid.gamma_values {
            let gamma = gamma_spec.resolve(samples);
            let mut fold_accuracies = Vec::with_capacity(folds);
            for fold in 0..folds {
                let train: Vec<LabeledFeature> = samples
                    .iter()
                    .zip(&fold_assignment)
                    .filter(|(_, f)| **f != fold)
                    .map(|(s, _)| s.clone())
                    .collect();
                let held_out: Vec<LabeledFeature> = samples
                    .iter()
                    .zip(&fold_assignment)
                    .filter(|(_, f)| **f == fold)
                    .map(|(s, _)| s.clone())
                    .collect();
                let model = train_svc(&train, *c, gamma, opts)?;
                fold_accuracies.push(svc_accuracy(&model, &held_out));
            }
            let mean_accuracy = fold_accuracies.iter().sum::<f64>() / folds as f64;
            entries.push(GridEntry {
                c: *c,
                gamma,
                fold_accuracies,
                mean_accuracy,
            });
        }
    }

    let best = entries
        .iter()
        .min_by(|a, b| {
            b.mean_accuracy
                .partial_cmp(&a.mean_accuracy)
                .unwrap()
                .then(a.c.partial_cmp(&b.c).unwrap())
                .then(a.gamma.partial_cmp(&b.gamma).unwrap())
        })
        .expect("grid is nonempty");
    Ok(GridSearchReport {
        selected_c: best.c,
        selected_gamma: best.gamma,
        entries,
        fold_assignment,
    })
}

/// Deals each class's samples round-robin into `folds` folds after a seeded
/// shuffle, so every fold keeps the class mix.
fn stratified_folds(samples: &[LabeledFeature], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; samples.len()];
    for class in GazeClass::ALL {
        let mut indices: Vec<usize> = samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            continue;
        }
        if indices.len() < folds {
            return Err(Error::TooFewSamples {
                class,
                found: indices.len(),
                folds,
            });
        }
        indices.shuffle(&mut rng);
        for (pos, idx) in indices.into_iter().enumerate() {
            assignment[idx] = pos % folds;
        }
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fv(coords: &[f64]) -> FeatureVector {
        let mut values = [0.0; FEATURE_LEN];
        values[..coords.len()].copy_from_slice(coords);
        FeatureVector::from_values(values)
    }

    /// Four well-separated clusters, one per class.
    fn clustered_samples(per_class: usize, spread: f64) -> Vec<LabeledFeature> {
        let centers = [
            [0.0, 0.0],
            [4.0, 0.0],
            [0.0, 4.0],
            [4.0, 4.0],
        ];
        let mut out = Vec::new();
        for (class, center) in GazeClass::ALL.into_iter().zip(centers) {
            for i in 0..per_class {
                let angle = i as f64 * 2.399963; // golden-angle spiral fill
                let radius = spread * (i as f64 / per_class as f64).sqrt();
                out.push(LabeledFeature {
                    feature: fv(&[
                        center[0] + radius * angle.cos(),
                        center[1] + radius * angle.sin(),
                    ]),
                    label: class,
                });
            }
        }
        out
    }

    #[test]
    fn softmax_confidence_example() {
        let values = [2.0, -1.0, -1.0, -1.0];
        let expected = 2.0f64.exp() / (2.0f64.exp() + 3.0 * (-1.0f64).exp());
        assert_abs_diff_eq!(softmax_at(&values, 0), expected, epsilon = 1e-9);
        assert_abs_diff_eq!(expected, 0.870, epsilon = 1e-3);
    }

    #[test]
    fn equal_decisions_pick_first_class_quarter_confidence() {
        let machines: Vec<BinarySvm> = (0..4)
            .map(|_| BinarySvm {
                support_vectors: vec![],
                sv_indices: vec![],
                dual_coefs: vec![],
                bias: 0.3,
                gamma: 1.0,
                c: 1.0,
            })
            .collect();
        let model = SvcModel {
            format: SVC_FORMAT_TAG.into(),
            class_order: GazeClass::ALL,
            class_weights: [1.0; 4],
            machines,
        };
        let (class, confidence) = model.predict(&fv(&[0.0]));
        assert_eq!(class, GazeClass::EyeContact);
        assert_abs_diff_eq!(confidence, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn separable_clusters_reach_full_training_accuracy() {
        let samples = clustered_samples(12, 0.5);
        let model = train_svc(&samples, 1000.0, 0.5, SmoOptions::default()).unwrap();
        assert_eq!(svc_accuracy(&model, &samples), 1.0);
    }

    #[test]
    fn prediction_invariant_under_monotone_shift_of_decisions() {
        // Argmax over decision values is unchanged by any strictly
        // increasing transform applied to all four.
        let samples = clustered_samples(8, 0.6);
        let model = train_svc(&samples, 50.0, 0.5, SmoOptions::default()).unwrap();
        for s in &samples {
            let d = model.decision_values(&s.feature);
            let transformed: Vec<f64> = d.iter().map(|v| (3.0 * v + 1.0).tanh() * 2.0).collect();
            let argmax_d = (0..4).max_by(|a, b| d[*a].partial_cmp(&d[*b]).unwrap()).unwrap();
            let argmax_t = (0..4)
                .max_by(|a, b| transformed[*a].partial_cmp(&transformed[*b]).unwrap())
                .unwrap();
            assert_eq!(argmax_d, argmax_t);
        }
    }

    #[test]
    fn grid_search_single_entry_and_duplicates() {
        let samples = clustered_samples(10, 0.5);
        let grid = SvcGrid {
            c_values: vec![10.0],
            gamma_values: vec![GammaSpec::Value(0.5)],
        };
        let report = grid_search_cv(&samples, &grid, 5, 3, SmoOptions::default()).unwrap();
        assert_eq!(report.selected_c, 10.0);
        assert_eq!(report.selected_gamma, 0.5);

        let dup = SvcGrid {
            c_values: vec![10.0, 10.0],
            gamma_values: vec![GammaSpec::Value(0.5), GammaSpec::Value(0.5)],
        };
        let dup_report = grid_search_cv(&samples, &dup, 5, 3, SmoOptions::default()).unwrap();
        assert_eq!(dup_report.selected_c, report.selected_c);
        assert_eq!(dup_report.selected_gamma, report.selected_gamma);
        assert_eq!(dup_report.entries.len(), 4);
    }

    #[test]
    fn grid_search_prefers_strictly_better_pair_on_every_fold() {
        // An absurd kernel width makes every held-out point invisible to
        // the support vectors (decision ≈ bias, one class for everything);
        // the sane pair must win each fold outright.
        let samples = clustered_samples(15, 0.9);
        let grid = SvcGrid {
            c_values: vec![10.0],
            gamma_values: vec![GammaSpec::Value(0.5), GammaSpec::Value(1e6)],
        };
        let report = grid_search_cv(&samples, &grid, 5, 11, SmoOptions::default()).unwrap();
        assert_eq!(report.selected_gamma, 0.5);
        let strong = &report.entries[0];
        let weak = &report.entries[1];
        for (w, s) in weak.fold_accuracies.iter().zip(&strong.fold_accuracies) {
            assert!(s > w, "expected strict win per fold: {s} vs {w}");
        }
    }

    #[test]
    fn grid_search_rejects_thin_classes() {
        let mut samples = clustered_samples(6, 0.3);
        let mut kept = 0;
        samples.retain(|s| {
            if s.label == GazeClass::Workspace {
                kept += 1;
                kept <= 2
            } else {
                true
            }
        });
        // Workspace now has 2 samples < 5 folds.
        let err = grid_search_cv(
            &samples,
            &SvcGrid::default(),
            5,
            0,
            SmoOptions::default(),
        );
        assert!(matches!(
            err,
            Err(Error::TooFewSamples {
                class: GazeClass::Workspace,
                ..
            })
        ));
    }

    #[test]
    fn stratified_folds_are_deterministic_and_balanced() {
        let samples = clustered_samples(10, 0.4);
        let a = stratified_folds(&samples, 5, 9).unwrap();
        let b = stratified_folds(&samples, 5, 9).unwrap();
        assert_eq!(a, b);
        for class in GazeClass::ALL {
            for fold in 0..5 {
                let count = samples
                    .iter()
                    .zip(&a)
                    .filter(|(s, f)| s.label == class && **f == fold)
                    .count();
                assert_eq!(count, 2);
            }
        }
    }

    #[test]
    fn model_roundtrip_is_exact() {
        let samples = clustered_samples(6, 0.4);
        let model = train_svc(&samples, 10.0, 0.7, SmoOptions::default()).unwrap();
        let dir = std::env::temp_dir().join("gazekit-svc-roundtrip-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("svc.json");
        model.save(&path).unwrap();
        let loaded = SvcModel::load(&path).unwrap();
        assert_eq!(model, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_model_file_is_reported() {
        let err = SvcModel::load(Path::new("/nonexistent/gazekit/svc.json"));
        assert!(matches!(err, Err(Error::ModelMissing(_))));
    }
}
