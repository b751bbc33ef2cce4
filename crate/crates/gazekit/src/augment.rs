//! Training-set augmentation and class weighting.
//!
//! Augmentation never mutates or drops originals; it appends copies, so
//! output sizes are exact functions of the input class counts and the plan:
//!
//! * classifier set: one zeroed-eye copy per `eye_contact` and `icub`
//!   sample, plus per rotation angle two independent seeded draws of
//!   `⌊fraction·N_ec⌋` `eye_contact` samples (one rotated left, one right);
//! * regressor set: `⌊eye_zero_fraction·N⌋` zeroed-eye copies with targets
//!   carried over unchanged.
//!
//! Fractions are taken of the original population, draws are without
//! replacement within one angle/direction and independent across them.

use std::collections::BTreeMap;

use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::GazeClass;
use crate::error::{Error, Result};
use crate::features::{rotate_feature, zero_eye_keypoints, LabeledFeature, RegressionSample};

/// Augmentation parameters; defaults follow the training recipe the models
/// were designed for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPlan {
    /// Rotation angles in degrees, applied both left and right.
    pub rotation_angles: Vec<f64>,
    /// Fraction of the eye-contact population drawn per angle and
    /// direction.
    pub rotation_fractions: Vec<f64>,
    /// Fraction of regressor samples duplicated with zeroed eye keypoints.
    pub eye_zero_fraction_regressor: f64,
    pub seed: u64,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        AugmentPlan {
            rotation_angles: vec![15.0, 30.0, 45.0, 60.0],
            rotation_fractions: vec![0.05, 0.10, 0.10, 0.05],
            eye_zero_fraction_regressor: 0.40,
            seed: 0,
        }
    }
}

impl AugmentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.rotation_angles.len() != self.rotation_fractions.len() {
            return Err(Error::ConfigError(format!(
                "{} rotation angles but {} fractions",
                self.rotation_angles.len(),
                self.rotation_fractions.len()
            )));
        }
        if self.rotation_angles.iter().any(|a| *a <= 0.0) {
            return Err(Error::ConfigError("rotation angles must be positive".into()));
        }
        let fraction_ok = |f: &f64| (0.0..=1.0).contains(f);
        if !self.rotation_fractions.iter().all(fraction_ok)
            || !fraction_ok(&self.eye_zero_fraction_regressor)
        {
            return Err(Error::ConfigError("fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Number of samples the classifier augmentation adds for the given
    /// per-class counts.
    pub fn classifier_added(&self, n_eye_contact: usize, n_icub: usize) -> usize {
        let rotated: usize = self
            .rotation_fractions
            .iter()
            .map(|f| 2 * (f * n_eye_contact as f64).floor() as usize)
            .sum();
        n_eye_contact + n_icub + rotated
    }

    /// Number of samples the regressor augmentation adds.
    pub fn regressor_added(&self, n: usize) -> usize {
        (self.eye_zero_fraction_regressor * n as f64).floor() as usize
    }
}

/// Augments a labelled classifier training set. Originals are retained in
/// order and copies appended; `workspace` and `other` samples are never
/// duplicated.
pub fn augment_classifier_set(samples: &[LabeledFeature], plan: &AugmentPlan) -> Vec<LabeledFeature> {
    let mut out: Vec<LabeledFeature> = samples.to_vec();

    // Zeroed-eye copies of every eye-contact and icub sample, in input order.
    for s in samples {
        if matches!(s.label, GazeClass::EyeContact | GazeClass::Icub) {
            out.push(LabeledFeature {
                feature: zero_eye_keypoints(&s.feature),
                label: s.label,
            });
        }
    }

    // Rotated copies of eye-contact samples only.
    let ec_indices: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label == GazeClass::EyeContact)
        .map(|(i, _)| i)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    for (angle, fraction) in plan.rotation_angles.iter().zip(&plan.rotation_fractions) {
        let count = (fraction * ec_indices.len() as f64).floor() as usize;
        for direction in [*angle, -*angle] {
            if count == 0 || ec_indices.is_empty() {
                continue;
            }
            let draw = index_sample(&mut rng, ec_indices.len(), count);
            for pick in draw.iter() {
                let src = &samples[ec_indices[pick]];
                out.push(LabeledFeature {
                    feature: rotate_feature(&src.feature, direction),
                    label: src.label,
                });
            }
        }
    }
    out
}

/// Augments a regressor training set with zeroed-eye copies; targets are
/// copied unchanged.
pub fn augment_regressor_set(
    samples: &[RegressionSample],
    plan: &AugmentPlan,
) -> Vec<RegressionSample> {
    let mut out: Vec<RegressionSample> = samples.to_vec();
    let count = plan.regressor_added(samples.len());
    if count == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let draw = index_sample(&mut rng, samples.len(), count);
    for pick in draw.iter() {
        let src = &samples[pick];
        out.push(RegressionSample {
            feature: zero_eye_keypoints(&src.feature),
            gaze2d: src.gaze2d,
        });
    }
    out
}

/// Weights inversely proportional to class frequency: `N / (K · n_c)` over
/// the classes present, with `K` the number of distinct classes present.
pub fn class_weights(labels: &[GazeClass]) -> BTreeMap<GazeClass, f64> {
    let mut counts: BTreeMap<GazeClass, usize> = BTreeMap::new();
    for label in labels {
        *counts.entry(*label).or_default() += 1;
    }
    let n = labels.len() as f64;
    let k = counts.len() as f64;
    counts
        .into_iter()
        .map(|(class, count)| (class, n / (k * count as f64)))
        .collect()
}

/// Class weights for all four classes; errors with the first zero-count
/// class when one is absent.
pub fn full_class_weights(labels: &[GazeClass]) -> Result<[f64; 4]> {
    let weights = class_weights(labels);
    let mut out = [0.0; 4];
    for class in GazeClass::ALL {
        match weights.get(&class) {
            Some(w) => out[class.index()] = *w,
            None => return Err(Error::MissingClass(class)),
        }
    }
    Ok(out)
}
