//! The 57-element feature vector both learners consume, and the geometric
//! transforms augmentation applies to it.
//!
//! Layout: one `(x, y, k)` triplet per keypoint, in the canonical keypoint
//! order. Coordinates are centred on the face centroid and scaled so the
//! farthest valid keypoint sits at distance 1; confidences pass through
//! unchanged. Missing keypoints (k = 0) hold `(0, 0, k)` and are excluded
//! from the centroid and scale.

use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{GazeClass, KeypointFrame, EYE_KEYPOINT_RANGE, KEYPOINT_COUNT};
use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Total feature length: 19 keypoints × (x, y, k).
pub const FEATURE_LEN: usize = 3 * KEYPOINT_COUNT;

/// Normalized per-frame feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    values: [f64; FEATURE_LEN],
}

impl FeatureVector {
    pub fn from_values(values: [f64; FEATURE_LEN]) -> Self {
        Self { values }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn x(&self, keypoint: usize) -> f64 {
        self.values[3 * keypoint]
    }

    pub fn y(&self, keypoint: usize) -> f64 {
        self.values[3 * keypoint + 1]
    }

    pub fn k(&self, keypoint: usize) -> f64 {
        self.values[3 * keypoint + 2]
    }

    pub fn set_xy(&mut self, keypoint: usize, x: f64, y: f64) {
        self.values[3 * keypoint] = x;
        self.values[3 * keypoint + 1] = y;
    }

    /// A keypoint with zero confidence is missing.
    pub fn is_valid(&self, keypoint: usize) -> bool {
        self.k(keypoint) > 0.0
    }

    /// Squared euclidean distance over all 57 components.
    pub fn distance_squared(&self, other: &FeatureVector) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl Serialize for FeatureVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(FEATURE_LEN))?;
        for v in &self.values {
            seq.serialize_element(v)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        struct FeatureVisitor;
        impl<'de> Visitor<'de> for FeatureVisitor {
            type Value = FeatureVector;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                write!(f, "a sequence of {FEATURE_LEN} numbers")
            }

            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<FeatureVector, A::Error> {
                let mut values = [0.0; FEATURE_LEN];
                for (i, slot) in values.iter_mut().enumerate() {
                    *slot = seq
                        .next_element()?
                        .ok_or_else(|| serde::de::Error::invalid_length(i, &self))?;
                }
                if seq.next_element::<f64>()?.is_some() {
                    return Err(serde::de::Error::invalid_length(FEATURE_LEN + 1, &self));
                }
                Ok(FeatureVector { values })
            }
        }
        deserializer.deserialize_seq(FeatureVisitor)
    }
}

/// A feature vector with its gaze-class label; the classifier's training
/// unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeature {
    pub feature: FeatureVector,
    pub label: GazeClass,
}

/// A feature vector with its 2D gaze-vector target; the regressor's
/// training unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub feature: FeatureVector,
    /// Ground-truth 2D gaze vector, pixels.
    pub gaze2d: Point2,
}

/// Builds the normalized feature vector for a frame.
///
/// Centres valid keypoints on their mean and divides by the distance of the
/// farthest valid keypoint from that mean.
pub fn build_feature(frame: &KeypointFrame) -> Result<FeatureVector> {
    let valid: Vec<(usize, f64, f64)> = frame
        .keypoints
        .iter()
        .enumerate()
        .filter(|(_, kp)| kp.is_valid())
        .map(|(i, kp)| (i, kp.x, kp.y))
        .collect();
    if valid.is_empty() {
        return Err(Error::NoValidKeypoints);
    }
    let n = valid.len() as f64;
    let cx = valid.iter().map(|(_, x, _)| x).sum::<f64>() / n;
    let cy = valid.iter().map(|(_, _, y)| y).sum::<f64>() / n;
    let scale = valid
        .iter()
        .map(|(_, x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
        .fold(0.0f64, f64::max);
    if scale < 1e-9 {
        return Err(Error::DegenerateGeometry);
    }

    let mut values = [0.0; FEATURE_LEN];
    for (i, kp) in frame.keypoints.iter().enumerate() {
        values[3 * i + 2] = kp.k;
        if kp.is_valid() {
            values[3 * i] = (kp.x - cx) / scale;
            values[3 * i + 1] = (kp.y - cy) / scale;
        }
    }
    Ok(FeatureVector { values })
}

/// Rotates the valid keypoints of a normalized feature about the origin
/// (the face centroid). Confidences and missing keypoints are untouched.
pub fn rotate_feature(fv: &FeatureVector, angle_deg: f64) -> FeatureVector {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut out = *fv;
    for i in 0..KEYPOINT_COUNT {
        if fv.is_valid(i) {
            let (x, y) = (fv.x(i), fv.y(i));
            out.set_xy(i, cos * x - sin * y, sin * x + cos * y);
        }
    }
    out
}

/// Zeroes the coordinates of the 16 eye keypoints, simulating a detector
/// that lost the eye region. Confidences and the nose/ear triplets are left
/// unchanged.
pub fn zero_eye_keypoints(fv: &FeatureVector) -> FeatureVector {
    let mut out = *fv;
    for i in EYE_KEYPOINT_RANGE {
        out.set_xy(i, 0.0, 0.0);
    }
    out
}
