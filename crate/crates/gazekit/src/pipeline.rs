//! End-to-end two-layer inference and evaluation.
//!
//! Per frame: build the feature vector, classify it, and only when the
//! class is `workspace` run the gaze regressor and reconstruct the 3D gaze
//! versor geometrically — the ray through the predicted tip pixel is
//! intersected with a 10 cm sphere around the face centroid, taking the
//! camera-side intersection.

use serde::{Deserialize, Serialize};

use crate::classifier::SvcModel;
use crate::dataset::{
    annotate_gaze, face_centroid, GazeClass, KeypointFrame, GAZE_VERSOR_LENGTH,
};
use crate::error::{Error, Result};
use crate::features::build_feature;
use crate::geometry::{
    angular_error_deg, backproject, ray_sphere_intersect, CameraIntrinsics, Point2, Point3,
};
use crate::regressor::CguRegressor;

/// How the 3D gaze versor was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionFlag {
    /// Ray–sphere intersection, camera-side root.
    Ok,
    /// The ray missed the sphere; the closest ray point was projected
    /// radially onto it.
    TangentFallback,
    /// Frame was not forwarded to the regressor.
    None,
}

/// Per-frame pipeline output. Gaze fields are present exactly when the
/// classifier said `workspace`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub frame_id: String,
    pub predicted_class: GazeClass,
    pub class_confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze2d: Option<Point2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze3d: Option<Point3>,
    pub reconstruction_flag: ReconstructionFlag,
}

/// A frame that could not be processed, kept in the output stream so batch
/// order is preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub frame_id: String,
    pub error: String,
}

/// One line of the streaming inference output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrameRecord {
    Ok(PipelineResult),
    Failed(FrameFailure),
}

/// Runs the two-layer pipeline on one frame. `default_depth` is used when
/// the frame carries no measured centroid depth.
pub fn run(
    frame: &KeypointFrame,
    svc: &SvcModel,
    regressor: &CguRegressor,
    default_depth: f64,
) -> Result<PipelineResult> {
    let feature = build_feature(frame)?;
    let (predicted_class, class_confidence) = svc.predict(&feature);
    if predicted_class != GazeClass::Workspace {
        return Ok(PipelineResult {
            frame_id: frame.frame_id.clone(),
            predicted_class,
            class_confidence,
            gaze2d: None,
            sigma: None,
            gaze3d: None,
            reconstruction_flag: ReconstructionFlag::None,
        });
    }
    let output = regressor.predict(&feature);
    let centroid_px = face_centroid(frame)?;
    let depth = frame.centroid_depth.unwrap_or(default_depth);
    let (gaze3d, flag) = reconstruct_3d(output.gaze2d, centroid_px, &frame.camera, depth)?;
    Ok(PipelineResult {
        frame_id: frame.frame_id.clone(),
        predicted_class,
        class_confidence,
        gaze2d: Some(output.gaze2d),
        sigma: Some(output.sigma),
        gaze3d: Some(gaze3d),
        reconstruction_flag: flag,
    })
}

/// Runs a whole batch; failures become failure records and never abort the
/// batch. Output order matches input order.
pub fn run_batch(
    frames: &[KeypointFrame],
    svc: &SvcModel,
    regressor: &CguRegressor,
    default_depth: f64,
) -> Vec<FrameRecord> {
    frames
        .iter()
        .map(|frame| match run(frame, svc, regressor, default_depth) {
            Ok(result) => FrameRecord::Ok(result),
            Err(err) => FrameRecord::Failed(FrameFailure {
                frame_id: frame.frame_id.clone(),
                error: err.to_string(),
            }),
        })
        .collect()
}

/// Recovers the 3D gaze versor from a 2D gaze vector.
///
/// The face centroid is lifted to `depth`; an infinite ray from the camera
/// centre through the gaze tip pixel is intersected with the 10 cm sphere
/// around it. The smaller ray parameter (camera side) wins. When the ray
/// misses, the closest ray point is projected radially onto the sphere and
/// the result flagged.
pub fn reconstruct_3d(
    gaze2d: Point2,
    centroid_px: Point2,
    cam: &CameraIntrinsics,
    depth: f64,
) -> Result<(Point3, ReconstructionFlag)> {
    let center = backproject(centroid_px, depth, cam)?;
    let tip_px = centroid_px + gaze2d;
    let dir = backproject(tip_px, 1.0, cam)?.normalized()?;
    let origin = Point3::ZERO;
    let hits = ray_sphere_intersect(origin, dir, center, GAZE_VERSOR_LENGTH);
    match hits.first() {
        Some(s) => {
            let tip = origin + dir * *s;
            let gaze = ((tip - center) / GAZE_VERSOR_LENGTH).normalized()?;
            Ok((gaze, ReconstructionFlag::Ok))
        }
        None => {
            // Closest ray point to the sphere centre, pushed onto the sphere.
            let s = dir.dot(center).max(0.0);
            let closest = origin + dir * s;
            let gaze = (closest - center).normalized()?;
            Ok((gaze, ReconstructionFlag::TangentFallback))
        }
    }
}

/// Classifier evaluation over aligned prediction/truth lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    /// `confusion[truth][predicted]`, classes in the fixed order.
    pub confusion: [[usize; 4]; 4],
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Per-class (precision, recall, f1) in the fixed class order.
    pub per_class: [(f64, f64, f64); 4],
    /// Classes absent from the ground truth still enter the macro averages
    /// as zeros; they are listed here.
    pub warnings: Vec<String>,
}

/// Confusion matrix and macro-averaged precision/recall/F1.
pub fn evaluate_classifier(
    predictions: &[GazeClass],
    truths: &[GazeClass],
) -> Result<ClassifierMetrics> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    let mut confusion = [[0usize; 4]; 4];
    for (p, t) in predictions.iter().zip(truths) {
        confusion[t.index()][p.index()] += 1;
    }
    let total: usize = predictions.len();
    let trace: usize = (0..4).map(|i| confusion[i][i]).sum();
    let accuracy = if total == 0 {
        0.0
    } else {
        trace as f64 / total as f64
    };

    let mut per_class = [(0.0, 0.0, 0.0); 4];
    let mut warnings = Vec::new();
    for c in 0..4 {
        let tp = confusion[c][c];
        let fp: usize = (0..4).filter(|t| *t != c).map(|t| confusion[t][c]).sum();
        let fn_: usize = (0..4).filter(|p| *p != c).map(|p| confusion[c][p]).sum();
        let truth_count = tp + fn_;
        if truth_count == 0 {
            warnings.push(format!(
                "class {} absent from ground truth; it contributes 0 to the macro averages",
                GazeClass::ALL[c].name()
            ));
        }
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if truth_count == 0 {
            0.0
        } else {
            tp as f64 / truth_count as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class[c] = (precision, recall, f1);
    }
    let macro_precision = per_class.iter().map(|m| m.0).sum::<f64>() / 4.0;
    let macro_recall = per_class.iter().map(|m| m.1).sum::<f64>() / 4.0;
    let macro_f1 = per_class.iter().map(|m| m.2).sum::<f64>() / 4.0;

    Ok(ClassifierMetrics {
        confusion,
        accuracy,
        macro_precision,
        macro_recall,
        macro_f1,
        per_class,
        warnings,
    })
}

/// Which denominator the workspace-forward fraction uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkspaceFractionDenominator {
    /// Fraction of true-workspace frames classified as workspace.
    #[default]
    TrueWorkspace,
    /// Fraction of all frames classified as workspace.
    AllFrames,
}

/// Evaluation options for one split.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    pub workspace_denominator: WorkspaceFractionDenominator,
    /// Replace the regressor output with the ground-truth 2D gaze vector;
    /// isolates the geometric reconstruction from the learning error.
    pub oracle_regressor: bool,
}

/// Metrics of one train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub classifier: ClassifierMetrics,
    /// Fraction of frames forwarded to the regressor, per
    /// [`WorkspaceFractionDenominator`].
    pub workspace_fraction: f64,
    /// RMSE in pixels over frames both labelled and predicted workspace;
    /// absent when no frame qualifies.
    pub gaze_rmse_2d: Option<f64>,
    /// Mean / standard deviation of the angular error in degrees over the
    /// same frames.
    pub angular_error_mean_deg: Option<f64>,
    pub angular_error_std_deg: Option<f64>,
    /// Frames that failed feature building or reconstruction.
    pub failures: usize,
}

/// Evaluates pipeline outputs against annotated frames for one split.
///
/// Ground-truth 2D/3D gaze comes from [`annotate_gaze`] with the same depth
/// convention the pipeline used.
pub fn evaluate_split(
    frames: &[KeypointFrame],
    svc: &SvcModel,
    regressor: &CguRegressor,
    default_depth: f64,
    opts: EvalOptions,
) -> Result<SplitMetrics> {
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    let mut forwarded_true_workspace = 0usize;
    let mut predicted_workspace = 0usize;
    let mut true_workspace = 0usize;
    let mut sq_err_sum = 0.0;
    let mut sq_err_n = 0usize;
    let mut angles = Vec::new();
    let mut failures = 0usize;

    for frame in frames {
        let truth = frame
            .label
            .ok_or_else(|| Error::MissingLabel(frame.frame_id.clone()))?;
        let mut result = match run(frame, svc, regressor, default_depth) {
            Ok(r) => r,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        if opts.oracle_regressor && result.predicted_class == GazeClass::Workspace {
            // Swap in the annotated 2D vector and re-run the geometry.
            if let Some(target) = frame.target_ccs {
                let depth = frame.centroid_depth.unwrap_or(default_depth);
                let ann = annotate_gaze(frame, target, depth)?;
                let (gaze3d, flag) =
                    reconstruct_3d(ann.gaze2d, ann.centroid_px, &frame.camera, depth)?;
                result.gaze2d = Some(ann.gaze2d);
                result.gaze3d = Some(gaze3d);
                result.reconstruction_flag = flag;
            }
        }
        predictions.push(result.predicted_class);
        truths.push(truth);

        if truth == GazeClass::Workspace {
            true_workspace += 1;
        }
        if result.predicted_class == GazeClass::Workspace {
            predicted_workspace += 1;
        }
        if truth == GazeClass::Workspace && result.predicted_class == GazeClass::Workspace {
            forwarded_true_workspace += 1;
            if let (Some(gaze2d), Some(gaze3d), Some(target)) =
                (result.gaze2d, result.gaze3d, frame.target_ccs)
            {
                let depth = frame.centroid_depth.unwrap_or(default_depth);
                let ann = annotate_gaze(frame, target, depth)?;
                sq_err_sum +=
                    (gaze2d.x - ann.gaze2d.x).powi(2) + (gaze2d.y - ann.gaze2d.y).powi(2);
                sq_err_n += 1;
                angles.push(angular_error_deg(gaze3d, ann.gaze3d)?);
            }
        }
    }

    let classifier = evaluate_classifier(&predictions, &truths)?;
    let workspace_fraction = match opts.workspace_denominator {
        WorkspaceFractionDenominator::TrueWorkspace => {
            if true_workspace == 0 {
                0.0
            } else {
                forwarded_true_workspace as f64 / true_workspace as f64
            }
        }
        WorkspaceFractionDenominator::AllFrames => {
            if predictions.is_empty() {
                0.0
            } else {
                predicted_workspace as f64 / predictions.len() as f64
            }
        }
    };
    let gaze_rmse_2d = if sq_err_n == 0 {
        None
    } else {
        Some((sq_err_sum / (2.0 * sq_err_n as f64)).sqrt())
    };
    let (angular_error_mean_deg, angular_error_std_deg) = if angles.is_empty() {
        (None, None)
    } else {
        let mean = angles.iter().sum::<f64>() / angles.len() as f64;
        let var = angles.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
            / angles.len() as f64;
        (Some(mean), Some(var.sqrt()))
    };

    Ok(SplitMetrics {
        classifier,
        workspace_fraction,
        gaze_rmse_2d,
        angular_error_mean_deg,
        angular_error_std_deg,
        failures,
    })
}

/// Mean ± standard deviation of one metric across splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub mean: f64,
    pub std: f64,
}

fn aggregate(values: impl Iterator<Item = f64>) -> MetricRow {
    let values: Vec<f64> = values.collect();
    if values.is_empty() {
        return MetricRow { mean: 0.0, std: 0.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricRow {
        mean,
        std: var.sqrt(),
    }
}

/// Aggregated evaluation over the k splits: exactly the classifier rows
/// (accuracy, precision, recall, F1) and the end-to-end rows (workspace
/// fraction, 2D RMSE, 3D angular error).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub splits: Vec<SplitMetrics>,
    pub accuracy: MetricRow,
    pub precision: MetricRow,
    pub recall: MetricRow,
    pub f1: MetricRow,
    pub workspace_fraction: MetricRow,
    pub gaze_rmse_2d_px: Option<MetricRow>,
    pub gaze_angular_error_3d_deg: Option<MetricRow>,
}

/// Aggregates per-split metrics into mean ± std rows. With a single split
/// every std is zero.
pub fn aggregate_splits(splits: Vec<SplitMetrics>) -> EvalReport {
    let rmse_values: Vec<f64> = splits.iter().filter_map(|s| s.gaze_rmse_2d).collect();
    let angle_values: Vec<f64> = splits
        .iter()
        .filter_map(|s| s.angular_error_mean_deg)
        .collect();
    EvalReport {
        accuracy: aggregate(splits.iter().map(|s| s.classifier.accuracy)),
        precision: aggregate(splits.iter().map(|s| s.classifier.macro_precision)),
        recall: aggregate(splits.iter().map(|s| s.classifier.macro_recall)),
        f1: aggregate(splits.iter().map(|s| s.classifier.macro_f1)),
        workspace_fraction: aggregate(splits.iter().map(|s| s.workspace_fraction)),
        gaze_rmse_2d_px: if rmse_values.is_empty() {
            None
        } else {
            Some(aggregate(rmse_values.into_iter()))
        },
        gaze_angular_error_3d_deg: if angle_values.is_empty() {
            None
        } else {
            Some(aggregate(angle_values.into_iter()))
        },
        splits,
    }
}

impl EvalReport {
    /// The seven metric rows as `(name, mean, std)` tuples, in report
    /// order. Undefined rows (no workspace frames) render as NaN.
    pub fn rows(&self) -> Vec<(&'static str, f64, f64)> {
        let opt = |row: &Option<MetricRow>| {
            row.map_or((f64::NAN, f64::NAN), |r| (r.mean, r.std))
        };
        let rmse = opt(&self.gaze_rmse_2d_px);
        let angle = opt(&self.gaze_angular_error_3d_deg);
        vec![
            ("accuracy", self.accuracy.mean, self.accuracy.std),
            ("precision", self.precision.mean, self.precision.std),
            ("recall", self.recall.mean, self.recall.std),
            ("f1", self.f1.mean, self.f1.std),
            (
                "workspace_fraction",
                self.workspace_fraction.mean,
                self.workspace_fraction.std,
            ),
            ("gaze_rmse_2d_px", rmse.0, rmse.1),
            ("gaze_angular_error_3d_deg", angle.0, angle.1),
        ]
    }

    /// Human-readable aligned table with one line per metric row.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<28}{:>12}{:>12}\n",
            "metric", "mean", "std"
        );
        for (name, mean, std) in self.rows() {
            out.push_str(&format!("{name:<28}{mean:>12.4}{std:>12.4}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn reconstruct_axial_case() {
        // Centroid at the principal point, zero 2D gaze: the near
        // intersection sits at depth - radius and the versor points at the
        // camera.
        let (gaze, flag) =
            reconstruct_3d(Point2::new(0.0, 0.0), Point2::new(320.0, 240.0), &cam(), 1.0)
                .unwrap();
        assert_eq!(flag, ReconstructionFlag::Ok);
        assert_abs_diff_eq!(gaze.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gaze.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gaze.z, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn reconstruct_miss_falls_back_to_tangent() {
        // A 2D gaze far outside the sphere's silhouette cannot intersect.
        let (gaze, flag) = reconstruct_3d(
            Point2::new(400.0, 0.0),
            Point2::new(320.0, 240.0),
            &cam(),
            1.0,
        )
        .unwrap();
        assert_eq!(flag, ReconstructionFlag::TangentFallback);
        assert_abs_diff_eq!(gaze.norm(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn reconstruct_rejects_bad_depth() {
        let err = reconstruct_3d(Point2::new(0.0, 0.0), Point2::new(320.0, 240.0), &cam(), 0.0);
        assert!(matches!(err, Err(Error::NonPositiveDepth(_))));
    }

    #[test]
    fn exact_inverse_of_annotation() {
        // annotate_gaze followed by reconstruct_3d with the same depth is
        // the identity on the gaze versor for camera-side gazes. Measured
        // with atan2(‖u×v‖, u·v): the arccos form bottoms out around
        // 1.2e-6 degrees from a single ulp of cosine rounding.
        use crate::dataset::tests_support::frame_at_pixels;
        let frame = frame_at_pixels(&[(250.0, 300.0), (400.0, 180.0), (330.0, 270.0)]);
        for target in [
            Point3::new(0.1, 0.35, 0.60),
            Point3::new(-0.25, 0.40, 0.55),
            Point3::new(0.0, 0.0, 0.0001),
        ] {
            let ann = annotate_gaze(&frame, target, 1.0).unwrap();
            let (gaze, flag) =
                reconstruct_3d(ann.gaze2d, ann.centroid_px, &frame.camera, 1.0).unwrap();
            assert_eq!(flag, ReconstructionFlag::Ok);
            let err = gaze.cross(ann.gaze3d).norm().atan2(gaze.dot(ann.gaze3d)).to_degrees();
            assert!(err.abs() < 1e-6, "angular error {err}");
        }
    }

    #[test]
    fn confusion_arithmetic_hand_case() {
        use GazeClass::*;
        // Two-class reduction of the spec fixture [[2,1],[0,3]]:
        // truths: 3× eye_contact (2 correct, 1 → other), 3× other correct.
        let truths = vec![EyeContact, EyeContact, EyeContact, Other, Other, Other];
        let preds = vec![EyeContact, EyeContact, Other, Other, Other, Other];
        let m = evaluate_classifier(&preds, &truths).unwrap();
        assert_abs_diff_eq!(m.accuracy, 5.0 / 6.0, epsilon = 1e-12);
        let (p0, r0, _) = m.per_class[EyeContact.index()];
        assert_abs_diff_eq!(p0, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r0, 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(m.confusion[0][0], 2);
        assert_eq!(m.confusion[0][1], 1);
        assert_eq!(m.confusion[1][1], 3);
        // Two classes absent from truth are flagged.
        assert_eq!(m.warnings.len(), 2);
    }

    #[test]
    fn perfect_and_degenerate_predictors() {
        use GazeClass::*;
        let truths: Vec<GazeClass> = GazeClass::ALL.repeat(5);
        let m = evaluate_classifier(&truths, &truths).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);

        let all_ws = vec![Workspace; truths.len()];
        let m = evaluate_classifier(&all_ws, &truths).unwrap();
        assert_abs_diff_eq!(m.accuracy, 0.25, epsilon = 1e-12);

        assert!(matches!(
            evaluate_classifier(&truths[..3], &truths),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn aggregation_with_single_split_has_zero_std() {
        let truths: Vec<GazeClass> = GazeClass::ALL.repeat(3);
        let classifier = evaluate_classifier(&truths, &truths).unwrap();
        let split = SplitMetrics {
            classifier,
            workspace_fraction: 1.0,
            gaze_rmse_2d: Some(2.5),
            angular_error_mean_deg: Some(4.0),
            angular_error_std_deg: Some(0.5),
            failures: 0,
        };
        let report = aggregate_splits(vec![split]);
        assert_eq!(report.accuracy.std, 0.0);
        assert_eq!(report.gaze_rmse_2d_px.unwrap().std, 0.0);
        let rows = report.rows();
        assert_eq!(rows.len(), 7);
        assert_eq!(rows[0].0, "accuracy");
        assert_eq!(rows[6].0, "gaze_angular_error_3d_deg");
    }
}
