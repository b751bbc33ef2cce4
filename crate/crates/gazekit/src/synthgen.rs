//! Synthetic table-top scene generator.
//!
//! Produces labelled keypoint frames with exact ground truth: a parametric
//! head placed about a meter in front of the camera, a marker board on the
//! table below, five robot-body marker points near the camera, and an
//! eyeball model that turns the pupils toward the per-class gaze target.
//! Projected keypoints get Gaussian pixel noise, and each keypoint's
//! confidence decays with the noise magnitude actually drawn, so the
//! confidence channel carries a learnable reliability signal.
//!
//! The head geometry is a minimal stand-in for a real face seen by a pose
//! estimator — just enough structure that gaze is recoverable from the
//! keypoints — and makes no claim of anatomical fidelity.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    GazeClass, Keypoint, KeypointFrame, CANONICAL_KEYPOINT_NAMES, KEYPOINT_COUNT, LEFT_PUPIL,
    RIGHT_PUPIL,
};
use crate::error::{Error, Result};
use crate::features::build_feature;
use crate::geometry::{
    board_marker_point, project, rodrigues, BoardLayout, CameraIntrinsics, Mat3, Point2, Point3,
    Pose,
};

/// Parametric head: 19 canonical face points in a head-local frame (x
/// right, y down, z toward the back of the head; the face looks along -z),
/// plus the eyeball model driving the pupils.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    /// Local positions in canonical keypoint order; the pupil entries hold
    /// the rest position (eyeball front).
    pub points: Vec<Point3>,
    /// Centres of the two eye-contour ellipses.
    pub eye_centers: [Point3; 2],
    /// Left and right eyeball centres.
    pub eyeball_centers: [Point3; 2],
    pub eyeball_radius: f64,
}

impl Default for HeadModel {
    fn default() -> Self {
        let eye_l = Point3::new(-0.032, -0.028, -0.090);
        let eye_r = Point3::new(0.032, -0.028, -0.090);
        let eyeball_l = Point3::new(-0.032, -0.028, -0.078);
        let eyeball_r = Point3::new(0.032, -0.028, -0.078);
        let radius = 0.015;

        let mut points = vec![Point3::ZERO; KEYPOINT_COUNT];
        points[0] = Point3::new(0.0, 0.020, -0.110); // nose
        points[1] = Point3::new(-0.078, 0.005, -0.010); // ear_l
        points[2] = Point3::new(0.078, 0.005, -0.010); // ear_r
        for (block, center) in [(3usize, eye_l), (11usize, eye_r)] {
            // Seven contour points on an ellipse around the eye opening.
            for i in 0..7 {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / 7.0;
                points[block + i] =
                    center + Point3::new(0.016 * angle.cos(), 0.008 * angle.sin(), 0.0);
            }
        }
        // Rest pupils at the eyeball front.
        points[LEFT_PUPIL] = eyeball_l + Point3::new(0.0, 0.0, -radius);
        points[RIGHT_PUPIL] = eyeball_r + Point3::new(0.0, 0.0, -radius);

        HeadModel {
            points,
            eye_centers: [eye_l, eye_r],
            eyeball_centers: [eyeball_l, eyeball_r],
            eyeball_radius: radius,
        }
    }
}

/// Scene and sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub camera: CameraIntrinsics,
    pub board_layout: BoardLayout,
    /// Board pose in camera coordinates; the default lays the board flat on
    /// the table below the camera, z out of the plane pointing up.
    pub board_pose: Pose,
    /// Robot-body marker points in camera coordinates (shoulders, forearms,
    /// chest).
    pub icub_markers: Vec<Point3>,
    /// Samples per class, in the fixed class order
    /// (eye_contact, other, icub, workspace).
    pub samples_per_class: [usize; 4],
    pub num_subjects: usize,
    /// Standard deviation of the Gaussian pixel noise.
    pub pixel_noise_std: f64,
    /// Confidence decay constant: `k = exp(-noise² / tau)`.
    pub confidence_tau: f64,
    /// Probability that a frame loses both eye regions (confidences zeroed).
    pub eye_dropout_prob: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            camera: CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480)
                .expect("default intrinsics are valid"),
            board_layout: BoardLayout::default(),
            board_pose: default_board_pose(),
            icub_markers: vec![
                Point3::new(0.0, 0.25, 0.08),    // chest
                Point3::new(-0.18, 0.16, 0.10),  // left shoulder
                Point3::new(0.18, 0.16, 0.10),   // right shoulder
                Point3::new(-0.22, 0.35, 0.25),  // left forearm
                Point3::new(0.22, 0.35, 0.25),   // right forearm
            ],
            samples_per_class: [362, 362, 362, 362],
            num_subjects: 24,
            pixel_noise_std: 1.0,
            confidence_tau: 12.0,
            eye_dropout_prob: 0.08,
            seed: 0,
        }
    }
}

/// Board lying flat on the table: +x mirrored across the image, +y toward
/// the camera, z up; the origin marker ends up slightly left of centre at
/// table height. The far marker row stays nearer to the camera than any
/// face, so every workspace gaze points into the camera-side hemisphere
/// and the sphere reconstruction always takes the near intersection.
pub fn default_board_pose() -> Pose {
    let half_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let r = Point3::new(0.0, half_sqrt2, -half_sqrt2) * std::f64::consts::PI;
    Pose::new(r, Point3::new(0.14, 0.45, 0.70))
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        self.board_layout.validate()?;
        if self.num_subjects == 0 {
            return Err(Error::ConfigError("num_subjects must be positive".into()));
        }
        if self.pixel_noise_std < 0.0 {
            return Err(Error::ConfigError("pixel_noise_std must be >= 0".into()));
        }
        if self.confidence_tau <= 0.0 {
            return Err(Error::ConfigError("confidence_tau must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eye_dropout_prob) {
            return Err(Error::ConfigError("eye_dropout_prob must lie in [0, 1]".into()));
        }
        if self.icub_markers.is_empty() && self.samples_per_class[GazeClass::Icub.index()] > 0 {
            return Err(Error::ConfigError(
                "icub samples requested but no icub markers configured".into(),
            ));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.samples_per_class.iter().sum()
    }
}

/// Per-subject appearance: a global size factor, smooth face proportions
/// (face length, eye spacing) and small per-keypoint shape offsets. The
/// proportion factors survive feature normalization and keep a subject's
/// frames identifiable as a group.
#[derive(Debug, Clone)]
pub struct SubjectParams {
    pub id: String,
    pub scale: f64,
    /// Vertical face-proportion factor applied to all local y coordinates.
    pub face_length: f64,
    /// Horizontal factor applied to the eye blocks only (eye spacing
    /// relative to the ears).
    pub eye_span: f64,
    /// How well the detector tracks this subject; scales every confidence.
    pub detector_quality: f64,
    pub shape_offsets: Vec<Point3>,
}

impl SubjectParams {
    /// Applies the subject's proportions to a head-local point.
    fn distort(&self, local: Point3, is_eye_block: bool) -> Point3 {
        Point3::new(
            local.x * if is_eye_block { self.eye_span } else { 1.0 },
            local.y * self.face_length,
            local.z,
        )
    }
}

fn draw_subjects<R: Rng>(count: usize, rng: &mut R) -> Vec<SubjectParams> {
    let shape = Normal::new(0.0, 0.0015).unwrap();
    (0..count)
        .map(|i| SubjectParams {
            id: format!("s{i:02}"),
            scale: rng.random_range(0.92..1.08),
            face_length: rng.random_range(0.95..1.05),
            eye_span: rng.random_range(0.95..1.05),
            detector_quality: rng.random_range(0.85..1.0),
            shape_offsets: (0..KEYPOINT_COUNT)
                .map(|_| {
                    Point3::new(shape.sample(rng), shape.sample(rng), shape.sample(rng))
                })
                .collect(),
        })
        .collect()
}

/// How far the lids close per unit of downward gaze, as a fraction of the
/// vertical eye opening.
const LID_RESPONSE: f64 = 0.45;

/// Exact (noiseless) projection of one posed head gazing at `target`:
/// the 19 pixel positions and the mean keypoint depth.
///
/// Pupils sit on the eyeball sphere toward the target; the eye-contour
/// ellipses narrow vertically as the gaze drops, mimicking the lids
/// following a downward gaze.
pub(crate) fn render_head(
    head: &HeadModel,
    subject: &SubjectParams,
    rotation: Mat3,
    position: Point3,
    target: Point3,
    cam: &CameraIntrinsics,
) -> Result<(Vec<Point2>, f64)> {
    // Per-eye gaze direction in the head frame, and the lid factor it
    // implies (+y is chin-ward).
    let mut lids = [1.0; 2];
    for eye in 0..2 {
        let pupil_idx = if eye == 0 { LEFT_PUPIL } else { RIGHT_PUPIL };
        let local = subject.distort(head.eyeball_centers[eye], true)
            + subject.shape_offsets[pupil_idx];
        let eyeball_ccs = position + rotation.mul_vec(local * subject.scale);
        let gaze_local = rotation.transpose().mul_vec((target - eyeball_ccs).normalized()?);
        lids[eye] = 1.0 - LID_RESPONSE * gaze_local.y.clamp(0.0, 1.0);
    }

    let mut pixels = Vec::with_capacity(KEYPOINT_COUNT);
    let mut depth_sum = 0.0;
    for idx in 0..KEYPOINT_COUNT {
        let is_eye_block = crate::dataset::EYE_KEYPOINT_RANGE.contains(&idx);
        let ccs = if idx == LEFT_PUPIL || idx == RIGHT_PUPIL {
            let eye = usize::from(idx == RIGHT_PUPIL);
            let local = subject.distort(head.eyeball_centers[eye], true)
                + subject.shape_offsets[idx];
            let center_ccs = position + rotation.mul_vec(local * subject.scale);
            let dir = (target - center_ccs).normalized()?;
            center_ccs + dir * (head.eyeball_radius * subject.scale)
        } else {
            let base = if is_eye_block {
                let eye = usize::from(idx >= 11);
                let center = head.eye_centers[eye];
                let offset = head.points[idx] - center;
                subject.distort(center, true)
                    + Point3::new(offset.x, offset.y * lids[eye], offset.z)
            } else {
                subject.distort(head.points[idx], false)
            };
            let local = base + subject.shape_offsets[idx];
            position + rotation.mul_vec(local * subject.scale)
        };
        depth_sum += ccs.z;
        pixels.push(project(ccs, cam)?);
    }
    Ok((pixels, depth_sum / KEYPOINT_COUNT as f64))
}

/// Head orientation: face the camera, then rotate a fraction of the way
/// toward the gaze target, then apply a small local jitter.
fn head_rotation(position: Point3, target: Point3, coupling: f64, jitter: Point3) -> Mat3 {
    let forward = (-position).normalized().expect("head is away from the camera");
    // Local -z looks along `forward`, local +y stays as downward as possible.
    let z_h = -forward;
    let down = Point3::new(0.0, 1.0, 0.0);
    let y_h = (down - z_h * down.dot(z_h)).normalized().unwrap_or(down);
    let x_h = y_h.cross(z_h);
    let base = Mat3::from_columns(x_h, y_h, z_h);

    let gaze_dir = (target - position)
        .normalized()
        .unwrap_or(forward);
    let cross = forward.cross(gaze_dir);
    let align = if cross.norm() < 1e-12 {
        Mat3::IDENTITY
    } else {
        let angle = forward.dot(gaze_dir).clamp(-1.0, 1.0).acos();
        let axis = cross.normalized().unwrap();
        rodrigues(axis * (coupling * angle))
    };
    align.mul_mat(base).mul_mat(rodrigues(jitter))
}

/// Generates a labelled synthetic dataset; byte-identical for a given
/// config.
pub fn generate_dataset(cfg: &SceneConfig) -> Result<Vec<KeypointFrame>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let head = HeadModel::default();
    let subjects = draw_subjects(cfg.num_subjects, &mut rng);

    let mut labels = Vec::with_capacity(cfg.total_samples());
    for class in GazeClass::ALL {
        labels.extend(std::iter::repeat_n(class, cfg.samples_per_class[class.index()]));
    }
    use rand::seq::SliceRandom;
    labels.shuffle(&mut rng);

    let pos_x: Normal<f64> = Normal::new(0.0, 0.06).unwrap();
    let pos_y: Normal<f64> = Normal::new(0.02, 0.035).unwrap();
    let pos_z: Normal<f64> = Normal::new(1.0, 0.06).unwrap();
    let pixel_noise = Normal::new(0.0, cfg.pixel_noise_std).unwrap();
    let jitter_narrow = Normal::new(0.0, 0.05).unwrap();
    let jitter_wide = Normal::new(0.0, 0.10).unwrap();

    let mut frames = Vec::with_capacity(labels.len());
    for (i, class) in labels.into_iter().enumerate() {
        let subject = &subjects[i % subjects.len()];
        let position = Point3::new(
            pos_x.sample(&mut rng).clamp(-0.20, 0.20),
            pos_y.sample(&mut rng).clamp(-0.12, 0.12),
            pos_z.sample(&mut rng).clamp(0.85, 1.20),
        );
        let target = match class {
            GazeClass::EyeContact => Point3::ZERO,
            GazeClass::Icub => cfg.icub_markers[rng.random_range(0..cfg.icub_markers.len())],
            GazeClass::Workspace => {
                let ids = cfg.board_layout.marker_ids();
                let id = ids[rng.random_range(0..ids.len())];
                cfg.board_pose.apply(board_marker_point(&cfg.board_layout, id)?)
            }
            GazeClass::Other => sample_elsewhere(&mut rng),
        };
        // Eye contact keeps the gaze on the camera while the head wanders;
        // the other classes follow the target with the head to varying
        // degrees — table-top gazes drag the head down with them.
        let (coupling, jitter) = match class {
            GazeClass::EyeContact => (
                0.0,
                Point3::new(
                    jitter_narrow.sample(&mut rng),
                    jitter_wide.sample(&mut rng) * 1.5,
                    jitter_narrow.sample(&mut rng) * 0.5,
                ),
            ),
            GazeClass::Other => (
                rng.random_range(0.3..0.9),
                Point3::new(
                    jitter_wide.sample(&mut rng),
                    jitter_wide.sample(&mut rng),
                    jitter_narrow.sample(&mut rng) * 0.5,
                ),
            ),
            GazeClass::Workspace => (
                rng.random_range(0.70..0.95),
                Point3::new(
                    jitter_narrow.sample(&mut rng) * 0.7,
                    jitter_narrow.sample(&mut rng) * 0.7,
                    jitter_narrow.sample(&mut rng) * 0.5,
                ),
            ),
            GazeClass::Icub => (
                rng.random_range(0.2..0.7),
                Point3::new(
                    jitter_narrow.sample(&mut rng),
                    jitter_narrow.sample(&mut rng),
                    jitter_narrow.sample(&mut rng) * 0.5,
                ),
            ),
        };
        let rotation = head_rotation(position, target, coupling, jitter);
        let (exact_pixels, mean_depth) =
            render_head(&head, subject, rotation, position, target, &cfg.camera)?;

        let drop_eyes = rng.random_bool(cfg.eye_dropout_prob);
        let keypoints: Vec<Keypoint> = exact_pixels
            .iter()
            .enumerate()
            .map(|(idx, px)| {
                let dx = pixel_noise.sample(&mut rng);
                let dy = pixel_noise.sample(&mut rng);
                let noise_sq = dx * dx + dy * dy;
                let k = (subject.detector_quality * (-noise_sq / cfg.confidence_tau).exp())
                    .clamp(0.0, 1.0);
                if drop_eyes && crate::dataset::EYE_KEYPOINT_RANGE.contains(&idx) {
                    Keypoint {
                        name: CANONICAL_KEYPOINT_NAMES[idx].to_string(),
                        x: 0.0,
                        y: 0.0,
                        k: 0.0,
                    }
                } else {
                    Keypoint {
                        name: CANONICAL_KEYPOINT_NAMES[idx].to_string(),
                        x: px.x + dx,
                        y: px.y + dy,
                        k,
                    }
                }
            })
            .collect();

        frames.push(KeypointFrame {
            frame_id: format!("f{i:05}"),
            subject_id: subject.id.clone(),
            camera: cfg.camera,
            keypoints,
            label: Some(class),
            target_ccs: Some(target),
            centroid_depth: Some(mean_depth),
            extra: serde_json::Map::new(),
        });
    }
    Ok(frames)
}

/// A gaze point well away from the camera, the robot markers and the board:
/// off to a side wall or up toward the ceiling. Deliberately multi-modal —
/// "elsewhere" surrounds the interaction zone.
fn sample_elsewhere<R: Rng>(rng: &mut R) -> Point3 {
    match rng.random_range(0..3u8) {
        0 => Point3::new(
            -1.8,
            rng.random_range(-1.0..0.45),
            rng.random_range(0.1..2.2),
        ),
        1 => Point3::new(
            1.8,
            rng.random_range(-1.0..0.45),
            rng.random_range(0.1..2.2),
        ),
        _ => Point3::new(
            rng.random_range(-1.5..1.5),
            -1.3,
            rng.random_range(0.1..2.0),
        ),
    }
}

/// Nearest-centroid accuracy in feature space: the floor a real classifier
/// has to beat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    /// Frames used to fit the class centroids.
    pub n_fit: usize,
    /// Frames scored.
    pub n_eval: usize,
    /// Frames skipped because no feature could be built.
    pub n_skipped: usize,
    pub accuracy: f64,
    /// Per-class accuracy in the fixed class order.
    pub per_class_accuracy: [f64; 4],
}

/// Fits one centroid per class on `fit` and scores `eval` by nearest
/// centroid. Pass the same slice twice for a resubstitution estimate.
pub fn class_separability_report(
    fit: &[KeypointFrame],
    eval: &[KeypointFrame],
) -> Result<SeparabilityReport> {
    let mut sums = [[0.0f64; crate::features::FEATURE_LEN]; 4];
    let mut counts = [0usize; 4];
    let mut skipped = 0usize;
    for frame in fit {
        let label = frame
            .label
            .ok_or_else(|| Error::MissingLabel(frame.frame_id.clone()))?;
        let Ok(feature) = build_feature(frame) else {
            skipped += 1;
            continue;
        };
        let idx = label.index();
        for (slot, v) in sums[idx].iter_mut().zip(feature.as_slice()) {
            *slot += v;
        }
        counts[idx] += 1;
    }
    if counts.iter().all(|c| *c == 0) {
        return Err(Error::NoValidKeypoints);
    }

    let centroids: Vec<(usize, Vec<f64>)> = (0..4)
        .filter(|idx| counts[*idx] > 0)
        .map(|idx| {
            (
                idx,
                sums[idx].iter().map(|s| s / counts[idx] as f64).collect(),
            )
        })
        .collect();

    let mut correct = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut n_eval = 0usize;
    for frame in eval {
        let label = frame
            .label
            .ok_or_else(|| Error::MissingLabel(frame.frame_id.clone()))?;
        let Ok(feature) = build_feature(frame) else {
            skipped += 1;
            continue;
        };
        let predicted = centroids
            .iter()
            .min_by(|(_, a), (_, b)| {
                let da: f64 = a
                    .iter()
                    .zip(feature.as_slice())
                    .map(|(c, v)| (c - v) * (c - v))
                    .sum();
                let db: f64 = b
                    .iter()
                    .zip(feature.as_slice())
                    .map(|(c, v)| (c - v) * (c - v))
                    .sum();
                da.partial_cmp(&db).unwrap()
            })
            .map(|(idx, _)| *idx)
            .unwrap();
        totals[label.index()] += 1;
        if predicted == label.index() {
            correct[label.index()] += 1;
        }
        n_eval += 1;
    }

    let total_correct: usize = correct.iter().sum();
    let mut per_class_accuracy = [0.0; 4];
    for idx in 0..4 {
        if totals[idx] > 0 {
            per_class_accuracy[idx] = correct[idx] as f64 / totals[idx] as f64;
        }
    }
    Ok(SeparabilityReport {
        n_fit: fit.len(),
        n_eval,
        n_skipped: skipped,
        accuracy: if n_eval == 0 {
            0.0
        } else {
            total_correct as f64 / n_eval as f64
        },
        per_class_accuracy,
    })
}
