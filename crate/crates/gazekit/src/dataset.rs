//! Dataset schema, JSONL ingestion/serialization, participant-wise
//! splitting and ground-truth gaze annotation.
//!
//! The on-disk format is line-delimited JSON, one frame per line:
//!
//! ```json
//! {"frame_id":"f0001","subject_id":"s03",
//!  "camera":{"fx":600.0,"fy":600.0,"cx":320.0,"cy":240.0,"width":640,"height":480},
//!  "keypoints":[{"name":"nose","x":312.4,"y":228.1,"k":0.93}, ...19 total...],
//!  "label":"workspace","target_ccs":[0.05,0.42,0.61],"centroid_depth":0.97}
//! ```
//!
//! `label`, `target_ccs` and `centroid_depth` are optional. Unknown fields
//! are preserved through a read/write round-trip; strict ingestion rejects
//! them instead.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject, project, CameraIntrinsics, Point2, Point3};

/// Number of facial keypoints every frame carries.
pub const KEYPOINT_COUNT: usize = 19;

/// Indices of the 16 eye keypoints within the canonical order.
pub const EYE_KEYPOINT_RANGE: std::ops::Range<usize> = 3..19;

/// Length of the gaze versor used for annotation and 3D reconstruction,
/// meters (10 cm).
pub const GAZE_VERSOR_LENGTH: f64 = 0.1;

/// Canonical keypoint order: nose, the two ears, then eight points per eye
/// with the pupil last in each eye block.
pub const CANONICAL_KEYPOINT_NAMES: [&str; KEYPOINT_COUNT] = [
    "nose", "ear_l", "ear_r", "eye_l_0", "eye_l_1", "eye_l_2", "eye_l_3", "eye_l_4", "eye_l_5",
    "eye_l_6", "eye_l_7", "eye_r_0", "eye_r_1", "eye_r_2", "eye_r_3", "eye_r_4", "eye_r_5",
    "eye_r_6", "eye_r_7",
];

/// Index of the left pupil (`eye_l_7`) in the canonical order.
pub const LEFT_PUPIL: usize = 10;
/// Index of the right pupil (`eye_r_7`) in the canonical order.
pub const RIGHT_PUPIL: usize = 18;

/// The four gaze classes, in the fixed order used for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeClass {
    EyeContact,
    Other,
    Icub,
    Workspace,
}

impl GazeClass {
    pub const ALL: [GazeClass; 4] = [
        GazeClass::EyeContact,
        GazeClass::Other,
        GazeClass::Icub,
        GazeClass::Workspace,
    ];

    /// Position in the fixed class order.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            GazeClass::EyeContact => "eye_contact",
            GazeClass::Other => "other",
            GazeClass::Icub => "icub",
            GazeClass::Workspace => "workspace",
        }
    }
}

/// One detected facial landmark: pixel position plus detector confidence.
/// A keypoint with `k == 0` is missing; its coordinates carry no meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub k: f64,
}

impl Keypoint {
    pub fn is_valid(&self) -> bool {
        self.k > 0.0
    }
}

/// A single annotated frame: 19 facial keypoints with confidences, camera
/// metadata and optional ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFrame {
    pub frame_id: String,
    pub subject_id: String,
    pub camera: CameraIntrinsics,
    pub keypoints: Vec<Keypoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<GazeClass>,
    /// Ground-truth gaze target in camera coordinates, meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_ccs: Option<Point3>,
    /// Measured depth of the face centroid, meters, when a depth camera was
    /// available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid_depth: Option<f64>,
    /// Fields not part of the schema, preserved across a round-trip.
    #[serde(flatten, skip_serializing_if = "serde_json::Map::is_empty", default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl KeypointFrame {
    /// Checks the schema invariants: 19 keypoints in canonical order,
    /// confidences in [0, 1], finite coordinates on valid keypoints.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.keypoints.len() != KEYPOINT_COUNT {
            return Err(format!(
                "expected {KEYPOINT_COUNT} keypoints, got {}",
                self.keypoints.len()
            ));
        }
        for (kp, expected) in self.keypoints.iter().zip(CANONICAL_KEYPOINT_NAMES) {
            if kp.name != expected {
                return Err(format!(
                    "keypoint name {:?} out of order, expected {:?}",
                    kp.name, expected
                ));
            }
            if !(0.0..=1.0).contains(&kp.k) || !kp.k.is_finite() {
                return Err(format!("confidence {} for {:?} outside [0, 1]", kp.k, kp.name));
            }
            if kp.is_valid() && !(kp.x.is_finite() && kp.y.is_finite()) {
                return Err(format!("non-finite coordinates on valid keypoint {:?}", kp.name));
            }
        }
        Ok(())
    }
}

/// Ground-truth gaze annotation derived from a frame and its target point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeAnnotation {
    /// 2D gaze vector in pixels: projected versor tip minus centroid.
    pub gaze2d: Point2,
    /// Face centroid on the image plane, pixels.
    pub centroid_px: Point2,
    /// Unit gaze direction in camera coordinates.
    pub gaze3d: Point3,
    /// The annotated target, camera coordinates.
    pub target_ccs: Point3,
}

/// Ingestion-side table mapping an external pose estimator's flat keypoint
/// indices onto the canonical 19-keypoint order.
///
/// The default targets a full-body-plus-face layout in the style of
/// multi-person pose estimators: nose and ears from the body block
/// (indices 0, 18, 17), six eye-contour points, a pupil and the inner brow
/// point per eye from the face block starting at offset 25. Which indices
/// a given deployment should use depends on its estimator; override the
/// table rather than re-ordering upstream data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeypointMapping {
    /// Source index for each canonical keypoint, in canonical order.
    pub source_indices: [usize; KEYPOINT_COUNT],
}

impl Default for KeypointMapping {
    fn default() -> Self {
        const FACE: usize = 25; // face block offset in the flat layout
        KeypointMapping {
            source_indices: [
                0,          // nose (body)
                18,         // left ear (body)
                17,         // right ear (body)
                // Left eye: contour 42..=47, pupil 69, inner brow 22.
                FACE + 42,
                FACE + 43,
                FACE + 44,
                FACE + 45,
                FACE + 46,
                FACE + 47,
                FACE + 22,
                FACE + 69,  // left pupil
                // Right eye: contour 36..=41, pupil 68, inner brow 21.
                FACE + 36,
                FACE + 37,
                FACE + 38,
                FACE + 39,
                FACE + 40,
                FACE + 41,
                FACE + 21,
                FACE + 68,  // right pupil
            ],
        }
    }
}

/// Converts a flat `(x, y, k)` keypoint array from an external estimator
/// into the canonical 19-keypoint list.
pub fn map_raw_keypoints(
    raw: &[(f64, f64, f64)],
    mapping: &KeypointMapping,
) -> Result<Vec<Keypoint>> {
    let mut out = Vec::with_capacity(KEYPOINT_COUNT);
    for (name, &src) in CANONICAL_KEYPOINT_NAMES.iter().zip(&mapping.source_indices) {
        let (x, y, k) = *raw.get(src).ok_or_else(|| Error::MalformedRecord {
            line: 0,
            message: format!(
                "keypoint source index {src} for {name:?} outside the {}-point input",
                raw.len()
            ),
        })?;
        if !(0.0..=1.0).contains(&k) {
            return Err(Error::MalformedRecord {
                line: 0,
                message: format!("confidence {k} for {name:?} outside [0, 1]"),
            });
        }
        out.push(Keypoint {
            name: name.to_string(),
            x: if k > 0.0 { x } else { 0.0 },
            y: if k > 0.0 { y } else { 0.0 },
            k,
        });
    }
    Ok(out)
}

/// Mean pixel position of the keypoints with confidence > 0.
pub fn face_centroid(frame: &KeypointFrame) -> Result<Point2> {
    let mut sum = Point2::default();
    let mut n = 0usize;
    for kp in frame.keypoints.iter().filter(|kp| kp.is_valid()) {
        sum = sum + Point2::new(kp.x, kp.y);
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidKeypoints);
    }
    Ok(sum / n as f64)
}

/// Builds the ground-truth annotation for a frame gazing at `target_ccs`.
///
/// The face centroid is lifted to 3D at `depth`, the gaze direction is the
/// versor from that point to the target, and the 2D gaze vector is the
/// image-plane displacement of the 10 cm versor tip.
pub fn annotate_gaze(
    frame: &KeypointFrame,
    target_ccs: Point3,
    depth: f64,
) -> Result<GazeAnnotation> {
    let centroid_px = face_centroid(frame)?;
    let centroid3d = backproject(centroid_px, depth, &frame.camera)?;
    let offset = target_ccs - centroid3d;
    if offset.norm() < 1e-6 {
        return Err(Error::DegenerateTarget);
    }
    let gaze3d = offset.normalized()?;
    let tip = centroid3d + gaze3d * GAZE_VERSOR_LENGTH;
    let tip_px = project(tip, &frame.camera)?;
    Ok(GazeAnnotation {
        gaze2d: tip_px - centroid_px,
        centroid_px,
        gaze3d,
        target_ccs,
    })
}

/// One train/test partition of the subject set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}

impl SubjectSplit {
    /// Partitions frames by subject membership, preserving input order.
    pub fn partition<'a>(
        &self,
        frames: &'a [KeypointFrame],
    ) -> (Vec<&'a KeypointFrame>, Vec<&'a KeypointFrame>) {
        let train: BTreeSet<&str> = self.train_subjects.iter().map(String::as_str).collect();
        let mut train_frames = Vec::new();
        let mut test_frames = Vec::new();
        for frame in frames {
            if train.contains(frame.subject_id.as_str()) {
                train_frames.push(frame);
            } else {
                test_frames.push(frame);
            }
        }
        (train_frames, test_frames)
    }
}

/// `k` random train/test partitions of the subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub k: usize,
    pub splits: Vec<SubjectSplit>,
}

/// Draws `k` independent subject-wise splits at the given train:test ratio.
///
/// Subjects never appear on both sides of a split. Deterministic for a
/// given seed: subjects are sorted before shuffling.
pub fn split_by_subject(
    frames: &[KeypointFrame],
    k: usize,
    ratio: (u32, u32),
    seed: u64,
) -> Result<SplitPlan> {
    let subjects: BTreeSet<&str> = frames.iter().map(|f| f.subject_id.as_str()).collect();
    let mut subjects: Vec<String> = subjects.into_iter().map(String::from).collect();
    if subjects.len() < 2 {
        return Err(Error::TooFewSubjects(subjects.len()));
    }
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(Error::ConfigError(format!(
            "split ratio {}:{} must have both sides positive",
            ratio.0, ratio.1
        )));
    }
    let n = subjects.len();
    let frac = ratio.0 as f64 / (ratio.0 + ratio.1) as f64;
    let n_train = ((n as f64 * frac).round() as usize).clamp(1, n - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Vec::with_capacity(k);
    for _ in 0..k {
        subjects.shuffle(&mut rng);
        let mut train: Vec<String> = subjects[..n_train].to_vec();
        let mut test: Vec<String> = subjects[n_train..].to_vec();
        train.sort();
        test.sort();
        splits.push(SubjectSplit {
            train_subjects: train,
            test_subjects: test,
        });
    }
    Ok(SplitPlan { k, splits })
}

/// Reads a JSONL dataset. In strict mode, records carrying fields outside
/// the schema are rejected.
pub fn read_jsonl(path: &Path, strict: bool) -> Result<Vec<KeypointFrame>> {
    let file = File::open(path)?;
    read_jsonl_from(BufReader::new(file), strict)
}

/// Reads frames from any buffered reader; line numbers are 1-based in
/// errors.
pub fn read_jsonl_from<R: BufRead>(reader: R, strict: bool) -> Result<Vec<KeypointFrame>> {
    let mut frames = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let frame: KeypointFrame =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: line_no,
                message: e.to_string(),
            })?;
        if frame.keypoints.len() != KEYPOINT_COUNT {
            return Err(Error::WrongKeypointCount {
                line: line_no,
                expected: KEYPOINT_COUNT,
                found: frame.keypoints.len(),
            });
        }
        frame.validate().map_err(|message| Error::MalformedRecord {
            line: line_no,
            message,
        })?;
        if strict && !frame.extra.is_empty() {
            let keys: Vec<&str> = frame.extra.keys().map(String::as_str).collect();
            return Err(Error::MalformedRecord {
                line: line_no,
                message: format!("unknown fields in strict mode: {}", keys.join(", ")),
            });
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Writes frames as JSONL, one canonical JSON object per line.
pub fn write_jsonl(path: &Path, frames: &[KeypointFrame]) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    write_jsonl_to(&mut writer, frames)?;
    writer.flush()?;
    Ok(())
}

pub fn write_jsonl_to<W: Write>(writer: &mut W, frames: &[KeypointFrame]) -> Result<()> {
    for frame in frames {
        serde_json::to_writer(&mut *writer, frame)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    use tests_support::test_cam;

    /// Frame with all 19 keypoints valid at the given positions; positions
    /// cycle if fewer than 19 are supplied.
    pub(crate) fn frame_with_points(points: &[(f64, f64, f64)]) -> KeypointFrame {
        let keypoints = CANONICAL_KEYPOINT_NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let (x, y, k) = points[i % points.len()];
                Keypoint {
                    name: name.to_string(),
                    x,
                    y,
                    k,
                }
            })
            .collect();
        KeypointFrame {
            frame_id: "f0".into(),
            subject_id: "s0".into(),
            camera: test_cam(),
            keypoints,
            label: None,
            target_ccs: None,
            centroid_depth: None,
            extra: serde_json::Map::new(),
        }
    }

    #[test]
    fn centroid_of_three_valid_points() {
        let mut frame = frame_with_points(&[(0.0, 0.0, 0.0)]);
        frame.keypoints[0] = Keypoint {
            name: "nose".into(),
            x: 0.0,
            y: 0.0,
            k: 1.0,
        };
        frame.keypoints[1].x = 2.0;
        frame.keypoints[1].y = 0.0;
        frame.keypoints[1].k = 0.8;
        frame.keypoints[2].x = 1.0;
        frame.keypoints[2].y = 3.0;
        frame.keypoints[2].k = 0.5;
        assert_eq!(face_centroid(&frame).unwrap(), Point2::new(1.0, 1.0));
    }

    #[test]
    fn centroid_single_valid_point() {
        let mut frame = frame_with_points(&[(99.0, 99.0, 0.0)]);
        frame.keypoints[5].x = 5.0;
        frame.keypoints[5].y = 7.0;
        frame.keypoints[5].k = 0.3;
        assert_eq!(face_centroid(&frame).unwrap(), Point2::new(5.0, 7.0));
    }

    #[test]
    fn centroid_all_invalid_errors() {
        let frame = frame_with_points(&[(1.0, 2.0, 0.0)]);
        assert!(matches!(face_centroid(&frame), Err(Error::NoValidKeypoints)));
    }

    #[test]
    fn annotate_axial_geometry() {
        // Centroid at the principal point, target straight down the optical
        // axis toward the camera: the versor tip stays on the axis.
        let frame = frame_with_points(&[(320.0, 240.0, 1.0)]);
        let ann = annotate_gaze(&frame, Point3::new(0.0, 0.0, 0.5), 1.0).unwrap();
        assert_abs_diff_eq!(ann.gaze3d.z, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ann.gaze2d.norm(), 0.0, epsilon = 1e-9);
        assert_eq!(ann.centroid_px, Point2::new(320.0, 240.0));
    }

    #[test]
    fn annotate_degenerate_target() {
        let frame = frame_with_points(&[(320.0, 240.0, 1.0)]);
        // The centroid backprojects to (0, 0, 1).
        let err = annotate_gaze(&frame, Point3::new(0.0, 0.0, 1.0), 1.0);
        assert!(matches!(err, Err(Error::DegenerateTarget)));
    }

    #[test]
    fn annotation_invariant_gaze2d_matches_projection() {
        let frame = frame_with_points(&[(250.0, 300.0, 0.9), (400.0, 180.0, 0.7)]);
        let target = Point3::new(0.1, 0.35, 0.6);
        let depth = 0.95;
        let ann = annotate_gaze(&frame, target, depth).unwrap();
        assert_abs_diff_eq!(ann.gaze3d.norm(), 1.0, epsilon = 1e-9);

        let centroid3d = backproject(ann.centroid_px, depth, &frame.camera).unwrap();
        let tip = centroid3d + ann.gaze3d * GAZE_VERSOR_LENGTH;
        let expected = project(tip, &frame.camera).unwrap() - ann.centroid_px;
        assert_abs_diff_eq!((ann.gaze2d - expected).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn split_24_subjects_19_to_5() {
        let frames: Vec<KeypointFrame> = (0..24)
            .map(|i| {
                let mut f = frame_with_points(&[(100.0, 100.0, 1.0)]);
                f.subject_id = format!("s{i:02}");
                f
            })
            .collect();
        let plan = split_by_subject(&frames, 5, (19, 5), 7).unwrap();
        assert_eq!(plan.splits.len(), 5);
        for split in &plan.splits {
            assert_eq!(split.train_subjects.len(), 19);
            assert_eq!(split.test_subjects.len(), 5);
            let train: BTreeSet<_> = split.train_subjects.iter().collect();
            let test: BTreeSet<_> = split.test_subjects.iter().collect();
            assert!(train.is_disjoint(&test));
            assert_eq!(train.len() + test.len(), 24);
        }
    }

    #[test]
    fn split_two_subjects_one_each() {
        let frames: Vec<KeypointFrame> = (0..2)
            .map(|i| {
                let mut f = frame_with_points(&[(100.0, 100.0, 1.0)]);
                f.subject_id = format!("s{i}");
                f
            })
            .collect();
        let plan = split_by_subject(&frames, 3, (1, 1), 0).unwrap();
        for split in &plan.splits {
            assert_eq!(split.train_subjects.len(), 1);
            assert_eq!(split.test_subjects.len(), 1);
        }
    }

    #[test]
    fn split_deterministic_under_seed() {
        let frames: Vec<KeypointFrame> = (0..10)
            .map(|i| {
                let mut f = frame_with_points(&[(100.0, 100.0, 1.0)]);
                f.subject_id = format!("s{i}");
                f
            })
            .collect();
        let a = split_by_subject(&frames, 5, (7, 3), 42).unwrap();
        let b = split_by_subject(&frames, 5, (7, 3), 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_too_few_subjects() {
        let frames = vec![frame_with_points(&[(1.0, 1.0, 1.0)])];
        assert!(matches!(
            split_by_subject(&frames, 5, (19, 5), 0),
            Err(Error::TooFewSubjects(1))
        ));
    }

    #[test]
    fn jsonl_wrong_keypoint_count() {
        let mut frame = frame_with_points(&[(1.0, 2.0, 0.5)]);
        frame.keypoints.pop();
        let mut json = serde_json::to_string(&frame).unwrap();
        json.push('\n');
        let err = read_jsonl_from(json.as_bytes(), false);
        assert!(matches!(
            err,
            Err(Error::WrongKeypointCount {
                line: 1,
                found: 18,
                ..
            })
        ));
    }

    #[test]
    fn jsonl_empty_file() {
        let frames = read_jsonl_from(&b""[..], true).unwrap();
        assert!(frames.is_empty());
    }

    #[test]
    fn jsonl_unknown_fields_preserved_then_rejected_in_strict() {
        let mut frame = frame_with_points(&[(1.0, 2.0, 0.5)]);
        frame
            .extra
            .insert("rig".into(), serde_json::json!({"note": "external"}));
        let mut json = serde_json::to_string(&frame).unwrap();
        json.push('\n');

        let lenient = read_jsonl_from(json.as_bytes(), false).unwrap();
        assert_eq!(lenient[0].extra["rig"]["note"], "external");
        // Round-trip keeps the unknown field.
        let mut out = Vec::new();
        write_jsonl_to(&mut out, &lenient).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().trim(), json.trim());

        assert!(matches!(
            read_jsonl_from(json.as_bytes(), true),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn jsonl_malformed_line_number() {
        let mut frame = frame_with_points(&[(1.0, 2.0, 0.5)]);
        frame.label = Some(GazeClass::Workspace);
        let good = serde_json::to_string(&frame).unwrap();
        let text = format!("{good}\n{{not json}}\n");
        match read_jsonl_from(text.as_bytes(), false) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected MalformedRecord, got {other:?}"),
        }
    }

    #[test]
    fn raw_keypoint_mapping_reorders_and_validates() {
        let mapping = KeypointMapping::default();
        let mut raw = vec![(0.0, 0.0, 0.0); 135];
        for (canon, &src) in mapping.source_indices.iter().enumerate() {
            raw[src] = (canon as f64, canon as f64 + 100.0, 0.9);
        }
        let keypoints = map_raw_keypoints(&raw, &mapping).unwrap();
        assert_eq!(keypoints.len(), KEYPOINT_COUNT);
        for (canon, kp) in keypoints.iter().enumerate() {
            assert_eq!(kp.name, CANONICAL_KEYPOINT_NAMES[canon]);
            assert_eq!(kp.x, canon as f64);
        }
        // Too-short input and bad confidences are rejected.
        assert!(map_raw_keypoints(&raw[..50], &mapping).is_err());
        raw[0].2 = 1.5;
        assert!(map_raw_keypoints(&raw, &mapping).is_err());
    }

    #[test]
    fn class_order_is_fixed() {
        assert_eq!(GazeClass::EyeContact.index(), 0);
        assert_eq!(GazeClass::Other.index(), 1);
        assert_eq!(GazeClass::Icub.index(), 2);
        assert_eq!(GazeClass::Workspace.index(), 3);
        assert_eq!(
            serde_json::to_string(&GazeClass::EyeContact).unwrap(),
            "\"eye_contact\""
        );
    }
}
