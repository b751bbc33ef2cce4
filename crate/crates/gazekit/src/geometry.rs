//! Camera model, rotation representations and multi-frame coordinate
//! transforms.
//!
//! Everything here is plain `f64` math over small fixed-size types. The
//! coordinate systems involved are:
//!
//! * CCS — camera coordinate system: x right, y down, z forward along the
//!   optical axis (pixels grow right/down).
//! * WCS — an external camera's coordinate system used as world frame.
//! * BCS — board coordinate system: origin at the centre of the configured
//!   origin marker, +x along increasing marker columns, +y toward the robot,
//!   z out of the board plane.
//! * REF — a frame centred on a reference marker, axes from that marker's
//!   rotation.
//!
//! All functions are pure and the types are `Copy`; they can be shared
//! freely across threads.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// A 2D point or vector, in pixels on the image plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

/// A 3D point or vector, in meters, in whichever frame the context names.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl Point3 {
    pub const ZERO: Point3 = Point3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, rhs: Point3) -> f64 {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn cross(self, rhs: Point3) -> Point3 {
        Point3::new(
            self.y * rhs.z - self.z * rhs.y,
            self.z * rhs.x - self.x * rhs.z,
            self.x * rhs.y - self.y * rhs.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector with the same direction; `Err(ZeroVector)` for the zero
    /// vector.
    pub fn normalized(self) -> Result<Point3> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(v: [f64; 3]) -> Self {
        Point3::new(v[0], v[1], v[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        [p.x, p.y, p.z]
    }
}

macro_rules! impl_vector_ops {
    ($t:ty { $($field:ident),+ }) => {
        impl Add for $t {
            type Output = $t;
            fn add(self, rhs: $t) -> $t {
                <$t>::new($(self.$field + rhs.$field),+)
            }
        }
        impl Sub for $t {
            type Output = $t;
            fn sub(self, rhs: $t) -> $t {
                <$t>::new($(self.$field - rhs.$field),+)
            }
        }
        impl Mul<f64> for $t {
            type Output = $t;
            fn mul(self, rhs: f64) -> $t {
                <$t>::new($(self.$field * rhs),+)
            }
        }
        impl Div<f64> for $t {
            type Output = $t;
            fn div(self, rhs: f64) -> $t {
                <$t>::new($(self.$field / rhs),+)
            }
        }
        impl Neg for $t {
            type Output = $t;
            fn neg(self) -> $t {
                <$t>::new($(-self.$field),+)
            }
        }
    };
}

impl_vector_ops!(Point2 { x, y });
impl_vector_ops!(Point3 { x, y, z });

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(c0: Point3, c1: Point3, c2: Point3) -> Mat3 {
        Mat3([
            [c0.x, c1.x, c2.x],
            [c0.y, c1.y, c2.y],
            [c0.z, c1.z, c2.z],
        ])
    }

    pub fn transpose(self) -> Mat3 {
        let m = self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn det(self) -> f64 {
        let m = self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn mul_vec(self, v: Point3) -> Point3 {
        let m = self.0;
        Point3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(self, rhs: Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    /// Largest absolute deviation of `self·selfᵀ` from the identity.
    pub fn orthonormality_residual(self) -> f64 {
        let g = self.mul_mat(self.transpose());
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.0[i][j] - target).abs());
            }
        }
        worst
    }
}

/// Rodrigues' rotation formula: rotation matrix from an axis-angle vector
/// whose norm is the rotation angle in radians. The zero vector maps to the
/// identity.
pub fn rodrigues(r: Point3) -> Mat3 {
    let theta = r.norm();
    if theta == 0.0 {
        return Mat3::IDENTITY;
    }
    let axis = r / theta;
    let (s, c) = theta.sin_cos();
    let k = Mat3([
        [0.0, -axis.z, axis.y],
        [axis.z, 0.0, -axis.x],
        [-axis.y, axis.x, 0.0],
    ]);
    let k2 = k.mul_mat(k);
    let mut out = Mat3::IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            out.0[i][j] += s * k.0[i][j] + (1.0 - c) * k2.0[i][j];
        }
    }
    out
}

/// Rigid transform stored as a rotation vector plus a translation, the form
/// fiducial-board pose estimators report.
///
/// The rotation vector is canonicalized on construction so that its norm is
/// at most π; at exactly π the sign is fixed by making the first nonzero
/// component positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Axis-angle rotation vector, radians.
    pub r: Point3,
    /// Translation, meters.
    pub t: Point3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        r: Point3::ZERO,
        t: Point3::ZERO,
    };

    pub fn new(r: Point3, t: Point3) -> Pose {
        Pose {
            r: canonicalize_rotation_vector(r),
            t,
        }
    }

    pub fn rotation(&self) -> Mat3 {
        rodrigues(self.r)
    }

    /// Applies the transform: `R·p + t`.
    pub fn apply(&self, p: Point3) -> Point3 {
        self.rotation().mul_vec(p) + self.t
    }
}

/// Reduces a rotation vector to the canonical representative with norm ≤ π.
pub fn canonicalize_rotation_vector(r: Point3) -> Point3 {
    const TAU: f64 = 2.0 * std::f64::consts::PI;
    let theta = r.norm();
    if theta == 0.0 {
        return r;
    }
    let axis = r / theta;
    let mut reduced = theta % TAU;
    let mut axis = axis;
    if reduced > std::f64::consts::PI {
        reduced = TAU - reduced;
        axis = -axis;
    }
    let mut out = axis * reduced;
    if (reduced - std::f64::consts::PI).abs() <= 1e-12 {
        // Angle π: r and -r encode the same rotation; pick one sign.
        let first_nonzero = [out.x, out.y, out.z].into_iter().find(|v| *v != 0.0);
        if let Some(v) = first_nonzero {
            if v < 0.0 {
                out = -out;
            }
        }
    }
    out
}

/// Pinhole camera intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Focal lengths in pixels.
    pub fx: f64,
    pub fy: f64,
    /// Principal point in pixels.
    pub cx: f64,
    pub cy: f64,
    /// Image size in pixels.
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Re-checks the invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::ConfigError(format!(
                "focal lengths must be positive, got fx={}, fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::ConfigError(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Projects a CCS point onto the image plane: `u = fx·x/z + cx`,
/// `v = fy·y/z + cy`. The result may lie outside the image bounds.
pub fn project(p: Point3, cam: &CameraIntrinsics) -> Result<Point2> {
    if p.z <= 0.0 {
        return Err(Error::NonPositiveDepth(p.z));
    }
    Ok(Point2::new(
        cam.fx * p.x / p.z + cam.cx,
        cam.fy * p.y / p.z + cam.cy,
    ))
}

/// Lifts a pixel back to a CCS point at the given depth:
/// `x = (u - cx)/fx · z`, `y = (v - cy)/fy · z`, `z = depth`.
pub fn backproject(px: Point2, depth: f64, cam: &CameraIntrinsics) -> Result<Point3> {
    if depth <= 0.0 {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(Point3::new(
        (px.x - cam.cx) / cam.fx * depth,
        (px.y - cam.cy) / cam.fy * depth,
        depth,
    ))
}

/// Grid layout of a fiducial marker board.
///
/// Marker ids are listed row-major; the board frame has its origin at the
/// centre of `origin_marker_id`, +x along increasing columns, +y toward the
/// robot (decreasing rows), z out of the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardLayout {
    pub rows: usize,
    pub cols: usize,
    /// Marker side length, meters.
    pub marker_size: f64,
    /// Gap between adjacent markers, meters.
    pub marker_gap: f64,
    pub origin_marker_id: u32,
    /// Row-major grid-cell-to-id map, `rows·cols` entries.
    pub ids: Vec<u32>,
}

impl Default for BoardLayout {
    /// The 5-column × 4-row board with 7 cm markers spaced 7 cm apart and
    /// the origin centred in marker 16.
    fn default() -> Self {
        BoardLayout {
            rows: 4,
            cols: 5,
            marker_size: 0.07,
            marker_gap: 0.07,
            origin_marker_id: 16,
            ids: (0..20).collect(),
        }
    }
}

impl BoardLayout {
    /// Centre-to-centre distance between adjacent markers.
    pub fn pitch(&self) -> f64 {
        self.marker_size + self.marker_gap
    }

    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.rows * self.cols {
            return Err(Error::ConfigError(format!(
                "board has {} ids for a {}x{} grid",
                self.ids.len(),
                self.rows,
                self.cols
            )));
        }
        let unique: std::collections::BTreeSet<&u32> = self.ids.iter().collect();
        if unique.len() != self.ids.len() {
            return Err(Error::ConfigError("board marker ids must be unique".into()));
        }
        if self.marker_size <= 0.0 || self.marker_gap < 0.0 {
            return Err(Error::ConfigError(
                "marker size must be positive and gap non-negative".into(),
            ));
        }
        if !self.ids.contains(&self.origin_marker_id) {
            return Err(Error::UnknownMarker(self.origin_marker_id));
        }
        Ok(())
    }

    fn grid_position(&self, marker_id: u32) -> Result<(usize, usize)> {
        let idx = self
            .ids
            .iter()
            .position(|&id| id == marker_id)
            .ok_or(Error::UnknownMarker(marker_id))?;
        Ok((idx / self.cols, idx % self.cols))
    }

    pub fn marker_ids(&self) -> &[u32] {
        &self.ids
    }
}

/// Centre of a marker in board coordinates (z = 0).
pub fn board_marker_point(layout: &BoardLayout, marker_id: u32) -> Result<Point3> {
    let (row, col) = layout.grid_position(marker_id)?;
    let (orow, ocol) = layout.grid_position(layout.origin_marker_id)?;
    let pitch = layout.pitch();
    Ok(Point3::new(
        (col as f64 - ocol as f64) * pitch,
        -(row as f64 - orow as f64) * pitch,
        0.0,
    ))
}

/// Carries a world-frame target point into the camera frame through a
/// reference marker and the board:
///
/// 1. offset from the reference marker, in its own axes:
///    `p_ref = R_refᵀ (p_t_wcs − p_ref_wcs)`
/// 2. board-frame position: `p_bcs = p_ref_bcs + p_ref`
/// 3. camera-frame position: `p = R_b · p_bcs + t_b`
pub fn target_via_reference(
    p_t_wcs: Point3,
    p_ref_wcs: Point3,
    r_ref: Mat3,
    p_ref_bcs: Point3,
    board_pose_ccs: &Pose,
) -> Point3 {
    let p_t_ref = r_ref.transpose().mul_vec(p_t_wcs - p_ref_wcs);
    let p_t_bcs = p_ref_bcs + p_t_ref;
    board_pose_ccs.apply(p_t_bcs)
}

/// Tolerance below which the ray–sphere discriminant is treated as zero
/// (tangent ray, single root).
const TANGENT_EPS: f64 = 1e-12;

/// Intersects the ray `origin + s·dir` (s ≥ 0, `dir` unit) with a sphere.
///
/// Returns 0, 1 or 2 ray parameters, sorted ascending. A discriminant
/// within [`TANGENT_EPS`] of zero counts as a tangent hit with one root.
pub fn ray_sphere_intersect(
    origin: Point3,
    dir: Point3,
    center: Point3,
    radius: f64,
) -> Vec<f64> {
    let oc = origin - center;
    let b = 2.0 * dir.dot(oc);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - 4.0 * c;
    let mut roots = Vec::with_capacity(2);
    if disc.abs() <= TANGENT_EPS {
        roots.push(-b / 2.0);
    } else if disc > 0.0 {
        let sq = disc.sqrt();
        roots.push((-b - sq) / 2.0);
        roots.push((-b + sq) / 2.0);
    }
    roots.retain(|s| *s >= 0.0);
    roots
}

/// Angle between two nonzero vectors, in degrees, in [0, 180].
pub fn angular_error_deg(u: Point3, v: Point3) -> Result<f64> {
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    let cos = (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}
