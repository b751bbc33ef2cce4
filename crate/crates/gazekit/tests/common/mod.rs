//! Shared test oracles, independent of the implementation paths they
//! check.

use gazekit::features::{FeatureVector, FEATURE_LEN};

/// Central finite differences of a scalar function at `point`.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(mut f: F, point: &[f64], h: f64) -> Vec<f64> {
    let mut grads = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let plus = f(&probe);
        probe[i] = point[i] - h;
        let minus = f(&probe);
        probe[i] = point[i];
        grads.push((plus - minus) / (2.0 * h));
    }
    grads
}

/// Relative error with a unit floor, so near-zero gradients compare on an
/// absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Angle between two vectors in degrees via `atan2(‖u×v‖, u·v)`.
///
/// The production metric uses the arccos form, whose noise floor near zero
/// is √(2·ulp) ≈ 1.2e-6 degrees; sub-microdegree assertions need this
/// formulation instead.
pub fn small_angle_deg(u: gazekit::geometry::Point3, v: gazekit::geometry::Point3) -> f64 {
    u.cross(v).norm().atan2(u.dot(v)).to_degrees()
}

/// Feature vector with the leading coordinates set and the rest zero.
pub fn feature_from(coords: &[f64]) -> FeatureVector {
    let mut values = [0.0; FEATURE_LEN];
    values[..coords.len()].copy_from_slice(coords);
    FeatureVector::from_values(values)
}

/// Independent dual solver for the soft-margin SVM QP:
///
/// ```text
/// max_α  1ᵀα − ½ αᵀQα   s.t.  0 ≤ α_i ≤ C_i,  yᵀα = 0,
/// Q_ij = y_i y_j k(x_i, x_j)
/// ```
///
/// Accelerated projected gradient (FISTA with adaptive restarts); the
/// projection onto box ∩ hyperplane is solved by bisection on the
/// hyperplane multiplier. Intended for tiny instances (n ≤ 20) where it
/// converges far past the comparison tolerance.
pub struct QpOracle {
    pub alpha: Vec<f64>,
    pub objective: f64,
}

pub fn qp_dual_oracle(q: &[Vec<f64>], boxes: &[f64], labels: &[f64], iters: usize) -> QpOracle {
    let n = boxes.len();
    // Lipschitz constant of the gradient: power iteration on Q.
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lmax = 1.0;
    for _ in 0..100 {
        let mut w = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                w[i] += q[i][j] * v[j];
            }
        }
        lmax = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if lmax == 0.0 {
            lmax = 1.0;
            break;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / lmax;
        }
    }
    let step = 1.0 / (1.2 * lmax.max(1e-12));

    let project = |v: &[f64]| -> Vec<f64> {
        let clip = |lambda: f64| -> Vec<f64> {
            v.iter()
                .zip(labels)
                .zip(boxes)
                .map(|((vi, yi), ci)| (vi - lambda * yi).clamp(0.0, *ci))
                .collect()
        };
        let balance =
            |alpha: &[f64]| -> f64 { alpha.iter().zip(labels).map(|(a, y)| a * y).sum() };
        let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
            + boxes.iter().fold(0.0f64, |m, x| m.max(*x))
            + 1.0;
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if balance(&clip(mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        clip(0.5 * (lo + hi))
    };
    let grad = |alpha: &[f64]| -> Vec<f64> {
        let mut g = vec![-1.0; n];
        for i in 0..n {
            for j in 0..n {
                g[i] += q[i][j] * alpha[j];
            }
        }
        g
    };

    let mut alpha = project(&vec![0.0; n]);
    let mut momentum = alpha.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let g = grad(&momentum);
        let candidate: Vec<f64> = momentum
            .iter()
            .zip(&g)
            .map(|(m, gi)| m - step * gi)
            .collect();
        let next = project(&candidate);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let restart: f64 = momentum
            .iter()
            .zip(&next)
            .zip(&alpha)
            .map(|((m, nx), a)| (m - nx) * (nx - a))
            .sum();
        if restart > 0.0 {
            // Momentum points uphill: restart.
            momentum = next.clone();
            t = 1.0;
        } else {
            momentum = next
                .iter()
                .zip(&alpha)
                .map(|(nx, a)| nx + beta * (nx - a))
                .collect();
            t = t_next;
        }
        alpha = next;
    }

    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * q[i][j] * alpha[j];
        }
    }
    QpOracle {
        objective: alpha.iter().sum::<f64>() - 0.5 * quad,
        alpha,
    }
}

/// Homogeneous 4×4 transform helper for the coordinate-chain oracle.
pub type Hom = [[f64; 4]; 4];

pub fn hom_from(r: &gazekit::geometry::Mat3, t: gazekit::geometry::Point3) -> Hom {
    let mut out = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = r.0[i][j];
        }
    }
    out[0][3] = t.x;
    out[1][3] = t.y;
    out[2][3] = t.z;
    out[3][3] = 1.0;
    out
}

pub fn hom_mul(a: &Hom, b: &Hom) -> Hom {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

pub fn hom_apply(m: &Hom, p: gazekit::geometry::Point3) -> gazekit::geometry::Point3 {
    let v = [p.x, p.y, p.z, 1.0];
    let mut out = [0.0; 3];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = m[i].iter().zip(&v).map(|(a, b)| a * b).sum();
    }
    gazekit::geometry::Point3::new(out[0], out[1], out[2])
}
