//! RBF-kernel binary SVM trained with a sequential minimal optimization
//! solver.
//!
//! The solver minimizes the dual problem
//!
//! ```text
//! min_α  ½ αᵀQα − 1ᵀα    s.t.  0 ≤ α_i ≤ C_i,  Σ y_i α_i = 0
//! ```
//!
//! with `Q_ij = y_i y_j k(x_i, x_j)` and per-sample box constraints
//! `C_i = C · w_i`. Working pairs are chosen by maximal violation and
//! kernel rows are cached, so one pass costs O(n) after the rows touched
//! have been filled in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Gaussian kernel `exp(-γ‖a-b‖²)`.
pub fn rbf_kernel(a: &FeatureVector, b: &FeatureVector, gamma: f64) -> f64 {
    (-gamma * a.distance_squared(b)).exp()
}

/// Solver knobs. The defaults are the training configuration; oracle tests
/// tighten `tol` to compare against an independent dual solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoOptions {
    /// Maximal-violating-pair gap at which the solver stops.
    pub tol: f64,
    /// Iteration cap as a multiple of the training-set size.
    pub max_iter_per_sample: usize,
}

impl Default for SmoOptions {
    fn default() -> Self {
        SmoOptions {
            tol: 1e-3,
            max_iter_per_sample: 100_000,
        }
    }
}

/// A trained binary machine: support vectors with their dual coefficients
/// `α_i·y_i`, the bias, and the hyperparameters used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub support_vectors: Vec<FeatureVector>,
    /// Indices of the support vectors in the training set.
    pub sv_indices: Vec<usize>,
    /// `α_i · y_i` per support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
}

impl BinarySvm {
    /// Decision value `Σ α_i y_i k(x_i, x) + b`; its sign is the predicted
    /// binary label.
    pub fn decision(&self, x: &FeatureVector) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, coef)| coef * rbf_kernel(sv, x, self.gamma))
            .sum::<f64>()
            + self.bias
    }
}

/// Trains a binary SVM with default solver options. `labels` are ±1 and
/// `sample_weights` scale the box constraint per sample.
pub fn train_binary_svm(
    features: &[FeatureVector],
    labels: &[f64],
    c: f64,
    gamma: f64,
    sample_weights: &[f64],
) -> Result<BinarySvm> {
    train_binary_svm_with(features, labels, c, gamma, sample_weights, SmoOptions::default())
}

pub fn train_binary_svm_with(
    features: &[FeatureVector],
    labels: &[f64],
    c: f64,
    gamma: f64,
    sample_weights: &[f64],
    opts: SmoOptions,
) -> Result<BinarySvm> {
    let n = features.len();
    if n == 0 || labels.len() != n || sample_weights.len() != n {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: n,
        });
    }
    if !(labels.iter().any(|y| *y > 0.0) && labels.iter().any(|y| *y < 0.0)) {
        return Err(Error::ConfigError(
            "binary SVM training needs both labels present".into(),
        ));
    }
    if c <= 0.0 || gamma <= 0.0 {
        return Err(Error::ConfigError(format!(
            "C and gamma must be positive, got C={c}, gamma={gamma}"
        )));
    }

    let boxes: Vec<f64> = sample_weights.iter().map(|w| c * w).collect();
    let mut solver = SmoSolver::new(features, labels, &boxes, gamma);
    let max_iters = opts.max_iter_per_sample.saturating_mul(n);
    let bias = solver.solve(opts.tol, max_iters)?;

    let mut support_vectors = Vec::new();
    let mut sv_indices = Vec::new();
    let mut dual_coefs = Vec::new();
    for i in 0..n {
        if solver.alpha[i] > 1e-12 {
            support_vectors.push(features[i]);
            sv_indices.push(i);
            dual_coefs.push(solver.alpha[i] * labels[i]);
        }
    }
    Ok(BinarySvm {
        support_vectors,
        sv_indices,
        dual_coefs,
        bias,
        gamma,
        c,
    })
}

struct SmoSolver<'a> {
    features: &'a [FeatureVector],
    labels: &'a [f64],
    boxes: &'a [f64],
    gamma: f64,
    alpha: Vec<f64>,
    /// Gradient of the dual objective: `G_i = Σ_j Q_ij α_j − 1`.
    grad: Vec<f64>,
    rows: Vec<Option<Box<[f64]>>>,
}

impl<'a> SmoSolver<'a> {
    fn new(features: &'a [FeatureVector], labels: &'a [f64], boxes: &'a [f64], gamma: f64) -> Self {
        let n = features.len();
        SmoSolver {
            features,
            labels,
            boxes,
            gamma,
            alpha: vec![0.0; n],
            grad: vec![-1.0; n],
            rows: vec![None; n],
        }
    }

    fn ensure_row(&mut self, i: usize) {
        if self.rows[i].is_none() {
            let row: Box<[f64]> = self
                .features
                .iter()
                .map(|x| rbf_kernel(&self.features[i], x, self.gamma))
                .collect();
            self.rows[i] = Some(row);
        }
    }

    /// Maximal-violating pair: the most violating index of each of the two
    /// feasibility sets, together with the bias bounds they imply.
    fn select_pair(&self) -> (Option<usize>, f64, Option<usize>, f64) {
        let mut up: (Option<usize>, f64) = (None, f64::NEG_INFINITY);
        let mut low: (Option<usize>, f64) = (None, f64::INFINITY);
        for t in 0..self.alpha.len() {
            let y = self.labels[t];
            let v = -y * self.grad[t];
            let at_upper = self.alpha[t] >= self.boxes[t];
            let at_lower = self.alpha[t] <= 0.0;
            let in_up = (y > 0.0 && !at_upper) || (y < 0.0 && !at_lower);
            let in_low = (y > 0.0 && !at_lower) || (y < 0.0 && !at_upper);
            if in_up && v > up.1 {
                up = (Some(t), v);
            }
            if in_low && v < low.1 {
                low = (Some(t), v);
            }
        }
        (up.0, up.1, low.0, low.1)
    }

    /// Runs the solver to the requested gap and returns the bias.
    fn solve(&mut self, tol: f64, max_iters: usize) -> Result<f64> {
        for _ in 0..max_iters {
            let (up_idx, up_val, low_idx, low_val) = self.select_pair();
            let (i, j) = match (up_idx, low_idx) {
                (Some(i), Some(j)) => (i, j),
                // One side fully bounded: nothing left to move.
                _ => break,
            };
            if up_val - low_val <= tol {
                break;
            }

            self.ensure_row(i);
            self.ensure_row(j);
            let row_i = self.rows[i].as_deref().unwrap();
            let row_j = self.rows[j].as_deref().unwrap();

            let (yi, yj) = (self.labels[i], self.labels[j]);
            let eta = (row_i[i] + row_j[j] - 2.0 * row_i[j]).max(1e-12);

            // Unconstrained step along dα_i = y_i·δ, dα_j = -y_j·δ.
            let mut delta = (up_val - low_val) / eta;
            // Box limits for both coordinates.
            let (ai, aj) = (self.alpha[i], self.alpha[j]);
            let hi_i = if yi > 0.0 { self.boxes[i] - ai } else { ai };
            let hi_j = if yj > 0.0 { aj } else { self.boxes[j] - aj };
            delta = delta.min(hi_i).min(hi_j);
            if delta <= 0.0 {
                break;
            }

            self.alpha[i] = (ai + yi * delta).clamp(0.0, self.boxes[i]);
            self.alpha[j] = (aj - yj * delta).clamp(0.0, self.boxes[j]);

            for (t, g) in self.grad.iter_mut().enumerate() {
                *g += delta * self.labels[t] * (row_i[t] - row_j[t]);
            }
        }

        let (up_idx, up_val, low_idx, low_val) = self.select_pair();
        let gap = match (up_idx, low_idx) {
            (Some(_), Some(_)) => up_val - low_val,
            _ => 0.0,
        };
        if gap > tol {
            return Err(Error::NonConvergence {
                iterations: max_iters,
                violation: gap / 2.0,
            });
        }
        // Feasible bias interval is [up_val, low_val]; take the midpoint.
        let bias = match (up_idx, low_idx) {
            (Some(_), Some(_)) => (up_val + low_val) / 2.0,
            (Some(_), None) => up_val,
            (None, Some(_)) => low_val,
            (None, None) => 0.0,
        };
        Ok(bias)
    }
}

/// Dual objective `Σα − ½ ΣΣ α_i α_j y_i y_j k(x_i, x_j)` for a given
/// multiplier vector.
pub fn dual_objective(
    features: &[FeatureVector],
    labels: &[f64],
    alpha: &[f64],
    gamma: f64,
) -> f64 {
    let n = features.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if alpha[j] == 0.0 {
                continue;
            }
            quad += alpha[i] * alpha[j] * labels[i] * labels[j]
                * rbf_kernel(&features[i], &features[j], gamma);
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Full multiplier vector of a trained machine (zero off the support set).
pub fn expand_alphas(svm: &BinarySvm, labels: &[f64], n: usize) -> Vec<f64> {
    let mut alpha = vec![0.0; n];
    for (idx, coef) in svm.sv_indices.iter().zip(&svm.dual_coefs) {
        alpha[*idx] = coef * labels[*idx]; // α = (α·y)·y
    }
    alpha
}

/// Largest KKT violation of a trained machine over its training set:
///
/// * `α_i = 0`   requires `y_i f(x_i) ≥ 1`
/// * `0 < α_i < C_i` requires `y_i f(x_i) = 1`
/// * `α_i = C_i` requires `y_i f(x_i) ≤ 1`
pub fn kkt_max_violation(
    svm: &BinarySvm,
    features: &[FeatureVector],
    labels: &[f64],
    box_constraints: &[f64],
) -> f64 {
    let alpha = expand_alphas(svm, labels, features.len());
    let bound_eps = 1e-9;
    let mut worst: f64 = 0.0;
    for i in 0..features.len() {
        let margin = labels[i] * svm.decision(&features[i]);
        let violation = if alpha[i] <= bound_eps {
            (1.0 - margin).max(0.0)
        } else if alpha[i] >= box_constraints[i] - bound_eps {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(violation);
    }
    worst
}
