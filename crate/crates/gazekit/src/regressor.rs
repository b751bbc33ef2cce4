//! Confidence-gated gaze regressor.
//!
//! The network consumes the 57-element feature vector as 38 pairs
//! `(coordinate, confidence)` — `(x_i, k_i)` and `(y_i, k_i)` per keypoint
//! in canonical order. Each pair feeds one confidence-gated unit
//!
//! ```text
//! CGU(v, c) = ReLU(a·v + b) · sigmoid(p·c + q)
//! ```
//!
//! whose 38 outputs pass through two fully connected ReLU layers of 19
//! nodes and a linear 3-node output: the 2D gaze vector in pixels plus a
//! sigmoid-squashed confidence. The confidence output has no ground-truth
//! signal and is reported as-is, uncalibrated; only the two coordinate
//! outputs enter the data term.
//!
//! The loss is the batch RMSE of the coordinate error
//! `sqrt(Σ(e_x² + e_y²) / 2B)` plus L2 penalties: 1e-3 on the CGU scalars,
//! 1e-4 on the two hidden layers' weights, nothing on the output layer or
//! hidden biases.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::KEYPOINT_COUNT;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, RegressionSample};
use crate::geometry::Point2;
use crate::nn::{relu, relu_deriv, sigmoid, Adam, DenseLayer};

const REGRESSOR_FORMAT_TAG: &str = "gazekit-cgu/1";

/// Number of confidence-gated units: one per coordinate of the 19
/// keypoints.
pub const CGU_COUNT: usize = 2 * KEYPOINT_COUNT;
const HIDDEN: usize = 19;
const L2_CGU: f64 = 1e-3;
const L2_FC: f64 = 1e-4;

/// One confidence-gated unit: a ReLU branch on the coordinate and a sigmoid
/// gate on its confidence, multiplied together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CguUnit {
    pub weight: f64,
    pub bias: f64,
    pub gate_weight: f64,
    pub gate_bias: f64,
}

impl CguUnit {
    /// All-ones initialization.
    pub fn ones() -> Self {
        CguUnit {
            weight: 1.0,
            bias: 1.0,
            gate_weight: 1.0,
            gate_bias: 1.0,
        }
    }
}

/// `ReLU(weight·v + bias) · sigmoid(gate_weight·c + gate_bias)`.
pub fn cgu_forward(unit: &CguUnit, v: f64, c: f64) -> f64 {
    relu(unit.weight * v + unit.bias) * sigmoid(unit.gate_weight * c + unit.gate_bias)
}

/// Training hyperparameters; the defaults are the intended recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    /// 100 epochs of batch 400 with Adam at a constant 0.05 learning rate
    /// and first-moment decay 0.9. An optional multiplicative per-epoch
    /// schedule is available through `lr_decay` (1.0 = constant).
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 400,
            learning_rate: 0.05,
            lr_decay: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::ConfigError(
                "epochs and batch size must be positive".into(),
            ));
        }
        if self.learning_rate <= 0.0 || !(0.0..=1.0).contains(&self.lr_decay) || self.lr_decay == 0.0
        {
            return Err(Error::ConfigError(
                "learning rate must be positive and decay in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// The full network: 38 CGUs, two hidden layers of 19 and a 3-node linear
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CguRegressor {
    pub cgu: Vec<CguUnit>,
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
    pub output: DenseLayer,
}

/// Inference output: the 2D gaze vector in pixels and the network's own
/// confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressorOutput {
    pub gaze2d: Point2,
    pub sigma: f64,
}

struct ForwardTrace {
    inputs: [(f64, f64); CGU_COUNT],
    pre_relu: [f64; CGU_COUNT],
    relu_out: [f64; CGU_COUNT],
    gate_out: [f64; CGU_COUNT],
    h0: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    z3: Vec<f64>,
}

impl CguRegressor {
    /// CGU scalars at one; hidden and output layers from a seeded
    /// zero-mean Gaussian at the fan-scaled (Glorot) standard deviation
    /// `sqrt(2 / (fan_in + fan_out))`, zero biases.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init(&mut rng)
    }

    pub(crate) fn init<R: Rng>(rng: &mut R) -> Self {
        let glorot = |fan_in: usize, fan_out: usize| (2.0 / (fan_in + fan_out) as f64).sqrt();
        CguRegressor {
            cgu: vec![CguUnit::ones(); CGU_COUNT],
            fc1: DenseLayer::gaussian(CGU_COUNT, HIDDEN, glorot(CGU_COUNT, HIDDEN), rng),
            fc2: DenseLayer::gaussian(HIDDEN, HIDDEN, glorot(HIDDEN, HIDDEN), rng),
            output: DenseLayer::gaussian(HIDDEN, 3, glorot(HIDDEN, 3), rng),
        }
    }

    /// The `(coordinate, confidence)` pair feeding CGU `j`.
    fn unit_input(fv: &FeatureVector, j: usize) -> (f64, f64) {
        let keypoint = j / 2;
        let v = if j.is_multiple_of(2) {
            fv.x(keypoint)
        } else {
            fv.y(keypoint)
        };
        (v, fv.k(keypoint))
    }

    fn trace(&self, fv: &FeatureVector) -> ForwardTrace {
        let mut inputs = [(0.0, 0.0); CGU_COUNT];
        let mut pre_relu = [0.0; CGU_COUNT];
        let mut relu_out = [0.0; CGU_COUNT];
        let mut gate_out = [0.0; CGU_COUNT];
        let mut h0 = vec![0.0; CGU_COUNT];
        for j in 0..CGU_COUNT {
            let (v, c) = Self::unit_input(fv, j);
            let unit = &self.cgu[j];
            inputs[j] = (v, c);
            pre_relu[j] = unit.weight * v + unit.bias;
            relu_out[j] = relu(pre_relu[j]);
            gate_out[j] = sigmoid(unit.gate_weight * c + unit.gate_bias);
            h0[j] = relu_out[j] * gate_out[j];
        }
        let z1 = self.fc1.forward(&h0);
        let h1: Vec<f64> = z1.iter().map(|v| relu(*v)).collect();
        let z2 = self.fc2.forward(&h1);
        let h2: Vec<f64> = z2.iter().map(|v| relu(*v)).collect();
        let z3 = self.output.forward(&h2);
        ForwardTrace {
            inputs,
            pre_relu,
            relu_out,
            gate_out,
            h0,
            z1,
            h1,
            z2,
            h2,
            z3,
        }
    }

    /// Raw network outputs `(g_x, g_y, σ)`; coordinates in pixels, σ in
    /// (0, 1).
    pub fn forward(&self, fv: &FeatureVector) -> (f64, f64, f64) {
        let t = self.trace(fv);
        (t.z3[0], t.z3[1], sigmoid(t.z3[2]))
    }

    pub fn predict(&self, fv: &FeatureVector) -> RegressorOutput {
        let (gx, gy, sigma) = self.forward(fv);
        RegressorOutput {
            gaze2d: Point2::new(gx, gy),
            sigma,
        }
    }

    /// Sum of squared coordinate errors over a batch, divided by `2B`.
    fn mean_square_term(&self, batch: &[RegressionSample]) -> f64 {
        let mut sum = 0.0;
        for s in batch {
            let (gx, gy, _) = self.forward(&s.feature);
            sum += (gx - s.gaze2d.x).powi(2) + (gy - s.gaze2d.y).powi(2);
        }
        sum / (2.0 * batch.len() as f64)
    }

    fn penalty(&self) -> f64 {
        let cgu: f64 = self
            .cgu
            .iter()
            .map(|u| {
                u.weight * u.weight
                    + u.bias * u.bias
                    + u.gate_weight * u.gate_weight
                    + u.gate_bias * u.gate_bias
            })
            .sum();
        let fc: f64 = self
            .fc1
            .weights
            .iter()
            .chain(&self.fc2.weights)
            .map(|w| w * w)
            .sum();
        L2_CGU * cgu + L2_FC * fc
    }

    /// Batch loss: `sqrt(Σ(e_x² + e_y²) / 2B)` plus the L2 penalties. The
    /// confidence output is excluded from the data term.
    pub fn loss(&self, batch: &[RegressionSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(self.mean_square_term(batch).sqrt() + self.penalty())
    }

    /// Gradient of [`CguRegressor::loss`] for every parameter, flattened in
    /// the order of [`CguRegressor::flat_params`].
    pub fn backward(&self, batch: &[RegressionSample]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let b = batch.len() as f64;
        let msq = self.mean_square_term(batch);

        let mut g_cgu = vec![[0.0; 4]; CGU_COUNT];
        let mut g_fc1_w = vec![0.0; self.fc1.weights.len()];
        let mut g_fc1_b = vec![0.0; HIDDEN];
        let mut g_fc2_w = vec![0.0; self.fc2.weights.len()];
        let mut g_fc2_b = vec![0.0; HIDDEN];
        let mut g_out_w = vec![0.0; self.output.weights.len()];
        let mut g_out_b = vec![0.0; 3];

        // The data term vanishes identically at zero error; only the
        // penalties contribute there.
        if msq > 0.0 {
            let scale = 1.0 / (2.0 * b * msq.sqrt());
            for s in batch {
                let t = self.trace(&s.feature);
                // d(loss)/d(z3): σ carries no data gradient.
                let dz3 = [
                    scale * (t.z3[0] - s.gaze2d.x),
                    scale * (t.z3[1] - s.gaze2d.y),
                    0.0,
                ];
                for o in 0..3 {
                    g_out_b[o] += dz3[o];
                    for i in 0..HIDDEN {
                        g_out_w[o * HIDDEN + i] += dz3[o] * t.h2[i];
                    }
                }
                let mut dh2 = self.output.backward_input(&dz3);
                for (v, z) in dh2.iter_mut().zip(&t.z2) {
                    *v *= relu_deriv(*z);
                }
                let dz2 = dh2;
                for o in 0..HIDDEN {
                    g_fc2_b[o] += dz2[o];
                    for i in 0..HIDDEN {
                        g_fc2_w[o * HIDDEN + i] += dz2[o] * t.h1[i];
                    }
                }
                let mut dh1 = self.fc2.backward_input(&dz2);
                for (v, z) in dh1.iter_mut().zip(&t.z1) {
                    *v *= relu_deriv(*z);
                }
                let dz1 = dh1;
                for o in 0..HIDDEN {
                    g_fc1_b[o] += dz1[o];
                    for i in 0..CGU_COUNT {
                        g_fc1_w[o * CGU_COUNT + i] += dz1[o] * t.h0[i];
                    }
                }
                let dh0 = self.fc1.backward_input(&dz1);
                for j in 0..CGU_COUNT {
                    let (v, c) = t.inputs[j];
                    let du = dh0[j] * t.gate_out[j] * relu_deriv(t.pre_relu[j]);
                    let ds = dh0[j] * t.relu_out[j] * t.gate_out[j] * (1.0 - t.gate_out[j]);
                    g_cgu[j][0] += du * v;
                    g_cgu[j][1] += du;
                    g_cgu[j][2] += ds * c;
                    g_cgu[j][3] += ds;
                }
            }
        }

        // L2 penalty gradients.
        for (g, unit) in g_cgu.iter_mut().zip(&self.cgu) {
            g[0] += 2.0 * L2_CGU * unit.weight;
            g[1] += 2.0 * L2_CGU * unit.bias;
            g[2] += 2.0 * L2_CGU * unit.gate_weight;
            g[3] += 2.0 * L2_CGU * unit.gate_bias;
        }
        for (g, w) in g_fc1_w.iter_mut().zip(&self.fc1.weights) {
            *g += 2.0 * L2_FC * w;
        }
        for (g, w) in g_fc2_w.iter_mut().zip(&self.fc2.weights) {
            *g += 2.0 * L2_FC * w;
        }

        let mut flat = Vec::with_capacity(self.param_count());
        for g in g_cgu {
            flat.extend_from_slice(&g);
        }
        flat.extend(g_fc1_w);
        flat.extend(g_fc1_b);
        flat.extend(g_fc2_w);
        flat.extend(g_fc2_b);
        flat.extend(g_out_w);
        flat.extend(g_out_b);
        Ok(flat)
    }

    pub fn param_count(&self) -> usize {
        4 * CGU_COUNT
            + self.fc1.param_count()
            + self.fc2.param_count()
            + self.output.param_count()
    }

    /// Every parameter in a fixed order: the four scalars of each CGU, then
    /// weights-then-bias of fc1, fc2 and the output layer.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for u in &self.cgu {
            out.extend_from_slice(&[u.weight, u.bias, u.gate_weight, u.gate_bias]);
        }
        for layer in [&self.fc1, &self.fc2, &self.output] {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut offset = 0;
        for u in &mut self.cgu {
            u.weight = params[offset];
            u.bias = params[offset + 1];
            u.gate_weight = params[offset + 2];
            u.gate_bias = params[offset + 3];
            offset += 4;
        }
        for layer in [&mut self.fc1, &mut self.fc2, &mut self.output] {
            let wn = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + wn]);
            offset += wn;
            let bn = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + bn]);
            offset += bn;
        }
    }
}

/// Per-epoch training log entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

/// Trains the regressor with Adam, a per-epoch multiplicative learning-rate
/// decay and a seeded shuffle each epoch. The trailing partial batch of an
/// epoch is used as-is.
pub fn train(
    samples: &[RegressionSample],
    cfg: &TrainConfig,
) -> Result<(CguRegressor, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = CguRegressor::init(&mut rng);
    let mut adam = Adam::new(net.param_count(), cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut params = net.flat_params();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<RegressionSample> =
                chunk.iter().map(|i| samples[*i].clone()).collect();
            let loss = net.loss(&batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let grads = net.backward(&batch)?;
            adam.apply(&mut params, &grads, lr);
            net.set_flat_params(&params);
            losses.push(loss);
        }
        report.epochs.push(EpochStats {
            epoch,
            learning_rate: lr,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
        });
    }
    Ok((net, report))
}

/// RMSE of always predicting the mean target, with the same `sqrt(Σ/2B)`
/// convention as the loss; the baseline a trained regressor must beat.
pub fn mean_predictor_rmse(samples: &[RegressionSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let n = samples.len() as f64;
    let mean = samples
        .iter()
        .fold(Point2::default(), |acc, s| acc + s.gaze2d)
        / n;
    let sum: f64 = samples
        .iter()
        .map(|s| (s.gaze2d.x - mean.x).powi(2) + (s.gaze2d.y - mean.y).powi(2))
        .sum();
    (sum / (2.0 * n)).sqrt()
}

/// On-disk regressor model with the training provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub format: String,
    pub train_config: TrainConfig,
    pub net: CguRegressor,
}

impl RegressorModel {
    pub fn new(net: CguRegressor, train_config: TrainConfig) -> Self {
        RegressorModel {
            format: REGRESSOR_FORMAT_TAG.to_string(),
            train_config,
            net,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer(&mut writer, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RegressorModel> {
        let file = File::open(path).map_err(|_| Error::ModelMissing(path.display().to_string()))?;
        let model: RegressorModel = serde_json::from_reader(BufReader::new(file))?;
        if model.format != REGRESSOR_FORMAT_TAG {
            return Err(Error::ConfigError(format!(
                "unsupported regressor model format {:?}",
                model.format
            )));
        }
        Ok(model)
    }
}
