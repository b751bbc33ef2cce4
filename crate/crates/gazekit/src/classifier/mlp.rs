//! Feed-forward baseline classifier: three fully connected hidden layers of
//! 100 ReLU units each, a 4-way softmax output, cross-entropy loss and Adam
//! at a 1e-3 learning rate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::GazeClass;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, LabeledFeature, FEATURE_LEN};
use crate::nn::{relu, relu_deriv, Adam, DenseLayer};

const MLP_LEARNING_RATE: f64 = 1e-3;
const MLP_BATCH_SIZE: usize = 64;

/// The baseline network. Layer sizes are free so the backward pass can be
/// finite-difference-checked on small instances; [`MlpClassifier::baseline`]
/// builds the 57-100-100-100-4 configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpClassifier {
    pub layers: Vec<DenseLayer>,
}

impl MlpClassifier {
    /// Seeded He-initialized network with the given layer widths.
    pub fn new(dims: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let std_dev = (2.0 / w[0] as f64).sqrt();
                DenseLayer::gaussian(w[0], w[1], std_dev, &mut rng)
            })
            .collect();
        MlpClassifier { layers }
    }

    pub fn baseline(seed: u64) -> Self {
        Self::new(&[FEATURE_LEN, 100, 100, 100, 4], seed)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Class probabilities for one input.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if idx + 1 < self.layers.len() {
                for v in &mut h {
                    *v = relu(*v);
                }
            }
        }
        softmax(&h)
    }

    /// Mean cross-entropy of a batch of `(input, class-index)` pairs.
    pub fn loss(&self, inputs: &[&[f64]], targets: &[usize]) -> Result<f64> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut total = 0.0;
        for (x, t) in inputs.iter().zip(targets) {
            let p = self.forward(x);
            total -= p[*t].max(f64::MIN_POSITIVE).ln();
        }
        Ok(total / inputs.len() as f64)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter,
    /// flattened in layer order (weights then bias per layer).
    pub fn loss_and_grad(&self, inputs: &[&[f64]], targets: &[usize]) -> Result<(f64, Vec<f64>)> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let batch = inputs.len() as f64;
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let mut total = 0.0;

        for (x, t) in inputs.iter().zip(targets) {
            // Forward pass keeping pre- and post-activation values.
            let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
            let mut post: Vec<Vec<f64>> = vec![x.to_vec()];
            for (idx, layer) in self.layers.iter().enumerate() {
                let z = layer.forward(post.last().unwrap());
                pre.push(z.clone());
                if idx + 1 < self.layers.len() {
                    post.push(z.iter().map(|v| relu(*v)).collect());
                } else {
                    post.push(z);
                }
            }
            let probs = softmax(post.last().unwrap());
            total -= probs[*t].max(f64::MIN_POSITIVE).ln();

            // Softmax + cross-entropy collapses to (p - onehot)/B.
            let mut dz: Vec<f64> = probs.to_vec();
            dz[*t] -= 1.0;
            for v in &mut dz {
                *v /= batch;
            }

            for idx in (0..self.layers.len()).rev() {
                let input = &post[idx];
                let (gw, gb) = &mut grads[idx];
                let layer = &self.layers[idx];
                for o in 0..layer.out_dim {
                    gb[o] += dz[o];
                    let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (slot, v) in row.iter_mut().zip(input) {
                        *slot += dz[o] * v;
                    }
                }
                if idx > 0 {
                    let mut dx = layer.backward_input(&dz);
                    for (slot, z) in dx.iter_mut().zip(&pre[idx - 1]) {
                        *slot *= relu_deriv(*z);
                    }
                    dz = dx;
                }
            }
        }

        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        Ok((total / batch, flat))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut offset = 0;
        for layer in &mut self.layers {
            let wn = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + wn]);
            offset += wn;
            let bn = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + bn]);
            offset += bn;
        }
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Trains the baseline classifier. Returns the model and the per-epoch mean
/// batch loss.
pub fn train_mlp_classifier(
    samples: &[LabeledFeature],
    epochs: usize,
    seed: u64,
) -> Result<(MlpClassifier, Vec<f64>)> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut model = MlpClassifier::baseline(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut adam = Adam::new(model.param_count(), 0.9, 0.999, 1e-8);
    let mut params = model.flat_params();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(MLP_BATCH_SIZE) {
            let inputs: Vec<&[f64]> = chunk
                .iter()
                .map(|i| samples[*i].feature.as_slice())
                .collect();
            let targets: Vec<usize> = chunk.iter().map(|i| samples[*i].label.index()).collect();
            let (loss, grads) = model.loss_and_grad(&inputs, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            adam.apply(&mut params, &grads, MLP_LEARNING_RATE);
            model.set_flat_params(&params);
            losses.push(loss);
        }
        epoch_losses.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok((model, epoch_losses))
}

/// Predicted class and softmax confidence for a feature vector.
pub fn predict_mlp(model: &MlpClassifier, fv: &FeatureVector) -> (GazeClass, f64) {
    let probs = model.forward(fv.as_slice());
    let mut best = 0;
    for i in 1..probs.len().min(4) {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    (GazeClass::ALL[best], probs[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_rows_sum_to_one() {
        let model = MlpClassifier::baseline(5);
        let fv = FeatureVector::from_values([0.3; FEATURE_LEN]);
        let p = model.forward(fv.as_slice());
        assert_eq!(p.len(), 4);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(p.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn memorizes_a_constant_single_class_set() {
        let samples: Vec<LabeledFeature> = (0..4)
            .map(|_| LabeledFeature {
                feature: FeatureVector::from_values([0.25; FEATURE_LEN]),
                label: GazeClass::Icub,
            })
            .collect();
        let (model, losses) = train_mlp_classifier(&samples, 400, 7).unwrap();
        assert!(losses.last().unwrap() < &1e-2, "final loss {}", losses.last().unwrap());
        let (class, confidence) = predict_mlp(&model, &samples[0].feature);
        assert_eq!(class, GazeClass::Icub);
        assert!(confidence > 0.95);
    }

    #[test]
    fn training_is_deterministic() {
        let samples: Vec<LabeledFeature> = (0..12)
            .map(|i| LabeledFeature {
                feature: {
                    let mut v = [0.0; FEATURE_LEN];
                    v[0] = (i % 4) as f64;
                    v[1] = (i % 3) as f64;
                    FeatureVector::from_values(v)
                },
                label: GazeClass::ALL[i % 4],
            })
            .collect();
        let (a, _) = train_mlp_classifier(&samples, 5, 99).unwrap();
        let (b, _) = train_mlp_classifier(&samples, 5, 99).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }
}
