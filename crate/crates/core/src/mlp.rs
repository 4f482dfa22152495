//! Learned suction-failure classifier: a small ELU perceptron over a history
//! window of cup-frame accelerations plus the payload mass, with exact
//! reverse-mode input gradients for constraint linearization.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pipeline::LabeledWindow;
use crate::scalar::{real, to_f64, Real};

/// Feed-forward network: input 3h+1, ELU hidden layers, logistic-sigmoid
/// output in (0, 1). Raw inputs are normalized by fixed scales before the
/// first layer. Immutable once trained; forward and gradient are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<R: Real> {
    pub layer_sizes: Vec<usize>,
    /// Per layer, shape (out, in).
    pub weights: Vec<DMatrix<R>>,
    pub biases: Vec<DVector<R>>,
    /// Acceleration normalization, m/s^2.
    pub accel_scale: R,
    /// Mass normalization, kg.
    pub mass_scale: R,
    /// History window length.
    pub h: usize,
}

fn elu<R: Real>(x: R) -> R {
    if x > R::zero() {
        x
    } else {
        x.exp() - R::one()
    }
}

fn elu_grad<R: Real>(x: R) -> R {
    if x > R::zero() {
        R::one()
    } else {
        x.exp()
    }
}

fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

impl<R: Real> MlpModel<R> {
    /// Fresh network with seeded uniform fan-in initialization.
    pub fn new(h: usize, hidden: &[usize], seed: u64) -> Self {
        assert!(h >= 1 && !hidden.is_empty());
        let mut sizes = vec![3 * h + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for win in sizes.windows(2) {
            let (nin, nout) = (win[0], win[1]);
            let bound = (6.0 / nin as f64).sqrt();
            weights.push(DMatrix::from_fn(nout, nin, |_, _| {
                real::<R>(rng.gen_range(-bound..bound))
            }));
            biases.push(DVector::zeros(nout));
        }
        MlpModel {
            layer_sizes: sizes,
            weights,
            biases,
            accel_scale: real(50.0),
            mass_scale: real(2.0),
            h,
        }
    }

    pub fn input_dim(&self) -> usize {
        3 * self.h + 1
    }

    /// Flatten and normalize a window + mass into the network input.
    fn normalize(&self, window: &[Vector3<R>], mass: R) -> Result<DVector<R>> {
        if window.len() != self.h {
            return Err(Error::DimensionMismatch {
                expected: self.h,
                got: window.len(),
            });
        }
        let mut x = DVector::zeros(self.input_dim());
        for (k, a) in window.iter().enumerate() {
            for c in 0..3 {
                x[3 * k + c] = a[c] / self.accel_scale;
            }
        }
        x[3 * self.h] = mass / self.mass_scale;
        Ok(x)
    }

    /// Forward pass storing pre-activations per layer (for backprop).
    fn forward_raw(&self, x: &DVector<R>) -> (Vec<DVector<R>>, R) {
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = w * &act + b;
            pre.push(z.clone());
            if l + 1 < self.weights.len() {
                act = z.map(elu);
            } else {
                act = z;
            }
        }
        let out = sigmoid(act[0]);
        (pre, out)
    }

    /// Failure probability of one history window, in (0, 1).
    pub fn forward(&self, window: &[Vector3<R>], mass: R) -> Result<R> {
        let x = self.normalize(window, mass)?;
        Ok(self.forward_raw(&x).1)
    }

    /// Exact reverse-mode gradient of `forward` with respect to the raw
    /// inputs (3h acceleration components then mass), chaining through the
    /// input normalization.
    pub fn input_jacobian(&self, window: &[Vector3<R>], mass: R) -> Result<DVector<R>> {
        let x = self.normalize(window, mass)?;
        let (pre, out) = self.forward_raw(&x);
        // d out / d z_last = sigmoid'
        let mut delta = DVector::from_element(1, out * (R::one() - out));
        for l in (0..self.weights.len()).rev() {
            if l + 1 < self.weights.len() {
                // through the ELU of layer l
                let z = &pre[l];
                delta = DVector::from_fn(z.len(), |i, _| delta[i] * elu_grad(z[i]));
            }
            if l == 0 {
                let g = self.weights[0].transpose() * &delta;
                let mut grad = DVector::zeros(self.input_dim());
                for k in 0..3 * self.h {
                    grad[k] = g[k] / self.accel_scale;
                }
                grad[3 * self.h] = g[3 * self.h] / self.mass_scale;
                return Ok(grad);
            }
            delta = self.weights[l].transpose() * &delta;
        }
        unreachable!("network has at least one layer");
    }

    /// Backprop of the binary cross-entropy loss on one example into
    /// per-layer weight/bias gradient accumulators.
    fn accumulate_grads(
        &self,
        x: &DVector<R>,
        label: R,
        gw: &mut [DMatrix<R>],
        gb: &mut [DVector<R>],
    ) -> R {
        let (pre, out) = self.forward_raw(x);
        let eps = real::<R>(1e-12);
        let loss = -(label * (out + eps).ln()
            + (R::one() - label) * (R::one() - out + eps).ln());
        // d loss / d z_last simplifies to (out - label) for sigmoid + BCE
        let mut delta = DVector::from_element(1, out - label);
        for l in (0..self.weights.len()).rev() {
            let input = if l == 0 {
                x.clone()
            } else {
                pre[l - 1].map(elu)
            };
            gw[l] += &delta * input.transpose();
            gb[l] += &delta;
            if l > 0 {
                delta = self.weights[l].transpose() * &delta;
                let z = &pre[l - 1];
                delta = DVector::from_fn(z.len(), |i, _| delta[i] * elu_grad(z[i]));
            }
        }
        loss
    }
}

/// Training hyper-parameters: seeded mini-batch Adam on binary cross-entropy.
#[derive(Debug, Clone, Copy)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 20,
            seed: 0,
        }
    }
}

/// Metrics of a finished training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainMetrics {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Recall on label-1 test windows (1.0 when the test set has none).
    pub test_recall: f64,
}

/// Classification threshold used for the accuracy/recall metrics.
const DECISION: f64 = 0.5;

pub fn evaluate<R: Real>(model: &MlpModel<R>, set: &[LabeledWindow<R>]) -> Result<(f64, f64)> {
    let mut correct = 0usize;
    let mut pos_total = 0usize;
    let mut pos_hit = 0usize;
    for w in set {
        let out = to_f64(model.forward(&w.accels, w.mass)?);
        let predicted = out > DECISION;
        if predicted == (w.label == 1) {
            correct += 1;
        }
        if w.label == 1 {
            pos_total += 1;
            if predicted {
                pos_hit += 1;
            }
        }
    }
    let acc = if set.is_empty() {
        1.0
    } else {
        correct as f64 / set.len() as f64
    };
    let recall = if pos_total == 0 {
        1.0
    } else {
        pos_hit as f64 / pos_total as f64
    };
    Ok((acc, recall))
}

/// Minimize binary cross-entropy with seeded mini-batch Adam.
/// Deterministic: identical seeds and data give identical weights.
pub fn train<R: Real>(
    mut model: MlpModel<R>,
    train_set: &[LabeledWindow<R>],
    test_set: &[LabeledWindow<R>],
    params: &TrainParams,
) -> Result<(MlpModel<R>, TrainMetrics)> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inputs: Vec<DVector<R>> = train_set
        .iter()
        .map(|w| model.normalize(&w.accels, w.mass))
        .collect::<Result<_>>()?;
    let labels: Vec<R> = train_set
        .iter()
        .map(|w| real(w.label as f64))
        .collect();

    let lr = real::<R>(params.learning_rate);
    let beta1 = real::<R>(0.9);
    let beta2 = real::<R>(0.999);
    let adam_eps = real::<R>(1e-8);
    let mut m_w: Vec<DMatrix<R>> = model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
    let mut v_w = m_w.clone();
    let mut m_b: Vec<DVector<R>> = model.biases.iter().map(|b| DVector::zeros(b.len())).collect();
    let mut v_b = m_b.clone();
    let mut gw: Vec<DMatrix<R>> = m_w.clone();
    let mut gb: Vec<DVector<R>> = m_b.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;
    let mut last_epoch_loss = 0.0_f64;
    let batch = params.batch_size.max(1);
    for _epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = R::zero();
        for chunk in order.chunks(batch) {
            for g in gw.iter_mut() {
                g.fill(R::zero());
            }
            for g in gb.iter_mut() {
                g.fill(R::zero());
            }
            for &i in chunk {
                epoch_loss += model.accumulate_grads(&inputs[i], labels[i], &mut gw, &mut gb);
            }
            step += 1;
            let scale = R::one() / real::<R>(chunk.len() as f64);
            let bc1 = R::one() - beta1.powi(step as i32);
            let bc2 = R::one() - beta2.powi(step as i32);
            for l in 0..model.weights.len() {
                for (((w, g), m), v) in model.weights[l]
                    .iter_mut()
                    .zip(gw[l].iter())
                    .zip(m_w[l].iter_mut())
                    .zip(v_w[l].iter_mut())
                {
                    let g = *g * scale;
                    *m = beta1 * *m + (R::one() - beta1) * g;
                    *v = beta2 * *v + (R::one() - beta2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + adam_eps);
                }
                for (((b, g), m), v) in model.biases[l]
                    .iter_mut()
                    .zip(gb[l].iter())
                    .zip(m_b[l].iter_mut())
                    .zip(v_b[l].iter_mut())
                {
                    let g = *g * scale;
                    *m = beta1 * *m + (R::one() - beta1) * g;
                    *v = beta2 * *v + (R::one() - beta2) * g * g;
                    *b -= lr * (*m / bc1) / ((*v / bc2).sqrt() + adam_eps);
                }
            }
        }
        last_epoch_loss = to_f64(epoch_loss) / train_set.len() as f64;
    }

    let (train_acc, _) = evaluate(&model, train_set)?;
    let (test_acc, test_recall) = evaluate(&model, test_set)?;
    Ok((
        model,
        TrainMetrics {
            train_loss: last_epoch_loss,
            train_accuracy: train_acc,
            test_accuracy: test_acc,
            test_recall,
        },
    ))
}

// ---------------------------------------------------------------------------
// persistence: plain-text header plus row-major blocks, 17 significant
// digits so a save/load round trip is bit-faithful for f64

fn fmt17<R: Real>(x: R) -> String {
    format!("{:.16e}", to_f64(x))
}

pub fn model_text<R: Real>(model: &MlpModel<R>) -> String {
    let mut out = String::new();
    out.push_str("layers");
    for s in &model.layer_sizes {
        out.push_str(&format!(" {s}"));
    }
    out.push('\n');
    out.push_str(&format!("h {}\n", model.h));
    out.push_str(&format!(
        "accel_scale {}\nmass_scale {}\n",
        fmt17(model.accel_scale),
        fmt17(model.mass_scale)
    ));
    for l in 0..model.weights.len() {
        let w = &model.weights[l];
        out.push_str(&format!("w{} {} {}\n", l, w.nrows(), w.ncols()));
        for r in 0..w.nrows() {
            let row: Vec<String> = (0..w.ncols()).map(|c| fmt17(w[(r, c)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        let b = &model.biases[l];
        out.push_str(&format!("b{} {}\n", l, b.len()));
        let row: Vec<String> = b.iter().map(|&v| fmt17(v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_model_text<R: Real>(text: &str) -> Result<MlpModel<R>> {
    let path = "model file";
    let bad = |msg: &str| Error::parse(path, msg);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("layers") {
        return Err(bad("expected layers header"));
    }
    let layer_sizes: Vec<usize> = parts
        .map(|s| s.parse())
        .collect::<std::result::Result<Vec<usize>, _>>()
        .map_err(|e| bad(&e.to_string()))?;
    if layer_sizes.len() < 2 {
        return Err(bad("need at least two layer sizes"));
    }
    let mut kv = |key: &str| -> Result<f64> {
        let line = lines.next().ok_or_else(|| bad("truncated header"))?;
        let (k, v) = line.split_once(' ').ok_or_else(|| bad("bad header line"))?;
        if k != key {
            return Err(bad(&format!("expected {key}, got {k}")));
        }
        v.parse().map_err(|e: std::num::ParseFloatError| bad(&e.to_string()))
    };
    let h = kv("h")? as usize;
    let accel_scale = kv("accel_scale")?;
    let mass_scale = kv("mass_scale")?;
    if layer_sizes[0] != 3 * h + 1 {
        return Err(bad("input size does not match h"));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..layer_sizes.len() - 1 {
        let head = lines.next().ok_or_else(|| bad("missing weight block"))?;
        let mut p = head.split_whitespace();
        if p.next() != Some(format!("w{l}").as_str()) {
            return Err(bad("bad weight block tag"));
        }
        let rows: usize = p.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad rows"))?;
        let cols: usize = p.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad cols"))?;
        if rows != layer_sizes[l + 1] || cols != layer_sizes[l] {
            return Err(bad("weight shape mismatch"));
        }
        let mut w = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            let line = lines.next().ok_or_else(|| bad("missing weight row"))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| bad(&e.to_string()))?;
            if vals.len() != cols {
                return Err(bad("ragged weight row"));
            }
            for c in 0..cols {
                w[(r, c)] = real(vals[c]);
            }
        }
        weights.push(w);
        let head = lines.next().ok_or_else(|| bad("missing bias block"))?;
        let mut p = head.split_whitespace();
        if p.next() != Some(format!("b{l}").as_str()) {
            return Err(bad("bad bias block tag"));
        }
        let len: usize = p.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad bias len"))?;
        if len != layer_sizes[l + 1] {
            return Err(bad("bias shape mismatch"));
        }
        let line = lines.next().ok_or_else(|| bad("missing bias row"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| bad(&e.to_string()))?;
        if vals.len() != len {
            return Err(bad("ragged bias row"));
        }
        biases.push(DVector::from_iterator(len, vals.iter().map(|&v| real(v))));
    }
    Ok(MlpModel {
        layer_sizes,
        weights,
        biases,
        accel_scale: real(accel_scale),
        mass_scale: real(mass_scale),
        h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;

    fn window(h: usize, mag: f64) -> Vec<Vector3<f64>> {
        (0..h).map(|_| Vector3::new(0.0, 0.0, mag)).collect()
    }

    #[test]
    fn zero_network_outputs_half() {
        let mut model = MlpModel::<f64>::new(6, &[64, 64], 0);
        for w in &mut model.weights {
            w.fill(0.0);
        }
        for b in &mut model.biases {
            b.fill(0.0);
        }
        let out = model.forward(&window(6, 30.0), 1.5).unwrap();
        assert_eq!(out, 0.5);
        let grad = model.input_jacobian(&window(6, 30.0), 1.5).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn output_stays_in_unit_interval() {
        let model = MlpModel::<f64>::new(4, &[32, 32], 3);
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..200 {
            let w: Vec<Vector3<f64>> = (0..4)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-200.0..200.0),
                        rng.gen_range(-200.0..200.0),
                        rng.gen_range(-200.0..200.0),
                    )
                })
                .collect();
            let out = model.forward(&w, rng.gen_range(0.1..5.0)).unwrap();
            assert!(out > 0.0 && out < 1.0);
        }
    }

    #[test]
    fn window_length_mismatch_rejected() {
        let model = MlpModel::<f64>::new(6, &[8], 0);
        assert!(matches!(
            model.forward(&window(5, 1.0), 1.0),
            Err(Error::DimensionMismatch { expected: 6, got: 5 })
        ));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = StdRng::seed_from_u64(17);
        for trial in 0..50 {
            let h = 1 + trial % 6;
            let model = MlpModel::<f64>::new(h, &[24, 16], trial as u64);
            let w: Vec<Vector3<f64>> = (0..h)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-60.0..60.0),
                        rng.gen_range(-60.0..60.0),
                        rng.gen_range(-60.0..60.0),
                    )
                })
                .collect();
            let mass = rng.gen_range(0.5..3.0);
            let grad = model.input_jacobian(&w, mass).unwrap();
            let step = 1e-5;
            let mut max_rel = 0.0_f64;
            let norm = grad.norm().max(1e-12);
            for k in 0..3 * h + 1 {
                let perturb = |sign: f64| -> f64 {
                    let mut wp = w.clone();
                    let mut mp = mass;
                    if k < 3 * h {
                        wp[k / 3][k % 3] += sign * step;
                    } else {
                        mp += sign * step;
                    }
                    model.forward(&wp, mp).unwrap()
                };
                let fd = (perturb(1.0) - perturb(-1.0)) / (2.0 * step);
                max_rel = max_rel.max((grad[k] - fd).abs() / norm);
            }
            assert!(max_rel <= 1e-4, "trial {trial}: max rel err {max_rel}");
        }
    }

    #[test]
    fn saturated_output_shrinks_gradient() {
        let model = MlpModel::<f64>::new(3, &[16], 5);
        // find an input with positive logit, then scale it up
        let mut base = window(3, 20.0);
        let mut out = model.forward(&base, 1.5).unwrap();
        if out < 0.5 {
            for a in &mut base {
                *a = -*a;
            }
            out = model.forward(&base, 1.5).unwrap();
        }
        assert!(out > 0.5);
        let g1 = model.input_jacobian(&base, 1.5).unwrap().norm();
        let scaled: Vec<Vector3<f64>> = base.iter().map(|a| a * 100.0).collect();
        let g2 = model.input_jacobian(&scaled, 1.5).unwrap().norm();
        assert!(g2 < g1, "saturation must shrink the gradient: {g2} vs {g1}");
    }

    fn synthetic_set(n: usize, h: usize, seed: u64) -> Vec<LabeledWindow<f64>> {
        // separable: label 1 iff mean |a| exceeds 40 m/s^2, with a margin
        // band so the boundary is learnable from finite data
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut mag = rng.gen_range(5.0..75.0);
                if (37.0..43.0).contains(&mag) {
                    mag += 6.0;
                }
                let label = u8::from(mag > 40.0);
                LabeledWindow {
                    lift_id: i,
                    mass: rng.gen_range(1.0..2.0),
                    label,
                    accels: (0..h)
                        .map(|_| Vector3::new(0.0, mag * 0.1, mag))
                        .collect(),
                }
            })
            .collect()
    }

    #[test]
    fn trains_separable_data_to_high_accuracy() {
        let train_set = synthetic_set(600, 3, 11);
        let test_set = synthetic_set(200, 3, 12);
        let model = MlpModel::<f64>::new(3, &[24, 16], 1);
        let params = TrainParams {
            epochs: 50,
            ..TrainParams::default()
        };
        let (_, metrics) = train(model, &train_set, &test_set, &params).unwrap();
        assert!(
            metrics.test_accuracy >= 0.99,
            "test accuracy {}",
            metrics.test_accuracy
        );
    }

    #[test]
    fn memorizes_a_single_example() {
        let set = vec![LabeledWindow {
            lift_id: 0,
            mass: 1.5_f64,
            label: 1,
            accels: vec![Vector3::new(0.0, 0.0, 50.0); 2],
        }];
        let model = MlpModel::<f64>::new(2, &[16], 0);
        let params = TrainParams {
            epochs: 300,
            batch_size: 1,
            learning_rate: 3e-3,
            seed: 4,
        };
        let (_, metrics) = train(model, &set, &[], &params).unwrap();
        assert!(metrics.train_loss < 1e-2, "loss {}", metrics.train_loss);
        assert_eq!(metrics.train_accuracy, 1.0);
    }

    #[test]
    fn empty_training_set_rejected() {
        let model = MlpModel::<f64>::new(2, &[8], 0);
        assert!(matches!(
            train(model, &[], &[], &TrainParams::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let set = synthetic_set(200, 2, 3);
        let params = TrainParams {
            epochs: 5,
            ..TrainParams::default()
        };
        let (m1, _) = train(MlpModel::<f64>::new(2, &[16], 7), &set, &[], &params).unwrap();
        let (m2, _) = train(MlpModel::<f64>::new(2, &[16], 7), &set, &[], &params).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let set = synthetic_set(100, 3, 9);
        let params = TrainParams {
            epochs: 3,
            ..TrainParams::default()
        };
        let (model, _) = train(MlpModel::<f64>::new(3, &[12, 8], 2), &set, &[], &params).unwrap();
        let text = model_text(&model);
        let back: MlpModel<f64> = read_model_text(&text).unwrap();
        assert_eq!(model, back);
        let w = window(3, 33.3);
        assert_eq!(
            model.forward(&w, 1.7).unwrap(),
            back.forward(&w, 1.7).unwrap()
        );
    }
}
