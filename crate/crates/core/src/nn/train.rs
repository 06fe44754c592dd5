use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::T2_FC3;
use super::model::{Gradients, PointNet, Seeds};
use crate::data::{Instance, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled (AdamW-style) weight decay.
    pub weight_decay: f64,
    /// Weight of ||A A^T - I||^2 on the feature transform A.
    pub ortho_weight: f64,
    /// Random rotation about the vertical axis for every training sample.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            ortho_weight: 1e-3,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.weight_decay < 0.0 || self.ortho_weight < 0.0 {
            return Err(Error::config("weight decay and orthogonality weight must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Adam state over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step<T: Scalar>(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            let g = g.to_f64();
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let delta = self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p = T::from_f64(p.to_f64() - delta);
        }
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax<T: Scalar>(logits: &Array1<T>) -> Array1<T> {
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    logits.mapv(|v| v - lse)
}

pub fn argmax<T: Scalar>(v: &Array1<T>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &PointNet<f32>, cloud: &Array2<f32>) -> Result<usize> {
    let (logits, _) = model.forward(cloud.view(), false)?;
    Ok(argmax(&logits))
}

/// Fraction of instances whose argmax prediction equals their label.
pub fn accuracy(model: &PointNet<f32>, instances: &[Instance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::input("accuracy of an empty instance list"));
    }
    let hits: Vec<bool> = instances
        .par_iter()
        .map(|inst| Ok(predict(model, &inst.cloud.to_array())? == inst.label()))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / instances.len() as f64)
}

fn rotate_z(x: &mut Array2<f32>, theta: f32) {
    let (s, c) = theta.sin_cos();
    for mut row in x.axis_iter_mut(Axis(0)) {
        let (a, b) = (row[0], row[1]);
        row[0] = c * a - s * b;
        row[1] = s * a + c * b;
    }
}

struct SampleOutcome {
    loss: f64,
    correct: bool,
    grads: Gradients<f32>,
}

fn sample_gradient(model: &PointNet<f32>, x: &Array2<f32>, label: usize, ortho: f64) -> Result<SampleOutcome> {
    let tape = model.forward_tape(x.view())?;
    let logits = tape.logits().to_owned();
    let logp = log_softmax(&logits);
    let mut d_logits = logp.mapv(f32::exp);
    d_logits[label] -= 1.0;
    let mut loss = -(logp[label] as f64);
    let mut seeds = Seeds {
        logits: Some(d_logits),
        layers: Vec::new(),
    };
    if ortho > 0.0 {
        let a = tape.feature_transform();
        let mut m = a.dot(&a.t());
        m.diag_mut().mapv_inplace(|v| v - 1.0);
        loss += ortho * m.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
        let d = m.dot(&a) * (4.0 * ortho) as f32;
        let k = d.len();
        seeds.layers.push((T2_FC3, d.into_shape_with_order(k).expect("contiguous")));
    }
    let mut grads = Gradients::zeros_like(model);
    model.backward(&tape, &seeds, Some(&mut grads))?;
    Ok(SampleOutcome {
        loss,
        correct: argmax(&logits) == label,
        grads,
    })
}

/// Mini-batch Adam on cross-entropy plus the feature-transform
/// orthogonality penalty. Per-sample gradients are computed in parallel and
/// summed in sample order, so results do not depend on the thread count.
pub fn train(model: &mut PointNet<f32>, data: &LabeledDataset, config: &TrainConfig) -> Result<Vec<EpochStats>> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::input("training split is empty"));
    }
    let k = model.num_classes();
    if let Some(bad) = data.train.iter().chain(&data.test).find(|i| i.cloud.label.is_none_or(|l| l >= k)) {
        return Err(Error::input(format!("instance {} has no label in [0, {k})", bad.id)));
    }
    let mut adam = Adam::new(model.num_params(), config.learning_rate);
    let mut params = model.params();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let aug_seed = config.seed ^ rng::key("augment");
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::stream(config.seed, epoch as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let outcomes: Vec<SampleOutcome> = batch
                .par_iter()
                .map(|&i| {
                    let inst = &data.train[i];
                    let mut x = inst.cloud.to_array::<f32>();
                    if config.augment {
                        let mut r = rng::stream(aug_seed, (epoch * data.train.len() + i) as u64);
                        rotate_z(&mut x, r.random_range(0.0..std::f32::consts::TAU));
                    }
                    sample_gradient(model, &x, inst.label(), config.ortho_weight)
                })
                .collect::<Result<_>>()?;
            let mut total = Gradients::zeros_like(model);
            for o in &outcomes {
                loss_sum += o.loss;
                correct += o.correct as usize;
                total.add_assign(&o.grads);
            }
            total.scale(1.0 / batch.len() as f32);
            let g = total.flat();
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::input(format!("non-finite gradient in epoch {epoch}")));
            }
            adam.step(&mut params, &g);
            if config.weight_decay > 0.0 {
                let f = (1.0 - config.learning_rate * config.weight_decay) as f32;
                params.iter_mut().for_each(|p| *p *= f);
            }
            model.set_params(&params)?;
        }
        let n = data.train.len() as f64;
        let test_accuracy = if data.test.is_empty() {
            None
        } else {
            Some(accuracy(model, &data.test)?)
        };
        history.push(EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            test_accuracy,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, ShapeFamily, SyntheticSpec};
    use crate::nn::layers::Widths;

    fn tiny() -> (PointNet<f32>, LabeledDataset) {
        let spec = SyntheticSpec::new(vec![ShapeFamily::Sphere, ShapeFamily::Cube], 6, 64, 3);
        let data = generate_synthetic(&spec).unwrap();
        let m = PointNet::new(2, Widths { conv: [8, 8, 16], fc: [8, 8] }, 1).unwrap();
        (m, data)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let (mut m, data) = tiny();
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let hist = train(&mut m, &data, &cfg).unwrap();
        assert_eq!(hist.len(), 2);
        assert_eq!(m, before);
    }

    #[test]
    fn training_is_deterministic() {
        let (m0, data) = tiny();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (mut a, mut b) = (m0.clone(), m0);
        let ha = train(&mut a, &data, &cfg).unwrap();
        let hb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ha, hb);
        assert_ne!(a.params(), tiny().0.params());
    }

    #[test]
    fn empty_data_and_bad_configs_are_rejected() {
        let (mut m, mut data) = tiny();
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&mut m, &data, &bad), Err(Error::Config(_))));
        data.train.clear();
        assert!(matches!(train(&mut m, &data, &TrainConfig::default()), Err(Error::Input(_))));
    }

    #[test]
    fn log_softmax_of_uniform_logits() {
        let l = log_softmax(&Array1::from(vec![2.5f64; 7]));
        for v in l.iter() {
            assert!((v + 7f64.ln()).abs() < 1e-12);
        }
        let l = log_softmax(&Array1::from(vec![10.0f64, 0.0, 0.0]));
        assert!((l[0] + (1.0 + 2.0 * (-10f64).exp()).ln()).abs() < 1e-15);
    }
}
