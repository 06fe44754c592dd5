use ndarray::{Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{BaselineRegConfig, FlowAmConfig, InitMode, Method, NoiseSite};
use super::losses::{
    alignment_targets, continuity_grad, latent_alignment_grad, legal_grad, total_variation_grad, AlignTarget,
    LossComponents,
};
use super::trace::{AmTrace, Termination, TraceEntry};
use crate::data::{class_average_init, Instance, PointCloud};
use crate::error::{Error, Result};
use crate::flow::ClassProfile;
use crate::nn::{argmax, ActivationRecord, Adam, Objective, ObjectiveValue, PointNet, Seeds};
use crate::rng;
use crate::scalar::{lit, Scalar};
use crate::spatial::k_nearest;

/// Weighted sum of the loss terms, usable with any scalar type.
#[derive(Clone, Debug)]
pub struct AmObjective<T> {
    pub target: usize,
    pub targets: Vec<AlignTarget<T>>,
    pub w_la: f64,
    pub w_c: f64,
    pub w_lr: f64,
    pub w_tv: f64,
    pub boundary: f64,
    pub constraint: f64,
}

/// Loss values of one evaluation, unweighted.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvaluatedLoss {
    pub components: LossComponents,
    pub l_reg: f64,
    pub total: f64,
}

impl<T: Scalar> AmObjective<T> {
    pub fn evaluate_parts(
        &self,
        input: ArrayView2<'_, T>,
        logits: ArrayView1<'_, T>,
        record: &ActivationRecord<T>,
    ) -> Result<(EvaluatedLoss, ObjectiveValue<T>)> {
        if self.target >= logits.len() {
            return Err(Error::contract(format!("target class {} out of range", self.target)));
        }
        let l_am = -logits[self.target];
        let mut d_logits = ndarray::Array1::zeros(logits.len());
        d_logits[self.target] = -T::one();
        let mut out = ObjectiveValue {
            value: l_am,
            d_input: None,
            d_logits: Some(d_logits),
            d_layers: Vec::new(),
        };
        let mut parts = EvaluatedLoss::default();
        parts.components.l_am = l_am.to_f64();

        if !self.targets.is_empty() {
            let (v, seeds) = latent_alignment_grad(record, &self.targets)?;
            parts.components.l_la = v.to_f64();
            if self.w_la != 0.0 {
                let w: T = lit(self.w_la);
                out.value = out.value + w * v;
                out.d_layers = seeds.into_iter().map(|(l, g)| (l, g * w)).collect();
            }
        }
        let mut d_input = Array2::<T>::zeros(input.dim());
        if input.nrows() >= 2 {
            let (v, g) = continuity_grad(input, self.boundary)?;
            parts.components.l_c = v.to_f64();
            if self.w_c != 0.0 {
                let w: T = lit(self.w_c);
                out.value = out.value + w * v;
                d_input.scaled_add(w, &g);
            }
        }
        let (v, g) = legal_grad(input, self.constraint);
        parts.components.l_lr = v.to_f64();
        if self.w_lr != 0.0 {
            let w: T = lit(self.w_lr);
            out.value = out.value + w * v;
            d_input.scaled_add(w, &g);
        }
        if self.w_tv != 0.0 {
            let (v, g) = total_variation_grad(input)?;
            parts.l_reg = self.w_tv * v.to_f64();
            let w: T = lit(self.w_tv);
            out.value = out.value + w * v;
            d_input.scaled_add(w, &g);
        }
        out.d_input = Some(d_input);
        parts.total = out.value.to_f64();
        Ok((parts, out))
    }
}

impl<T: Scalar> Objective<T> for AmObjective<T> {
    fn evaluate(
        &self,
        input: ArrayView2<'_, T>,
        logits: ArrayView1<'_, T>,
        record: &ActivationRecord<T>,
    ) -> Result<ObjectiveValue<T>> {
        Ok(self.evaluate_parts(input, logits, record)?.1)
    }
}

/// Data a run may draw on beyond the model itself.
#[derive(Clone, Copy, Debug, Default)]
pub struct AmResources<'a> {
    /// Class mean activations; required by the flow method.
    pub profiles: Option<&'a ClassProfile>,
    /// Instances averaged by the average initialization.
    pub init_pool: Option<&'a [Instance]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationResult {
    pub method: Method,
    pub cloud: PointCloud,
    pub trace: AmTrace,
    pub config: FlowAmConfig,
    pub baseline: Option<BaselineRegConfig>,
    pub model_fingerprint: String,
    pub final_logit: f64,
    pub predicted_class: usize,
}

impl ExplanationResult {
    /// Metadata written next to exported explanation clouds.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "target": self.config.target,
            "class_name": self.cloud.class_name,
            "config": self.config,
            "baseline": self.baseline,
            "model_fingerprint": self.model_fingerprint,
            "iterations": self.trace.len(),
            "termination": self.trace.termination,
            "final_logit": self.final_logit,
            "predicted_class": self.predicted_class,
        })
    }
}

/// Fixed seed for the per-instance resampling of the average initializer.
pub const AVERAGE_INIT_SEED: u64 = 0;

fn rms<'a, I: IntoIterator<Item = &'a f32>>(v: I) -> f64 {
    let (mut s, mut n) = (0.0f64, 0usize);
    for &x in v {
        s += (x as f64) * (x as f64);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

fn add_noise<'a, I: IntoIterator<Item = &'a mut f32>>(values: I, sd: f64, r: &mut impl Rng) {
    for v in values {
        let z: f64 = r.sample(StandardNormal);
        *v += (sd * z) as f32;
    }
}

fn initial_cloud(method: Method, cfg: &FlowAmConfig, res: &AmResources<'_>) -> Result<Array2<f32>> {
    match cfg.resolved_init(method) {
        InitMode::Average => {
            let pool = res
                .init_pool
                .ok_or_else(|| Error::contract("average initialization needs reference instances"))?;
            Ok(class_average_init(pool, cfg.target, cfg.n_points, AVERAGE_INIT_SEED)?.to_array())
        }
        InitMode::UniformRandom => {
            let mut r = rng::stream(cfg.seed, rng::key("uniform-init"));
            let h = cfg.boundary / 2.0;
            Ok(Array2::from_shape_fn((cfg.n_points, 3), |_| r.random_range(-h..h) as f32))
        }
        InitMode::Given { cloud } => {
            if cloud.len() < 2 {
                return Err(Error::input("given initialization needs at least two points"));
            }
            Ok(cloud.to_array())
        }
    }
}

/// Weighted average of each point with its `k` nearest neighbours, weights
/// `exp(-d^2 / (2 sigma^2))` (the point itself has weight 1).
pub fn gaussian_blur(points: ArrayView2<'_, f32>, sigma: f64, k: usize) -> Array2<f32> {
    let n = points.nrows();
    let mut out = Array2::zeros((n, 3));
    let inv = 1.0 / (2.0 * sigma * sigma);
    for i in 0..n {
        let mut acc = [points[[i, 0]] as f64, points[[i, 1]] as f64, points[[i, 2]] as f64];
        let mut wsum = 1.0;
        for nb in k_nearest(&points, i, k) {
            let w = (-nb.sq_dist * inv).exp();
            for (a, c) in acc.iter_mut().zip(0..3) {
                *a += w * points[[nb.index, c]] as f64;
            }
            wsum += w;
        }
        for c in 0..3 {
            out[[i, c]] = (acc[c] / wsum) as f32;
        }
    }
    out
}

fn objective_for(
    method: Method,
    cfg: &FlowAmConfig,
    baseline: &BaselineRegConfig,
    res: &AmResources<'_>,
) -> Result<AmObjective<f32>> {
    let mut obj = AmObjective {
        target: cfg.target,
        targets: Vec::new(),
        w_la: 0.0,
        w_c: 0.0,
        w_lr: 0.0,
        w_tv: 0.0,
        boundary: cfg.boundary,
        constraint: cfg.constraint,
    };
    if let Some(p) = res.profiles {
        obj.targets = alignment_targets(p, &cfg.plan, cfg.target)?;
    }
    match method {
        Method::Flow => {
            if cfg.terms.alignment && !cfg.plan.is_empty() && res.profiles.is_none() {
                return Err(Error::contract("the flow method needs class profiles for latent alignment"));
            }
            obj.w_la = if cfg.terms.alignment { 1.0 - cfg.beta } else { 0.0 };
            obj.w_c = if cfg.terms.continuity { cfg.beta } else { 0.0 };
            obj.w_lr = if cfg.terms.legal { 1.0 } else { 0.0 };
        }
        Method::TotalVariation => obj.w_tv = baseline.tv_weight,
        _ => {}
    }
    Ok(obj)
}

/// Gradient-based activation maximization for one target class.
pub fn generate(
    model: &PointNet<f32>,
    method: Method,
    cfg: &FlowAmConfig,
    baseline: &BaselineRegConfig,
    res: &AmResources<'_>,
) -> Result<ExplanationResult> {
    cfg.validate()?;
    baseline.validate()?;
    if cfg.target >= model.num_classes() {
        return Err(Error::config(format!(
            "target class {} out of range for a {}-class model",
            cfg.target,
            model.num_classes()
        )));
    }
    let mut obj = objective_for(method, cfg, baseline, res)?;
    let noise = cfg.noise;
    let noisy = noise.amplitude > 0.0 && noise.site != NoiseSite::None;
    let mut noise_rng = rng::stream(cfg.seed, rng::key("noise"));

    let mut x = initial_cloud(method, cfg, res)?;
    if noisy && noise.site == NoiseSite::Init {
        let sd = noise.amplitude * rms(x.iter());
        add_noise(x.iter_mut(), sd, &mut noise_rng);
    }
    if noisy && noise.site == NoiseSite::Latent {
        for t in &mut obj.targets {
            let sd = noise.amplitude * rms(t.mean.iter());
            add_noise(t.mean.iter_mut(), sd, &mut noise_rng);
        }
    }

    let mut adam = Adam::new(x.len(), cfg.learning_rate);
    let mut entries: Vec<TraceEntry> = Vec::with_capacity(cfg.max_iterations);
    let mut termination = Termination::BudgetExhausted;
    for it in 0..cfg.max_iterations {
        let tape = model.forward_tape(x.view())?;
        let (parts, out) = obj.evaluate_parts(tape.input(), tape.logits(), tape.record())?;
        let mut grad = model.backward(
            &tape,
            &Seeds {
                logits: out.d_logits,
                layers: out.d_layers,
            },
            None,
        )?;
        if let Some(d) = out.d_input {
            grad += &d;
        }
        let grad_norm = grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
        let c = parts.components;
        entries.push(TraceEntry {
            iteration: it,
            logit: tape.logits()[cfg.target] as f64,
            l_am: c.l_am,
            l_la: c.l_la,
            l_c: c.l_c,
            l_lr: c.l_lr,
            l_reg: parts.l_reg,
            total: parts.total,
            grad_norm,
        });
        if !parts.total.is_finite() || !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                iteration: it,
                trace: Box::new(AmTrace {
                    entries,
                    termination: Termination::NonFinite,
                }),
            });
        }
        if it >= cfg.window {
            let now = entries[it].logit;
            let then = entries[it - cfg.window].logit;
            if (now - then).abs() / then.abs().max(1e-12) < cfg.tolerance {
                termination = Termination::Converged;
                break;
            }
        }

        let mut y = x.clone();
        adam.step(y.as_slice_mut().expect("standard layout"), grad.as_slice().expect("standard layout"));
        if noisy && noise.site == NoiseSite::Iteration {
            let mut delta = &y - &x;
            let sd = noise.amplitude * rms(delta.iter());
            add_noise(delta.iter_mut(), sd, &mut noise_rng);
            y = &x + &delta;
        }
        x = match method {
            Method::L2 => y * (1.0 - baseline.theta_l2) as f32,
            Method::GaussianBlur => gaussian_blur(y.view(), baseline.blur_sigma, baseline.blur_k),
            _ => y,
        };
        if !Zip::from(&x).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                iteration: it,
                trace: Box::new(AmTrace {
                    entries,
                    termination: Termination::NonFinite,
                }),
            });
        }
    }

    let (logits, _) = model.forward(x.view(), false)?;
    let mut cloud = PointCloud::from_array(x.view())?;
    cloud.label = Some(cfg.target);
    if let Some(e) = res.profiles.and_then(|p| p.entry(cfg.target)) {
        cloud.class_name = Some(e.name.clone());
    } else if let Some(inst) = res.init_pool.and_then(|p| p.iter().find(|i| i.label() == cfg.target)) {
        cloud.class_name = inst.cloud.class_name.clone();
    }
    Ok(ExplanationResult {
        method,
        cloud,
        trace: AmTrace { entries, termination },
        config: cfg.clone(),
        baseline: (method != Method::Flow).then(|| baseline.clone()),
        model_fingerprint: model.fingerprint(),
        final_logit: logits[cfg.target] as f64,
        predicted_class: argmax(&logits),
    })
}
