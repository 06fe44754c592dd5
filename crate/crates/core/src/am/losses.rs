use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{AlignmentPlan, ClassProfile};
use crate::nn::{layer_index, ActivationRecord};
use crate::scalar::{lit, Scalar};
use crate::spatial::{self_nearest, Strategy};

/// Per-term loss values of one candidate cloud.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub l_am: f64,
    pub l_la: f64,
    pub l_c: f64,
    pub l_lr: f64,
}

/// `L_AM + (1 - beta) L_LA + beta L_C + L_LR`.
pub fn loss_flow_total(c: &LossComponents, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::config(format!("beta must lie in [0, 1], got {beta}")));
    }
    Ok(c.l_am + (1.0 - beta) * c.l_la + beta * c.l_c + c.l_lr)
}

fn check_class(k: usize, c: usize) -> Result<()> {
    if c >= k {
        return Err(Error::contract(format!("target class {c} out of range for {k} logits")));
    }
    Ok(())
}

/// `-logits[c]`.
pub fn loss_am<T: Scalar>(logits: ArrayView1<'_, T>, c: usize) -> Result<T> {
    check_class(logits.len(), c)?;
    Ok(-logits[c])
}

pub fn loss_am_grad<T: Scalar>(logits: ArrayView1<'_, T>, c: usize) -> Result<(T, Array1<T>)> {
    let v = loss_am(logits, c)?;
    let mut d = Array1::zeros(logits.len());
    d[c] = -T::one();
    Ok((v, d))
}

/// Alignment target for one layer: weight and class mean.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignTarget<T> {
    pub layer: usize,
    pub weight: f64,
    pub mean: Array1<T>,
}

/// Resolves a plan against a class profile.
pub fn alignment_targets<T: Scalar>(profile: &ClassProfile, plan: &AlignmentPlan, c: usize) -> Result<Vec<AlignTarget<T>>> {
    plan.entries()
        .iter()
        .map(|e| {
            let layer = layer_index(&e.layer).ok_or_else(|| Error::contract(format!("unknown layer {}", e.layer)))?;
            Ok(AlignTarget {
                layer,
                weight: e.weight,
                mean: profile.mean(c, &e.layer)?.mapv(T::from_f64),
            })
        })
        .collect()
}

/// `-sum_l alpha_l cos(omega_l, a_l)` and its derivative with respect to each
/// recorded vector `a_l`. Zero vectors contribute 0 with zero gradient.
pub fn latent_alignment_grad<T: Scalar>(
    record: &ActivationRecord<T>,
    targets: &[AlignTarget<T>],
) -> Result<(T, Vec<(usize, Array1<T>)>)> {
    let mut total = T::zero();
    let mut seeds = Vec::with_capacity(targets.len());
    for t in targets {
        let a = record.by_index(t.layer);
        if a.len() != t.mean.len() {
            return Err(Error::contract(format!(
                "profile width {} does not match layer width {} at {}",
                t.mean.len(),
                a.len(),
                crate::nn::LAYER_NAMES[t.layer]
            )));
        }
        let w: T = lit(t.weight);
        let na2 = a.dot(&a);
        let nw2 = t.mean.dot(&t.mean);
        if na2 == T::zero() || nw2 == T::zero() {
            seeds.push((t.layer, Array1::zeros(a.len())));
            continue;
        }
        let (na, nw) = (na2.sqrt(), nw2.sqrt());
        let cos = t.mean.dot(&a) / (na * nw);
        total = total - w * cos;
        // d cos / d a = omega / (|omega| |a|) - cos a / |a|^2
        let g = (&t.mean * (-w / (na * nw))) + &a.mapv(|v| v * (w * cos / na2));
        seeds.push((t.layer, g));
    }
    Ok((total, seeds))
}

pub fn loss_latent_alignment<T: Scalar>(
    record: &ActivationRecord<T>,
    profile: &ClassProfile,
    plan: &AlignmentPlan,
    c: usize,
) -> Result<T> {
    let targets = alignment_targets(profile, plan, c)?;
    Ok(latent_alignment_grad(record, &targets)?.0)
}

fn row<T: Scalar>(x: &ArrayView2<'_, T>, i: usize) -> [f64; 3] {
    [x[[i, 0]].to_f64(), x[[i, 1]].to_f64(), x[[i, 2]].to_f64()]
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// `sum_i |B - (min_{j != i} |p_i - p_j| + |p_i|)|` with its gradient
/// (nearest neighbours held fixed; ties go to the lowest index).
pub fn continuity_grad<T: Scalar>(cloud: ArrayView2<'_, T>, boundary: f64) -> Result<(T, Array2<T>)> {
    let n = cloud.nrows();
    if n < 2 {
        return Err(Error::input("continuity needs at least two points"));
    }
    let nn = self_nearest(&cloud, Strategy::Auto);
    let mut grad = Array2::<f64>::zeros((n, 3));
    let mut total = 0.0;
    for (i, nb) in nn.iter().enumerate() {
        let nb = nb.expect("n >= 2");
        let p = row(&cloud, i);
        let q = row(&cloud, nb.index);
        let diff = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
        let d = norm3(diff);
        let r = norm3(p);
        let resid = boundary - (d + r);
        total += resid.abs();
        let s = if resid > 0.0 {
            1.0
        } else if resid < 0.0 {
            -1.0
        } else {
            0.0
        };
        for k in 0..3 {
            if d > 0.0 {
                let g = s * diff[k] / d;
                grad[[i, k]] -= g;
                grad[[nb.index, k]] += g;
            }
            if r > 0.0 {
                grad[[i, k]] -= s * p[k] / r;
            }
        }
    }
    Ok((lit(total), grad.mapv(T::from_f64)))
}

pub fn loss_continuity<T: Scalar>(cloud: ArrayView2<'_, T>, boundary: f64) -> Result<T> {
    Ok(continuity_grad(cloud, boundary)?.0)
}

/// `sum_i sum_axis ReLU(|p_i,axis| - C)` with its gradient.
pub fn legal_grad<T: Scalar>(cloud: ArrayView2<'_, T>, constraint: f64) -> (T, Array2<T>) {
    let c: T = lit(constraint);
    let mut total = 0.0f64;
    let grad = cloud.mapv(|v| {
        let excess = v.abs() - c;
        if excess > T::zero() {
            total += excess.to_f64();
            v.signum()
        } else {
            T::zero()
        }
    });
    (lit(total), grad)
}

pub fn loss_legal<T: Scalar>(cloud: ArrayView2<'_, T>, constraint: f64) -> T {
    legal_grad(cloud, constraint).0
}

/// Point-cloud total variation: `sum_i |p_i - p_nn(i)|_1` with gradient.
pub fn total_variation_grad<T: Scalar>(cloud: ArrayView2<'_, T>) -> Result<(T, Array2<T>)> {
    let n = cloud.nrows();
    if n < 2 {
        return Err(Error::input("total variation needs at least two points"));
    }
    let nn = self_nearest(&cloud, Strategy::Auto);
    let mut grad = Array2::<f64>::zeros((n, 3));
    let mut total = 0.0;
    for (i, nb) in nn.iter().enumerate() {
        let j = nb.expect("n >= 2").index;
        let (p, q) = (row(&cloud, i), row(&cloud, j));
        for k in 0..3 {
            let d = p[k] - q[k];
            total += d.abs();
            let s = d.signum() * (d != 0.0) as u8 as f64;
            grad[[i, k]] += s;
            grad[[j, k]] -= s;
        }
    }
    Ok((lit(total), grad.mapv(T::from_f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn am_hand_cases() {
        assert_eq!(loss_am(arr1(&[1.0, 2.0, 3.0]).view(), 2).unwrap(), -3.0);
        assert_eq!(loss_am(arr1(&[0.0f32; 4]).view(), 1).unwrap(), 0.0);
        assert!(matches!(loss_am(arr1(&[1.0]).view(), 1), Err(Error::Contract(_))));
    }

    #[test]
    fn legal_hand_cases() {
        assert_eq!(loss_legal(arr2(&[[1.5, 0.0, 0.0]]).view(), 1.0), 0.5);
        assert_eq!(loss_legal(arr2(&[[1.5, -2.0, 0.0]]).view(), 1.0), 1.5);
        assert_eq!(loss_legal(arr2(&[[1.0, -1.0, 0.3], [0.0, 0.9, -0.99]]).view(), 1.0), 0.0);
    }

    #[test]
    fn continuity_hand_cases() {
        let v = |pts: [[f64; 3]; 2]| loss_continuity(arr2(&pts).view(), 1.0).unwrap();
        assert_eq!(v([[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]]), 1.0);
        assert_eq!(v([[0.25, 0.0, 0.0], [-0.25, 0.0, 0.0]]), 0.5);
        let t = 1.0 / 3.0;
        assert!(v([[t, 0.0, 0.0], [-t, 0.0, 0.0]]).abs() < 1e-15);
        assert!(matches!(loss_continuity(arr2(&[[0.0, 0.0, 0.0]]).view(), 1.0), Err(Error::Input(_))));
    }

    /// Scans symmetric pairs +-r e1 and finds the zero of the continuity loss.
    #[test]
    fn brute_force_zero_is_one_third() {
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..30_000 {
            let r = k as f64 / 60_000.0;
            let l = loss_continuity(arr2(&[[r, 0.0, 0.0], [-r, 0.0, 0.0]]).view(), 1.0).unwrap();
            if l < best.0 {
                best = (l, r);
            }
        }
        assert!((best.1 - 1.0 / 3.0).abs() < 1e-4, "{best:?}");
    }

    fn record_with(fill: &[(usize, Vec<f64>)]) -> ActivationRecord<f64> {
        let mut v: Vec<Array1<f64>> = (0..crate::nn::NUM_LAYERS).map(|_| Array1::zeros(1)).collect();
        for (l, x) in fill {
            v[*l] = Array1::from(x.clone());
        }
        ActivationRecord::from_values(v).unwrap()
    }

    fn target(layer: &str, weight: f64, mean: &[f64]) -> AlignTarget<f64> {
        AlignTarget {
            layer: layer_index(layer).unwrap(),
            weight,
            mean: Array1::from(mean.to_vec()),
        }
    }

    #[test]
    fn alignment_hand_cases() {
        let fc2 = layer_index("fc2").unwrap();
        let fc1 = layer_index("fc1").unwrap();
        let rec = record_with(&[(fc2, vec![1.0, 2.0, 3.0]), (fc1, vec![0.0, 1.0, 0.0])]);
        let same = [target("fc2", 0.1, &[1.0, 2.0, 3.0]), target("fc1", 1.0, &[0.0, 1.0, 0.0])];
        let (v, _) = latent_alignment_grad(&rec, &same).unwrap();
        assert!((v + 1.1).abs() < 1e-12);
        let orth = [target("fc1", 1.0, &[1.0, 0.0, 0.0])];
        assert_eq!(latent_alignment_grad(&rec, &orth).unwrap().0, 0.0);
        let mixed = [target("fc2", 0.1, &[4.0, 5.0, 6.0]), target("fc1", 1.0, &[1.0, 1.0, 0.0])];
        let want = -(0.1 * 32.0 / (14f64.sqrt() * 77f64.sqrt()) + 1.0 / 2f64.sqrt());
        assert!((latent_alignment_grad(&rec, &mixed).unwrap().0 - want).abs() < 1e-6);
        let wrong = [target("fc2", 1.0, &[1.0, 2.0])];
        assert!(matches!(latent_alignment_grad(&rec, &wrong), Err(Error::Contract(_))));
    }

    #[test]
    fn total_is_affine_in_beta() {
        let c = LossComponents {
            l_am: -16.0,
            l_la: -1.2,
            l_c: 3.0,
            l_lr: 0.02,
        };
        assert!((loss_flow_total(&c, 0.1).unwrap() + 16.76).abs() < 1e-12);
        assert_eq!(loss_flow_total(&c, 0.0).unwrap(), c.l_am + c.l_la + c.l_lr);
        assert_eq!(loss_flow_total(&c, 1.0).unwrap(), c.l_am + c.l_c + c.l_lr);
        let slope = loss_flow_total(&c, 1.0).unwrap() - loss_flow_total(&c, 0.0).unwrap();
        assert!((slope - (c.l_c - c.l_la)).abs() < 1e-12);
        assert!(matches!(loss_flow_total(&c, 1.5), Err(Error::Config(_))));
    }
}
