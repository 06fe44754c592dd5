use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::layers::{layer_index, NUM_LAYERS};
use super::model::{ActivationRecord, PointNet, Seeds};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Value and partial derivatives of a scalar objective evaluated on one
/// forward pass. Absent parts are treated as zero.
#[derive(Clone, Debug)]
pub struct ObjectiveValue<T> {
    pub value: T,
    /// Direct dependence on the input coordinates (N x 3).
    pub d_input: Option<Array2<T>>,
    pub d_logits: Option<Array1<T>>,
    /// Dependence on recorded activations, by canonical layer index.
    pub d_layers: Vec<(usize, Array1<T>)>,
}

impl<T: Scalar> ObjectiveValue<T> {
    pub fn constant(value: T) -> Self {
        Self {
            value,
            d_input: None,
            d_logits: None,
            d_layers: Vec::new(),
        }
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: ObjectiveValue<T>) -> Result<()> {
        self.value = self.value + other.value;
        merge2(&mut self.d_input, other.d_input)?;
        match (&mut self.d_logits, other.d_logits) {
            (Some(a), Some(b)) if a.len() == b.len() => *a += &b,
            (Some(_), Some(_)) => return Err(Error::contract("logit derivatives differ in length")),
            (slot @ None, b) => *slot = b,
            _ => {}
        }
        self.d_layers.extend(other.d_layers);
        Ok(())
    }

    pub fn d_layer_named(&mut self, name: &str, d: Array1<T>) -> Result<()> {
        let l = layer_index(name).ok_or_else(|| Error::contract(format!("unknown layer {name:?}")))?;
        self.d_layers.push((l, d));
        Ok(())
    }
}

fn merge2<T: Scalar>(a: &mut Option<Array2<T>>, b: Option<Array2<T>>) -> Result<()> {
    match (a.as_mut(), b) {
        (Some(x), Some(y)) => {
            if x.dim() != y.dim() {
                return Err(Error::contract("input derivatives differ in shape"));
            }
            *x += &y;
        }
        (None, y @ Some(_)) => *a = y,
        _ => {}
    }
    Ok(())
}

/// A scalar function of (input, logits, activation record).
pub trait Objective<T: Scalar> {
    fn evaluate(
        &self,
        input: ArrayView2<'_, T>,
        logits: ArrayView1<'_, T>,
        record: &ActivationRecord<T>,
    ) -> Result<ObjectiveValue<T>>;
}

impl<T, F> Objective<T> for F
where
    T: Scalar,
    F: Fn(ArrayView2<'_, T>, ArrayView1<'_, T>, &ActivationRecord<T>) -> Result<ObjectiveValue<T>>,
{
    fn evaluate(
        &self,
        input: ArrayView2<'_, T>,
        logits: ArrayView1<'_, T>,
        record: &ActivationRecord<T>,
    ) -> Result<ObjectiveValue<T>> {
        self(input, logits, record)
    }
}

/// Objective value and its gradient with respect to every input coordinate.
pub fn input_gradient<T: Scalar, O: Objective<T> + ?Sized>(
    model: &PointNet<T>,
    cloud: ArrayView2<'_, T>,
    objective: &O,
) -> Result<(T, Array2<T>)> {
    let tape = model.forward_tape(cloud)?;
    let out = objective.evaluate(tape.input(), tape.logits(), tape.record())?;
    if let Some(d) = &out.d_input {
        if d.dim() != cloud.dim() {
            return Err(Error::contract(format!(
                "objective input derivative has shape {:?}, cloud is {:?}",
                d.dim(),
                cloud.dim()
            )));
        }
    }
    if out.d_layers.iter().any(|(l, _)| *l >= NUM_LAYERS) {
        return Err(Error::contract("objective seeded an unknown layer"));
    }
    let seeds = Seeds {
        logits: out.d_logits,
        layers: out.d_layers,
    };
    let mut grad = model.backward(&tape, &seeds, None)?;
    if let Some(d) = out.d_input {
        grad += &d;
    }
    Ok((out.value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Widths;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_objective_has_unit_gradient() {
        let m = PointNet::<f64>::new(3, Widths { conv: [4, 4, 4], fc: [4, 4] }, 0).unwrap();
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let obj = |inp: ArrayView2<'_, f64>, _: ArrayView1<'_, f64>, _: &ActivationRecord<f64>| {
            Ok(ObjectiveValue {
                value: inp.sum(),
                d_input: Some(Array2::ones(inp.dim())),
                d_logits: None,
                d_layers: vec![],
            })
        };
        let (v, g) = input_gradient(&m, x.view(), &obj).unwrap();
        assert!((v - x.sum()).abs() < 1e-12);
        assert!(g.iter().all(|&e| e == 1.0));
    }

    #[test]
    fn mis_shaped_input_derivative_is_a_contract_error() {
        let m = PointNet::<f64>::new(3, Widths { conv: [4, 4, 4], fc: [4, 4] }, 0).unwrap();
        let x = Array2::<f64>::zeros((5, 3));
        let obj = |_: ArrayView2<'_, f64>, _: ArrayView1<'_, f64>, _: &ActivationRecord<f64>| {
            Ok(ObjectiveValue {
                value: 0.0,
                d_input: Some(Array2::ones((2, 3))),
                d_logits: None,
                d_layers: vec![],
            })
        };
        assert!(matches!(input_gradient(&m, x.view(), &obj), Err(Error::Contract(_))));
    }

    #[test]
    fn record_seeds_match_finite_differences() {
        let mut m = PointNet::<f64>::new(3, Widths { conv: [8, 12, 16], fc: [10, 6] }, 21).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for v in m.params_mut() {
            *v += r.random_range(-0.05..0.05);
        }
        let x = Array2::from_shape_fn((16, 3), |_| r.random_range(-1.0..1.0));
        let weights: Vec<Array1<f64>> = (0..NUM_LAYERS)
            .map(|l| Array1::from_shape_fn(m.layer_width(l), |_| r.random_range(-1.0..1.0)))
            .collect();
        // Linear functional of every record vector plus the logits.
        let obj = |_: ArrayView2<'_, f64>, logits: ArrayView1<'_, f64>, rec: &ActivationRecord<f64>| {
            let mut value = logits[1];
            let mut d_layers = vec![];
            for (l, w) in weights.iter().enumerate() {
                value += w.dot(&rec.by_index(l));
                d_layers.push((l, w.clone()));
            }
            let mut d = Array1::zeros(3);
            d[1] = 1.0;
            Ok(ObjectiveValue {
                value,
                d_input: None,
                d_logits: Some(d),
                d_layers,
            })
        };
        let (_, g) = input_gradient(&m, x.view(), &obj).unwrap();
        let h = 1e-6;
        for i in 0..16 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let (up, _) = input_gradient(&m, xp.view(), &obj).unwrap();
                xp[[i, j]] -= 2.0 * h;
                let (down, _) = input_gradient(&m, xp.view(), &obj).unwrap();
                let fd = (up - down) / (2.0 * h);
                let err = (fd - g[[i, j]]).abs() / fd.abs().max(g[[i, j]].abs()).max(1e-3);
                assert!(err < 1e-4, "({i},{j}): fd {fd} analytic {}", g[[i, j]]);
            }
        }
    }
}
