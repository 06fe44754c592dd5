use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::layers::*;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Fully connected map `y = x W + b`; `weight` is stored input-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(inp: usize, out: usize) -> Self {
        Self {
            weight: Array2::zeros((inp, out)),
            bias: Array1::zeros(out),
        }
    }

    fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// PointNet-style classifier: input transform network, point-wise trunk
/// with a feature transform network, global max-pool, and dense head.
/// Batch normalization is omitted; every hidden layer is bias + ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct PointNet<T> {
    num_classes: usize,
    widths: Widths,
    layers: Vec<Dense<T>>,
}

/// Per-layer activation vectors. Per-point layers store the channel-wise
/// maximum over points; global layers store their output vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationRecord<T> {
    values: Vec<Array1<T>>,
}

impl<T: Scalar> ActivationRecord<T> {
    /// Builds a record from one vector per canonical layer.
    pub fn from_values(values: Vec<Array1<T>>) -> Result<Self> {
        if values.len() != NUM_LAYERS {
            return Err(Error::contract(format!("record needs {NUM_LAYERS} layers, got {}", values.len())));
        }
        Ok(Self { values })
    }

    pub fn get(&self, name: &str) -> Option<ArrayView1<'_, T>> {
        layer_index(name).map(|i| self.values[i].view())
    }

    pub fn by_index(&self, index: usize) -> ArrayView1<'_, T> {
        self.values[index].view()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, ArrayView1<'_, T>)> {
        LAYER_NAMES.iter().copied().zip(self.values.iter().map(|v| v.view()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Intermediate values kept from a forward pass for the reverse pass.
pub struct Tape<T> {
    input: Array2<T>,
    outs: Vec<Array2<T>>,
    record: ActivationRecord<T>,
    argmax: Vec<Vec<usize>>,
    t1: Array2<T>,
    xt: Array2<T>,
    t2: Array2<T>,
    bt: Array2<T>,
}

impl<T: Scalar> Tape<T> {
    pub fn logits(&self) -> ArrayView1<'_, T> {
        self.outs[FC3].row(0)
    }

    pub fn record(&self) -> &ActivationRecord<T> {
        &self.record
    }

    pub fn input(&self) -> ArrayView2<'_, T> {
        self.input.view()
    }

    /// Hash of every ReLU on/off state and every pooling winner. Two inputs
    /// with equal patterns lie on the same smooth piece of the network.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (l, out) in self.outs.iter().enumerate() {
            if has_relu(l) {
                for &v in out.iter() {
                    (v > T::zero()).hash(&mut h);
                }
            }
        }
        self.argmax.hash(&mut h);
        h.finish()
    }

    /// The 3x3 input transform (identity plus learned offset).
    pub fn input_transform(&self) -> ArrayView2<'_, T> {
        self.t1.view()
    }

    /// The feature transform applied after `f.c1`.
    pub fn feature_transform(&self) -> ArrayView2<'_, T> {
        self.t2.view()
    }
}

/// Gradient seeds for the reverse pass: d(objective)/d(logits) and
/// d(objective)/d(record vector) for any layers the objective reads.
#[derive(Clone, Debug, Default)]
pub struct Seeds<T> {
    pub logits: Option<Array1<T>>,
    pub layers: Vec<(usize, Array1<T>)>,
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &PointNet<T>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, k: T) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|v| v * k);
            l.bias.mapv_inplace(|v| v * k);
        }
    }

    pub fn flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }
}

fn flatten<T: Scalar>(layers: &[Dense<T>]) -> Vec<T> {
    let mut out = Vec::with_capacity(layers.iter().map(Dense::len).sum());
    for l in layers {
        out.extend(l.weight.iter().copied());
        out.extend(l.bias.iter().copied());
    }
    out
}

#[inline]
fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Column-wise maximum and the first row attaining it.
fn channel_max<T: Scalar>(a: &Array2<T>) -> (Array1<T>, Vec<usize>) {
    let mut best = a.row(0).to_owned();
    let mut arg = vec![0usize; a.ncols()];
    for (i, row) in a.rows().into_iter().enumerate().skip(1) {
        for (j, &v) in row.iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = i;
            }
        }
    }
    (best, arg)
}

fn to_matrix<T: Scalar>(v: ArrayView1<'_, T>, k: usize) -> Array2<T> {
    let mut m = v.to_owned().into_shape_with_order((k, k)).expect("k*k outputs");
    for i in 0..k {
        m[[i, i]] = m[[i, i]] + T::one();
    }
    m
}

impl<T: Scalar> PointNet<T> {
    /// Fresh model: He-uniform hidden weights, zero biases, and transform
    /// heads initialized to emit exactly the identity.
    pub fn new(num_classes: usize, widths: Widths, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {num_classes}")));
        }
        if widths.conv.iter().chain(widths.fc.iter()).any(|&w| w == 0) {
            return Err(Error::config(format!("channel widths must be positive: {widths:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .layer_dims(num_classes)
            .iter()
            .enumerate()
            .map(|(l, &(inp, out))| {
                let mut d = Dense::zeros(inp, out);
                if l != T1_FC3 && l != T2_FC3 {
                    let gain = if has_relu(l) { 6.0 } else { 1.0 };
                    let bound = (gain / inp as f64).sqrt();
                    d.weight.mapv_inplace(|_| lit(rng.random_range(-bound..bound)));
                }
                d
            })
            .collect();
        Ok(Self {
            num_classes,
            widths,
            layers,
        })
    }

    pub fn from_parts(num_classes: usize, widths: Widths, params: &[T]) -> Result<Self> {
        let mut m = Self {
            num_classes,
            widths,
            layers: widths
                .layer_dims(num_classes)
                .iter()
                .map(|&(i, o)| Dense::zeros(i, o))
                .collect(),
        };
        m.set_params(params)?;
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn widths(&self) -> Widths {
        self.widths
    }

    /// Output width of a canonical layer.
    pub fn layer_width(&self, index: usize) -> usize {
        self.layers[index].bias.len()
    }

    pub fn layer(&self, index: usize) -> &Dense<T> {
        &self.layers[index]
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    /// All parameters in canonical layer order, each layer weight
    /// (input-major) followed by bias.
    pub fn params(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn set_params(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::format(format!(
                "parameter count {} does not match architecture ({})",
                params.len(),
                self.num_params()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.bias.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn cast<U: Scalar>(&self) -> PointNet<U> {
        PointNet {
            num_classes: self.num_classes,
            widths: self.widths,
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.mapv(|v| U::from_f64(v.to_f64())),
                    bias: l.bias.mapv(|v| U::from_f64(v.to_f64())),
                })
                .collect(),
        }
    }

    /// Short stable hash of the parameters.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_classes as u64).to_le_bytes());
        for v in self.params() {
            h.update((v.to_f64() as f32).to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn forward(&self, cloud: ArrayView2<'_, T>, record: bool) -> Result<(Array1<T>, Option<ActivationRecord<T>>)> {
        let tape = self.forward_tape(cloud)?;
        let logits = tape.logits().to_owned();
        Ok((logits, record.then_some(tape.record)))
    }

    pub fn forward_tape(&self, cloud: ArrayView2<'_, T>) -> Result<Tape<T>> {
        if cloud.ncols() != 3 || cloud.nrows() == 0 {
            return Err(Error::input(format!(
                "expected an N x 3 cloud with N >= 1, got {} x {}",
                cloud.nrows(),
                cloud.ncols()
            )));
        }
        let c0 = self.widths.conv[0];
        let mut outs: Vec<Array2<T>> = Vec::with_capacity(NUM_LAYERS);
        let mut values: Vec<Array1<T>> = Vec::with_capacity(NUM_LAYERS);
        let mut argmax: Vec<Vec<usize>> = Vec::with_capacity(NUM_LAYERS);

        // Runs layer `outs.len()` on `x` and records it.
        let step = |outs: &mut Vec<Array2<T>>,
                    values: &mut Vec<Array1<T>>,
                    argmax: &mut Vec<Vec<usize>>,
                    x: ArrayView2<'_, T>| {
            let l = outs.len();
            let mut y = self.layers[l].forward(x);
            if has_relu(l) {
                y.mapv_inplace(relu);
            }
            match layer_kind(l) {
                LayerKind::PerPoint => {
                    let (m, a) = channel_max(&y);
                    values.push(m);
                    argmax.push(a);
                }
                LayerKind::Global => {
                    values.push(y.row(0).to_owned());
                    argmax.push(Vec::new());
                }
            }
            outs.push(y);
        };
        let pooled = |values: &Vec<Array1<T>>, l: usize| values[l].clone().insert_axis(Axis(0));

        let input = cloud.to_owned();
        step(&mut outs, &mut values, &mut argmax, input.view());
        for _ in T1_C2..=T1_C3 {
            let prev = outs.last().unwrap().view().to_owned();
            step(&mut outs, &mut values, &mut argmax, prev.view());
        }
        let p = pooled(&values, T1_C3);
        step(&mut outs, &mut values, &mut argmax, p.view());
        for _ in T1_FC2..=T1_FC3 {
            let prev = outs.last().unwrap().to_owned();
            step(&mut outs, &mut values, &mut argmax, prev.view());
        }
        let t1 = to_matrix(values[T1_FC3].view(), 3);
        let xt = input.dot(&t1);
        step(&mut outs, &mut values, &mut argmax, xt.view());
        for _ in T2_C1..=T2_C3 {
            let prev = outs.last().unwrap().to_owned();
            step(&mut outs, &mut values, &mut argmax, prev.view());
        }
        let p = pooled(&values, T2_C3);
        step(&mut outs, &mut values, &mut argmax, p.view());
        for _ in T2_FC2..=T2_FC3 {
            let prev = outs.last().unwrap().to_owned();
            step(&mut outs, &mut values, &mut argmax, prev.view());
        }
        let t2 = to_matrix(values[T2_FC3].view(), c0);
        let bt = outs[F_C1].dot(&t2);
        step(&mut outs, &mut values, &mut argmax, bt.view());
        let prev = outs.last().unwrap().to_owned();
        step(&mut outs, &mut values, &mut argmax, prev.view());
        let p = pooled(&values, F_C3);
        step(&mut outs, &mut values, &mut argmax, p.view());
        for _ in FC2..=FC3 {
            let prev = outs.last().unwrap().to_owned();
            step(&mut outs, &mut values, &mut argmax, prev.view());
        }
        debug_assert_eq!(outs.len(), NUM_LAYERS);
        Ok(Tape {
            input,
            outs,
            record: ActivationRecord { values },
            argmax,
            t1,
            xt,
            t2,
            bt,
        })
    }

    fn collect_seeds(&self, seeds: &Seeds<T>) -> Result<Vec<Option<Array1<T>>>> {
        let mut by_layer: Vec<Option<Array1<T>>> = vec![None; NUM_LAYERS];
        if let Some(d) = &seeds.logits {
            if d.len() != self.num_classes {
                return Err(Error::contract(format!(
                    "logit seed has length {}, model has {} classes",
                    d.len(),
                    self.num_classes
                )));
            }
        }
        for (l, s) in &seeds.layers {
            if *l >= NUM_LAYERS {
                return Err(Error::contract(format!("seed for unknown layer index {l}")));
            }
            if s.len() != self.layer_width(*l) {
                return Err(Error::contract(format!(
                    "seed for {} has length {}, layer width is {}",
                    LAYER_NAMES[*l],
                    s.len(),
                    self.layer_width(*l)
                )));
            }
            match &mut by_layer[*l] {
                Some(acc) => *acc += s,
                slot => *slot = Some(s.clone()),
            }
        }
        Ok(by_layer)
    }

    /// Reverse pass. Returns d(objective)/d(input); accumulates parameter
    /// gradients into `grads` when given.
    pub fn backward(&self, tape: &Tape<T>, seeds: &Seeds<T>, mut grads: Option<&mut Gradients<T>>) -> Result<Array2<T>> {
        let seed = self.collect_seeds(seeds)?;
        let o = &tape.outs;
        let rec = &tape.record.values;

        let back = |l: usize, input: ArrayView2<'_, T>, g: Array2<T>, grads: &mut Option<&mut Gradients<T>>| {
            if let Some(gr) = grads.as_deref_mut() {
                gr.layers[l].weight += &input.t().dot(&g);
                gr.layers[l].bias += &g.sum_axis(Axis(0));
            }
            g.dot(&self.layers[l].weight.t())
        };
        // Adds any record seed for layer `l`, then applies its ReLU mask.
        let finish = |l: usize, mut g: Array2<T>| {
            if let Some(s) = &seed[l] {
                match layer_kind(l) {
                    LayerKind::Global => {
                        let mut row = g.row_mut(0);
                        row += s;
                    }
                    LayerKind::PerPoint => {
                        for (j, &i) in tape.argmax[l].iter().enumerate() {
                            g[[i, j]] = g[[i, j]] + s[j];
                        }
                    }
                }
            }
            if has_relu(l) {
                Zip::from(&mut g).and(&o[l]).for_each(|g, &y| {
                    if y <= T::zero() {
                        *g = T::zero();
                    }
                });
            }
            g
        };
        let unpool = |l: usize, gp: Array2<T>| {
            let mut g = Array2::zeros(o[l].raw_dim());
            for (j, &i) in tape.argmax[l].iter().enumerate() {
                g[[i, j]] = gp[[0, j]];
            }
            g
        };
        let row = |l: usize| rec[l].view().insert_axis(Axis(0));

        // Classification head.
        let mut g = Array2::zeros((1, self.num_classes));
        if let Some(d) = &seeds.logits {
            g.row_mut(0).assign(d);
        }
        let g = finish(FC3, g);
        let g = finish(FC2, back(FC3, o[FC2].view(), g, &mut grads));
        let g = finish(FC1, back(FC2, o[FC1].view(), g, &mut grads));
        let gp = back(FC1, row(F_C3), g, &mut grads);

        // Trunk after the feature transform.
        let g = finish(F_C3, unpool(F_C3, gp));
        let g = finish(F_C2, back(F_C3, o[F_C2].view(), g, &mut grads));
        let g_bt = back(F_C2, tape.bt.view(), g, &mut grads);
        let mut g_fc1 = g_bt.dot(&tape.t2.t());
        let g_t2 = o[F_C1].t().dot(&g_bt);

        // Feature transform network.
        let k = g_t2.len();
        let g = finish(T2_FC3, g_t2.into_shape_with_order((1, k)).expect("square"));
        let g = finish(T2_FC2, back(T2_FC3, o[T2_FC2].view(), g, &mut grads));
        let g = finish(T2_FC1, back(T2_FC2, o[T2_FC1].view(), g, &mut grads));
        let gp = back(T2_FC1, row(T2_C3), g, &mut grads);
        let g = finish(T2_C3, unpool(T2_C3, gp));
        let g = finish(T2_C2, back(T2_C3, o[T2_C2].view(), g, &mut grads));
        let g = finish(T2_C1, back(T2_C2, o[T2_C1].view(), g, &mut grads));
        g_fc1 += &back(T2_C1, o[F_C1].view(), g, &mut grads);

        let g = finish(F_C1, g_fc1);
        let g_xt = back(F_C1, tape.xt.view(), g, &mut grads);
        let mut g_x = g_xt.dot(&tape.t1.t());
        let g_t1 = tape.input.t().dot(&g_xt);

        // Input transform network.
        let g = finish(T1_FC3, g_t1.into_shape_with_order((1, 9)).expect("3x3"));
        let g = finish(T1_FC2, back(T1_FC3, o[T1_FC2].view(), g, &mut grads));
        let g = finish(T1_FC1, back(T1_FC2, o[T1_FC1].view(), g, &mut grads));
        let gp = back(T1_FC1, row(T1_C3), g, &mut grads);
        let g = finish(T1_C3, unpool(T1_C3, gp));
        let g = finish(T1_C2, back(T1_C3, o[T1_C2].view(), g, &mut grads));
        let g = finish(T1_C1, back(T1_C2, o[T1_C1].view(), g, &mut grads));
        g_x += &back(T1_C1, tape.input.view(), g, &mut grads);
        Ok(g_x)
    }
}

/// Copy of `model` with every scalar parameter independently zeroed with
/// probability `p`.
pub fn dropout_parameters<T: Scalar>(model: &PointNet<T>, p: f64, seed: u64) -> Result<PointNet<T>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::config(format!("dropout probability {p} outside [0, 1]")));
    }
    let mut out = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.params_mut() {
        if rng.random_bool(p) {
            *v = T::zero();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Widths {
        Widths {
            conv: [8, 12, 16],
            fc: [10, 6],
        }
    }

    fn cloud(n: usize, seed: u64) -> Array2<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, 3), |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn shapes_follow_the_architecture() {
        let m = PointNet::<f32>::new(40, Widths::default(), 0).unwrap();
        let x = cloud(32, 1).mapv(|v| v as f32);
        let tape = m.forward_tape(x.view()).unwrap();
        assert_eq!(tape.logits().len(), 40);
        let m8 = PointNet::<f32>::new(8, Widths::default(), 0).unwrap();
        let tape8 = m8.forward_tape(x.view()).unwrap();
        assert_eq!(tape8.input_transform().dim(), (3, 3));
        assert_eq!(tape8.feature_transform().dim(), (64, 64));
        assert_eq!(tape8.record().get("f.c3").unwrap().len(), 1024);
    }

    #[test]
    fn transforms_start_as_identity() {
        let m = PointNet::<f64>::new(4, small(), 3).unwrap();
        let tape = m.forward_tape(cloud(10, 2).view()).unwrap();
        assert_eq!(tape.input_transform(), Array2::<f64>::eye(3));
        assert_eq!(tape.feature_transform(), Array2::<f64>::eye(8));
    }

    #[test]
    fn record_contains_every_canonical_layer_once() {
        let m = PointNet::<f64>::new(4, small(), 3).unwrap();
        let (_, rec) = m.forward(cloud(10, 2).view(), true).unwrap();
        let rec = rec.unwrap();
        let names: Vec<&str> = rec.iter().map(|(n, _)| n).collect();
        assert_eq!(names, LAYER_NAMES.to_vec());
        for (i, (_, v)) in rec.iter().enumerate() {
            assert_eq!(v.len(), m.layer_width(i));
        }
    }

    #[test]
    fn forward_is_deterministic_and_permutation_invariant() {
        let m = PointNet::<f32>::new(5, small(), 9).unwrap();
        let x = cloud(20, 4).mapv(|v| v as f32);
        let (a, _) = m.forward(x.view(), false).unwrap();
        let (b, _) = m.forward(x.view(), false).unwrap();
        assert_eq!(a, b);
        let perm: Vec<usize> = (0..20).rev().collect();
        let xp = x.select(Axis(0), &perm);
        let (c, _) = m.forward(xp.view(), false).unwrap();
        let scale = 1.0 + a.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        for (u, v) in a.iter().zip(c.iter()) {
            assert!((u - v).abs() < 1e-6 * scale);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_configs() {
        let m = PointNet::<f64>::new(3, small(), 0).unwrap();
        assert!(matches!(m.forward(Array2::zeros((4, 2)).view(), false), Err(Error::Input(_))));
        assert!(matches!(PointNet::<f64>::new(1, small(), 0), Err(Error::Config(_))));
        let bad = Widths { conv: [0, 1, 1], fc: [1, 1] };
        assert!(matches!(PointNet::<f64>::new(3, bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn seeds_of_the_wrong_length_are_contract_errors() {
        let m = PointNet::<f64>::new(3, small(), 0).unwrap();
        let tape = m.forward_tape(cloud(6, 0).view()).unwrap();
        let bad = Seeds {
            logits: Some(Array1::zeros(4)),
            layers: vec![],
        };
        assert!(matches!(m.backward(&tape, &bad, None), Err(Error::Contract(_))));
        let bad = Seeds {
            logits: None,
            layers: vec![(FC2, Array1::zeros(5))],
        };
        assert!(matches!(m.backward(&tape, &bad, None), Err(Error::Contract(_))));
    }

    /// Parameter gradient of one logit against central differences.
    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut m = PointNet::<f64>::new(3, small(), 5).unwrap();
        // Perturb the transform heads so every path carries gradient.
        let mut r = ChaCha8Rng::seed_from_u64(77);
        for v in m.params_mut() {
            *v += r.random_range(-0.05..0.05);
        }
        let x = cloud(12, 8);
        let seeds = Seeds {
            logits: Some(Array1::from(vec![0.3, -1.0, 0.7])),
            layers: vec![],
        };
        let tape = m.forward_tape(x.view()).unwrap();
        let mut grads = Gradients::zeros_like(&m);
        m.backward(&tape, &seeds, Some(&mut grads)).unwrap();
        let flat = grads.flat();
        let base = m.params();
        let objective = |p: &[f64]| {
            let mm = PointNet::from_parts(3, small(), p).unwrap();
            let (l, _) = mm.forward(x.view(), false).unwrap();
            0.3 * l[0] - l[1] + 0.7 * l[2]
        };
        let h = 1e-6;
        let mut checked = 0;
        for i in (0..base.len()).step_by(37) {
            let mut p = base.clone();
            p[i] += h;
            let up = objective(&p);
            p[i] -= 2.0 * h;
            let down = objective(&p);
            let fd = (up - down) / (2.0 * h);
            let err = (fd - flat[i]).abs() / (1e-6 + fd.abs().max(flat[i].abs()));
            assert!(err < 1e-4 || (fd - flat[i]).abs() < 1e-8, "param {i}: fd {fd} vs {}", flat[i]);
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn dropout_extremes_and_rate() {
        let m = PointNet::<f32>::new(4, Widths { conv: [16, 32, 64], fc: [32, 16] }, 1).unwrap();
        assert_eq!(dropout_parameters(&m, 0.0, 3).unwrap(), m);
        assert!(dropout_parameters(&m, 1.0, 3).unwrap().params().iter().all(|&v| v == 0.0));
        assert!(matches!(dropout_parameters(&m, 1.5, 3), Err(Error::Config(_))));
        // Count zeros among originally nonzero parameters.
        let d = dropout_parameters(&m, 0.5, 11).unwrap();
        let (mut nz, mut zeroed) = (0usize, 0usize);
        for (a, b) in m.params().iter().zip(d.params()) {
            if *a != 0.0 {
                nz += 1;
                if b == 0.0 {
                    zeroed += 1;
                }
            }
        }
        assert!(nz >= 10_000);
        let frac = zeroed as f64 / nz as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }
}
