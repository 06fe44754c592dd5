//! Evaluation metrics for explanations.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array1;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::am::ExplanationResult;
use crate::data::{Instance, PointCloud};
use crate::error::{Error, Result};
use crate::nn::{log_softmax, PointNet, GLOBAL_FEATURE_LAYER};
use crate::rng;
use crate::spatial::{cross_nearest, Strategy};

/// One-directional Chamfer distance: mean over `x_g` of the distance to the
/// nearest point of `x_r`.
pub fn chamfer(x_g: &PointCloud, x_r: &PointCloud) -> Result<f64> {
    chamfer_with(x_g, x_r, Strategy::Auto)
}

pub fn chamfer_with(x_g: &PointCloud, x_r: &PointCloud, strategy: Strategy) -> Result<f64> {
    if x_g.is_empty() || x_r.is_empty() {
        return Err(Error::input("chamfer distance of an empty cloud"));
    }
    let nn = cross_nearest(x_g.points(), x_r.points(), strategy);
    let sum: f64 = nn.iter().map(|n| n.expect("nonempty target").dist()).sum();
    Ok(sum / x_g.len() as f64)
}

/// Mean of both directions. Not the quantity reported in evaluation tables.
pub fn chamfer_symmetric(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok((chamfer(a, b)? + chamfer(b, a)?) / 2.0)
}

/// Max-pooled trunk output.
pub fn global_features(model: &PointNet<f32>, cloud: &PointCloud) -> Result<Array1<f32>> {
    let (_, rec) = model.forward(cloud.to_array::<f32>().view(), true)?;
    Ok(rec
        .expect("record requested")
        .get(GLOBAL_FEATURE_LAYER)
        .expect("canonical layer")
        .to_owned())
}

/// Per-dimension mean and (population) variance of feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

impl FeatureStats {
    pub fn from_features(features: &[Array1<f32>]) -> Result<Self> {
        let first = features.first().ok_or_else(|| Error::input("feature statistics of an empty set"))?;
        let d = first.len();
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::contract("feature vectors differ in length"));
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, &v) in mean.iter_mut().zip(f) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for f in features {
            for ((s, &v), m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (v as f64 - m) * (v as f64 - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        Ok(Self {
            mean,
            var,
            count: features.len(),
        })
    }
}

/// Diagonal-covariance Frechet distance:
/// `|mu_r - mu_g|^2 + sum_d (sqrt(var_r) - sqrt(var_g))^2`.
pub fn fid(g: &FeatureStats, r: &FeatureStats) -> Result<f64> {
    if g.mean.len() != r.mean.len() || g.var.len() != r.var.len() || g.mean.len() != g.var.len() {
        return Err(Error::contract(format!(
            "feature dimensions differ: {} vs {}",
            g.mean.len(),
            r.mean.len()
        )));
    }
    let mut total = 0.0;
    for d in 0..g.mean.len() {
        let dm = r.mean[d] - g.mean[d];
        let ds = r.var[d].max(0.0).sqrt() - g.var[d].max(0.0).sqrt();
        total += dm * dm + ds * ds;
    }
    Ok(total)
}

/// Target logit and target log-softmax.
pub fn representativity(model: &PointNet<f32>, cloud: &PointCloud, c: usize) -> Result<(f64, f64)> {
    if c >= model.num_classes() {
        return Err(Error::contract(format!("class {c} out of range")));
    }
    let (logits, _) = model.forward(cloud.to_array::<f32>().view(), false)?;
    let logits = logits.mapv(|v| v as f64);
    Ok((logits[c], log_softmax(&logits)[c]))
}

/// Fraction of clouds whose every coordinate lies in `[-C, C]`.
pub fn legality_fraction(clouds: &[&PointCloud], constraint: f64) -> Result<f64> {
    if clouds.is_empty() {
        return Err(Error::input("legality fraction of an empty list"));
    }
    let legal = clouds.iter().filter(|c| c.is_legal(constraint as f32)).count();
    Ok(legal as f64 / clouds.len() as f64)
}

/// An explanation cloud tagged with the method label it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExplanation {
    pub method: String,
    pub class: usize,
    pub cloud: PointCloud,
}

impl From<&ExplanationResult> for LabeledExplanation {
    fn from(r: &ExplanationResult) -> Self {
        Self {
            method: r.method.to_string(),
            class: r.config.target,
            cloud: r.cloud.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub refs_per_class: usize,
    pub seed: u64,
    pub constraint: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            refs_per_class: 5,
            seed: 0,
            constraint: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub class: usize,
    pub class_name: String,
    pub explanations: usize,
    pub logit: f64,
    pub log_softmax: f64,
    pub cd: f64,
    pub fid: f64,
    pub legality: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub class: usize,
    pub ids: Vec<String>,
    /// Fewer instances than requested were available.
    pub short: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: EvalConfig,
    pub rows: Vec<MetricsRow>,
    pub references: Vec<ReferenceSet>,
}

impl MetricsReport {
    pub fn row(&self, method: &str, class: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.class == class)
    }

    /// Columns in the order method, class, logit, log-softmax, CD, FID, legality.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,class,logit,log_softmax,cd,fid,legality\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.method, r.class_name, r.logit, r.log_softmax, r.cd, r.fid, r.legality
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Deterministic choice of up to `k` reference instances of class `c`.
pub fn sample_references<'a>(pool: &'a [Instance], c: usize, k: usize, seed: u64) -> (Vec<&'a Instance>, bool) {
    let mut members: Vec<&Instance> = pool.iter().filter(|i| i.label() == c).collect();
    members.sort_by(|a, b| a.id.cmp(&b.id));
    if members.len() <= k {
        let short = members.len() < k;
        return (members, short);
    }
    let mut r = rng::stream(seed, c as u64);
    let mut picks = index::sample(&mut r, members.len(), k).into_vec();
    picks.sort_unstable();
    (picks.into_iter().map(|i| members[i]).collect(), false)
}

struct PerExplanation {
    logit: f64,
    log_softmax: f64,
    cd: f64,
    features: Array1<f32>,
}

/// Scores explanations against sampled reference instances of their class.
pub fn evaluate(
    explanations: &[LabeledExplanation],
    model: &PointNet<f32>,
    pool: &[Instance],
    class_names: &[String],
    config: &EvalConfig,
) -> Result<MetricsReport> {
    if config.refs_per_class == 0 {
        return Err(Error::config("refs_per_class must be at least 1"));
    }
    let mut classes: Vec<usize> = explanations.iter().map(|e| e.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut refs: BTreeMap<usize, (Vec<&Instance>, bool, FeatureStats)> = BTreeMap::new();
    for &c in &classes {
        if c >= class_names.len() {
            return Err(Error::input(format!("explanation for unknown class {c}")));
        }
        let (chosen, short) = sample_references(pool, c, config.refs_per_class, config.seed);
        if chosen.is_empty() {
            return Err(Error::input(format!("no reference instances for class {}", class_names[c])));
        }
        let feats = chosen
            .iter()
            .map(|i| global_features(model, &i.cloud))
            .collect::<Result<Vec<_>>>()?;
        refs.insert(c, (chosen, short, FeatureStats::from_features(&feats)?));
    }

    let per: Vec<PerExplanation> = explanations
        .par_iter()
        .map(|e| {
            let (logit, lsm) = representativity(model, &e.cloud, e.class)?;
            let (chosen, _, _) = &refs[&e.class];
            let cds = chosen.iter().map(|r| chamfer(&e.cloud, &r.cloud)).collect::<Result<Vec<_>>>()?;
            Ok(PerExplanation {
                logit,
                log_softmax: lsm,
                cd: cds.iter().sum::<f64>() / cds.len() as f64,
                features: global_features(model, &e.cloud)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<(String, usize)> = Vec::new();
    for e in explanations {
        let key = (e.method.clone(), e.class);
        if !order.contains(&key) {
            order.push(key);
        }
    }
    let methods: Vec<String> = order.iter().map(|(m, _)| m.clone()).collect();
    order.sort_by_key(|(m, c)| (methods.iter().position(|x| x == m).unwrap(), *c));

    let mut rows = Vec::with_capacity(order.len());
    for (method, class) in order {
        let idx: Vec<usize> = (0..explanations.len())
            .filter(|&i| explanations[i].method == method && explanations[i].class == class)
            .collect();
        let n = idx.len() as f64;
        let mean = |f: &dyn Fn(&PerExplanation) -> f64| idx.iter().map(|&i| f(&per[i])).sum::<f64>() / n;
        let feats: Vec<Array1<f32>> = idx.iter().map(|&i| per[i].features.clone()).collect();
        let clouds: Vec<&PointCloud> = idx.iter().map(|&i| &explanations[i].cloud).collect();
        rows.push(MetricsRow {
            class_name: class_names[class].clone(),
            explanations: idx.len(),
            logit: mean(&|p| p.logit),
            log_softmax: mean(&|p| p.log_softmax),
            cd: mean(&|p| p.cd),
            fid: fid(&FeatureStats::from_features(&feats)?, &refs[&class].2)?,
            legality: legality_fraction(&clouds, config.constraint)?,
            method,
            class,
        });
    }
    Ok(MetricsReport {
        config: config.clone(),
        rows,
        references: refs
            .into_iter()
            .map(|(class, (chosen, short, _))| ReferenceSet {
                class,
                ids: chosen.iter().map(|i| i.id.clone()).collect(),
                short,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, ShapeFamily, SyntheticSpec};
    use crate::nn::Widths;
    use crate::spatial::Strategy;
    use proptest::prelude::*;

    fn cloud(p: &[[f32; 3]]) -> PointCloud {
        PointCloud::new(p.to_vec()).unwrap()
    }

    /// Exhaustive double loop, written independently of the spatial module.
    fn chamfer_oracle(g: &PointCloud, r: &PointCloud) -> f64 {
        let mut sum = 0.0;
        for p in g.points() {
            let mut best = f64::INFINITY;
            for q in r.points() {
                let d: f64 = (0..3).map(|k| (p[k] as f64 - q[k] as f64).powi(2)).sum();
                if d < best {
                    best = d;
                }
            }
            sum += best.sqrt();
        }
        sum / g.len() as f64
    }

    #[test]
    fn chamfer_hand_cases() {
        let g = cloud(&[[0.0, 0.0, 0.0]]);
        let r = cloud(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        assert_eq!(chamfer(&g, &r).unwrap(), 1.0);
        assert_eq!(chamfer(&r, &g).unwrap(), 1.5);
        assert_eq!(chamfer(&r, &r).unwrap(), 0.0);
        assert_eq!(chamfer_symmetric(&g, &r).unwrap(), 1.25);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn chamfer_matches_exhaustive_loop_bitwise(
            g in proptest::collection::vec(proptest::array::uniform3(-1.0f32..1.0), 1..300),
            r in proptest::collection::vec(proptest::array::uniform3(-1.0f32..1.0), 1..300),
        ) {
            let (g, r) = (cloud(&g), cloud(&r));
            let want = chamfer_oracle(&g, &r);
            for s in [Strategy::Brute, Strategy::Grid, Strategy::Auto] {
                prop_assert_eq!(chamfer_with(&g, &r, s).unwrap().to_bits(), want.to_bits());
            }
        }

        #[test]
        fn chamfer_superset_never_increases(
            g in proptest::collection::vec(proptest::array::uniform3(-1.0f32..1.0), 1..50),
            r in proptest::collection::vec(proptest::array::uniform3(-1.0f32..1.0), 1..50),
            extra in proptest::collection::vec(proptest::array::uniform3(-1.0f32..1.0), 1..20),
        ) {
            let mut sup = r.clone();
            sup.extend(extra);
            let (g, r, sup) = (cloud(&g), cloud(&r), cloud(&sup));
            prop_assert!(chamfer(&g, &sup).unwrap() <= chamfer(&g, &r).unwrap());
            prop_assert!(chamfer(&g, &r).unwrap() >= 0.0);
        }
    }

    #[test]
    fn large_clouds_match_the_oracle() {
        let mut r = rng::stream(4, 0);
        use rand::Rng;
        let mut pts = |n: usize| cloud(&(0..n).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect::<Vec<_>>());
        let (g, x) = (pts(2048), pts(2048));
        assert_eq!(chamfer(&g, &x).unwrap().to_bits(), chamfer_oracle(&g, &x).to_bits());
    }

    #[test]
    fn fid_hand_cases() {
        let s = |m: f64, v: f64| FeatureStats {
            mean: vec![m],
            var: vec![v],
            count: 2,
        };
        assert_eq!(fid(&s(0.0, 0.0), &s(1.0, 0.0)).unwrap(), 1.0);
        assert_eq!(fid(&s(0.0, 1.0), &s(0.0, 4.0)).unwrap(), 1.0);
        assert_eq!(fid(&s(0.3, 2.0), &s(0.3, 2.0)).unwrap(), 0.0);
        assert_eq!(fid(&s(0.2, 1.0), &s(0.7, 3.0)).unwrap(), fid(&s(0.7, 3.0), &s(0.2, 1.0)).unwrap());
        let bad = FeatureStats {
            mean: vec![0.0, 0.0],
            var: vec![0.0, 0.0],
            count: 2,
        };
        assert!(matches!(fid(&s(0.0, 0.0), &bad), Err(Error::Contract(_))));
    }

    #[test]
    fn feature_stats_are_population_moments() {
        let f = [Array1::from(vec![1.0f32, 0.0]), Array1::from(vec![3.0f32, 0.0])];
        let s = FeatureStats::from_features(&f).unwrap();
        assert_eq!(s.mean, vec![2.0, 0.0]);
        assert_eq!(s.var, vec![1.0, 0.0]);
    }

    #[test]
    fn legality_fraction_cases() {
        let a = cloud(&[[0.5, 1.0, -1.0]]);
        let b = cloud(&[[1.2, 0.0, 0.0]]);
        assert_eq!(legality_fraction(&[&a, &a], 1.0).unwrap(), 1.0);
        assert_eq!(legality_fraction(&[&a, &b], 1.0).unwrap(), 0.5);
        assert!(legality_fraction(&[], 1.0).is_err());
    }

    fn setup() -> (PointNet<f32>, Vec<Instance>, Vec<String>) {
        let d = generate_synthetic(&SyntheticSpec::new(vec![ShapeFamily::Sphere, ShapeFamily::Cube], 8, 64, 5)).unwrap();
        (PointNet::new(2, Widths { conv: [8, 8, 16], fc: [8, 8] }, 3).unwrap(), d.test, d.classes)
    }

    #[test]
    fn representativity_bounds() {
        let (m, inst, _) = setup();
        let (logit, lsm) = representativity(&m, &inst[0].cloud, 0).unwrap();
        assert!(lsm <= 0.0 && logit.is_finite());
        assert!(matches!(representativity(&m, &inst[0].cloud, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn explanation_equal_to_its_only_reference_scores_zero() {
        let (m, inst, names) = setup();
        let target = inst.iter().find(|i| i.label() == 1).unwrap();
        let pool = vec![target.clone()];
        let ex = vec![LabeledExplanation {
            method: "flow".into(),
            class: 1,
            cloud: target.cloud.clone(),
        }];
        let cfg = EvalConfig::default();
        let r = evaluate(&ex, &m, &pool, &names, &cfg).unwrap();
        assert_eq!(r.rows[0].cd, 0.0);
        assert_eq!(r.rows[0].fid, 0.0);
        assert!(r.references[0].short);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (m, inst, names) = setup();
        let ex: Vec<LabeledExplanation> = ["vanilla", "flow"]
            .iter()
            .flat_map(|meth| {
                inst.iter().take(2).map(move |i| LabeledExplanation {
                    method: meth.to_string(),
                    class: i.label(),
                    cloud: i.cloud.clone(),
                })
            })
            .collect();
        let cfg = EvalConfig {
            refs_per_class: 1,
            seed: 9,
            ..Default::default()
        };
        let a = evaluate(&ex, &m, &inst, &names, &cfg).unwrap();
        let b = evaluate(&ex, &m, &inst, &names, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows[0].method, "vanilla");
    }
}
