use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::profile::record_all;
use super::similarity::{similarity, Metric};
use crate::data::Instance;
use crate::error::{Error, Result};
use crate::nn::{PointNet, LAYER_NAMES, NUM_LAYERS};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Same-class pairs drawn per class; the same total of different-class
    /// pairs is drawn across the split.
    pub pairs_per_class: usize,
    pub seed: u64,
    pub metric: Metric,
    /// Compare every sampled instance with itself (calibration mode).
    pub self_pairs: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            pairs_per_class: 20,
            seed: 0,
            metric: Metric::Cosine,
            self_pairs: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFlow {
    pub layer: String,
    pub intra: f64,
    pub inter: f64,
    pub gap: f64,
    pub intra_sd: f64,
    pub inter_sd: f64,
    /// Standard error of `gap`, treating pairs as independent samples.
    pub gap_stderr: f64,
    pub n_intra: usize,
    pub n_inter: usize,
    /// Pairs involving an all-zero vector (similarity taken as 0).
    pub degenerate: usize,
}

impl LayerFlow {
    /// Gap in units of the spread of a single intra-minus-inter pair
    /// difference, `sqrt(intra_sd^2 + inter_sd^2)`. Unlike `z_score` this
    /// does not grow with the number of sampled pairs.
    pub fn separation(&self) -> f64 {
        let sd = (self.intra_sd * self.intra_sd + self.inter_sd * self.inter_sd).sqrt();
        if sd > 0.0 {
            self.gap / sd
        } else if self.gap == 0.0 {
            0.0
        } else {
            self.gap.signum() * f64::INFINITY
        }
    }

    /// Gap in units of its standard error.
    pub fn z_score(&self) -> f64 {
        if self.gap_stderr > 0.0 {
            self.gap / self.gap_stderr
        } else if self.gap == 0.0 {
            0.0
        } else {
            self.gap.signum() * f64::INFINITY
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub metric: Metric,
    pub config: FlowConfig,
    pub layers: Vec<LayerFlow>,
    /// Classes skipped for having fewer than two instances.
    pub skipped_classes: Vec<String>,
}

impl FlowReport {
    pub fn layer(&self, name: &str) -> Option<&LayerFlow> {
        self.layers.iter().find(|l| l.layer == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,intra,inter,gap,n,gap_stderr,degenerate\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                l.layer, l.intra, l.inter, l.gap, l.n_intra, l.gap_stderr, l.degenerate
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-layer mean similarity of same-class and different-class pairs.
pub fn flow_report(
    model: &PointNet<f32>,
    instances: &[Instance],
    class_names: &[String],
    config: &FlowConfig,
) -> Result<FlowReport> {
    if config.pairs_per_class == 0 {
        return Err(Error::config("pairs_per_class must be at least 1"));
    }
    let k = class_names.len();
    if let Some(bad) = instances.iter().find(|i| i.cloud.label.is_none_or(|l| l >= k)) {
        return Err(Error::input(format!("instance {} has no label in [0, {k})", bad.id)));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, inst) in instances.iter().enumerate() {
        by_class[inst.label()].push(i);
    }
    let mut skipped = Vec::new();
    let mut intra_pairs = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < 2 {
            skipped.push(class_names[c].clone());
            continue;
        }
        let mut r = rng::stream(config.seed, 1 + c as u64);
        for _ in 0..config.pairs_per_class {
            let a = r.random_range(0..members.len());
            let mut b = r.random_range(0..members.len() - 1);
            if b >= a {
                b += 1;
            }
            intra_pairs.push(if config.self_pairs {
                (members[a], members[a])
            } else {
                (members[a], members[b])
            });
        }
    }
    if intra_pairs.is_empty() {
        return Err(Error::input("no class has two or more instances"));
    }
    let mut inter_pairs = Vec::with_capacity(intra_pairs.len());
    if config.self_pairs {
        inter_pairs.extend(intra_pairs.iter().map(|&(a, _)| (a, a)));
    } else {
        if by_class.iter().filter(|m| !m.is_empty()).count() < 2 {
            return Err(Error::input("different-class pairs need at least two classes"));
        }
        let mut r = rng::stream(config.seed, 0);
        while inter_pairs.len() < intra_pairs.len() {
            let a = r.random_range(0..instances.len());
            let b = r.random_range(0..instances.len());
            if instances[a].label() != instances[b].label() {
                inter_pairs.push((a, b));
            }
        }
    }

    let records = record_all(model, instances)?;
    let mut layers = Vec::with_capacity(NUM_LAYERS);
    for (l, name) in LAYER_NAMES.iter().enumerate() {
        let mut degenerate = 0;
        let mut eval = |pairs: &[(usize, usize)]| -> Result<Vec<f64>> {
            pairs
                .iter()
                .map(|&(a, b)| {
                    let s = similarity(config.metric, records[a].by_index(l), records[b].by_index(l))?;
                    degenerate += s.degenerate as usize;
                    Ok(s.value)
                })
                .collect()
        };
        let si = eval(&intra_pairs)?;
        let se = eval(&inter_pairs)?;
        let (mi, sdi) = mean_sd(&si);
        let (me, sde) = mean_sd(&se);
        let stderr = (sdi * sdi / si.len() as f64 + sde * sde / se.len() as f64).sqrt();
        layers.push(LayerFlow {
            layer: name.to_string(),
            intra: mi,
            inter: me,
            gap: mi - me,
            intra_sd: sdi,
            inter_sd: sde,
            gap_stderr: stderr,
            n_intra: si.len(),
            n_inter: se.len(),
            degenerate,
        });
    }
    Ok(FlowReport {
        metric: config.metric,
        config: config.clone(),
        layers,
        skipped_classes: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, ShapeFamily, SyntheticSpec};
    use crate::nn::Widths;

    fn setup() -> (PointNet<f32>, Vec<Instance>, Vec<String>) {
        let spec = SyntheticSpec::new(vec![ShapeFamily::Sphere, ShapeFamily::Cube, ShapeFamily::Torus], 5, 64, 8);
        let d = generate_synthetic(&spec).unwrap();
        let m = PointNet::new(3, Widths { conv: [8, 8, 16], fc: [8, 8] }, 1).unwrap();
        (m, d.train, d.classes)
    }

    #[test]
    fn self_pairs_are_exactly_one_everywhere() {
        let (m, inst, names) = setup();
        for metric in Metric::ALL {
            let cfg = FlowConfig {
                self_pairs: true,
                metric,
                ..FlowConfig::default()
            };
            let r = flow_report(&m, &inst, &names, &cfg).unwrap();
            assert_eq!(r.layers.len(), NUM_LAYERS);
            for l in &r.layers {
                // Dead layers are flagged degenerate instead.
                if l.degenerate == 0 {
                    assert_eq!((l.intra, l.inter), (1.0, 1.0), "{}", l.layer);
                }
            }
        }
    }

    #[test]
    fn report_is_deterministic_and_sized() {
        let (m, inst, names) = setup();
        let cfg = FlowConfig {
            pairs_per_class: 7,
            seed: 3,
            ..FlowConfig::default()
        };
        let a = flow_report(&m, &inst, &names, &cfg).unwrap();
        let b = flow_report(&m, &inst, &names, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.layers.iter().all(|l| l.n_intra == 21 && l.n_inter == 21));
        assert!(a.layers.iter().all(|l| (l.gap - (l.intra - l.inter)).abs() == 0.0));
        assert_eq!(a.to_csv().lines().count(), NUM_LAYERS + 1);
    }

    #[test]
    fn singleton_classes_are_skipped() {
        let (m, inst, names) = setup();
        let subset: Vec<Instance> = inst.iter().filter(|i| i.label() != 2).cloned().chain([inst[8].clone()]).collect();
        let r = flow_report(&m, &subset, &names, &FlowConfig::default()).unwrap();
        assert_eq!(r.skipped_classes, vec!["torus".to_string()]);
    }

    #[test]
    fn separation_ignores_the_pair_count() {
        let l = LayerFlow {
            layer: "fc2".into(),
            intra: 0.9,
            inter: 0.4,
            gap: 0.5,
            intra_sd: 0.3,
            inter_sd: 0.4,
            gap_stderr: 0.05,
            n_intra: 100,
            n_inter: 100,
            degenerate: 0,
        };
        assert_eq!(l.separation(), 1.0);
        assert_eq!(l.z_score(), 10.0);
        let flat = LayerFlow { intra_sd: 0.0, inter_sd: 0.0, gap: 0.0, ..l };
        assert_eq!(flat.separation(), 0.0);
    }
}
