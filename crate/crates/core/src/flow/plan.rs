use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::report::FlowReport;
use crate::error::{Error, Result};
use crate::nn::{layer_index, layer_kind, LayerKind, Widths, LOGITS_LAYER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub layer: String,
    pub weight: f64,
}

/// Ordered (layer, weight) list for the latent alignment term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPlan {
    entries: Vec<PlanEntry>,
}

/// Layers whose record is a single global vector: the dense layers and
/// the pooled outputs of the three point-wise stacks. Logits are excluded.
pub fn is_alignable(layer: &str) -> bool {
    match layer_index(layer) {
        Some(_) if layer == LOGITS_LAYER => false,
        Some(i) => layer_kind(i) == LayerKind::Global || layer.ends_with(".c3"),
        None => false,
    }
}

impl AlignmentPlan {
    pub fn new(entries: Vec<PlanEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if layer_index(&e.layer).is_none() {
                return Err(Error::config(format!("unknown layer {:?} in alignment plan", e.layer)));
            }
            if !is_alignable(&e.layer) {
                return Err(Error::config(format!("layer {} is not globally defined and cannot be aligned", e.layer)));
            }
            if !(e.weight >= 0.0 && e.weight.is_finite()) {
                return Err(Error::config(format!("alignment weight for {} must be finite and >= 0", e.layer)));
            }
            if entries[..i].iter().any(|p| p.layer == e.layer) {
                return Err(Error::config(format!("layer {} listed twice", e.layer)));
            }
        }
        Ok(Self { entries })
    }

    /// {fT1.fc1: N_l * 1e-9, fT1.fc2: 1e-9, fT2.fc1: 0.1, fT2.fc2: 0.1, fc2: 1},
    /// with N_l the output width of fT1.fc1.
    pub fn five_layer(widths: Widths) -> Self {
        let e = |layer: &str, weight: f64| PlanEntry {
            layer: layer.into(),
            weight,
        };
        Self {
            entries: vec![
                e("fT1.fc1", widths.fc[0] as f64 * 1e-9),
                e("fT1.fc2", 1e-9),
                e("fT2.fc1", 0.1),
                e("fT2.fc2", 0.1),
                e("fc2", 1.0),
            ],
        }
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }
}

impl fmt::Display for AlignmentPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}={}", e.layer, e.weight)?;
        }
        Ok(())
    }
}

/// Parses `layer=weight,layer=weight`.
impl FromStr for AlignmentPlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let entries = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|part| {
                let (l, w) = part
                    .split_once('=')
                    .ok_or_else(|| Error::config(format!("expected layer=weight, got {part:?}")))?;
                let weight = w
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("bad weight {w:?} for layer {l}")))?;
                Ok(PlanEntry {
                    layer: l.trim().to_string(),
                    weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        AlignmentPlan::new(entries)
    }
}

/// Alignable layers whose intra/inter gap exceeds `threshold`, each with
/// weight 1; or the fixed default plan when `default_weights` is set.
pub fn select_layers(report: &FlowReport, threshold: f64, default_weights: bool, widths: Widths) -> Result<AlignmentPlan> {
    if default_weights {
        return Ok(AlignmentPlan::five_layer(widths));
    }
    let entries: Vec<PlanEntry> = report
        .layers
        .iter()
        .filter(|l| is_alignable(&l.layer) && l.gap > threshold)
        .map(|l| PlanEntry {
            layer: l.layer.clone(),
            weight: 1.0,
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyPlan { threshold });
    }
    AlignmentPlan::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::report::LayerFlow;
    use crate::flow::{FlowConfig, Metric};
    use crate::nn::LAYER_NAMES;

    fn report(gaps: &[f64]) -> FlowReport {
        FlowReport {
            metric: Metric::Cosine,
            config: FlowConfig::default(),
            layers: LAYER_NAMES
                .iter()
                .zip(gaps)
                .map(|(n, &g)| LayerFlow {
                    layer: n.to_string(),
                    intra: 0.5 + g,
                    inter: 0.5,
                    gap: g,
                    intra_sd: 0.0,
                    inter_sd: 0.0,
                    gap_stderr: 0.0,
                    n_intra: 1,
                    n_inter: 1,
                    degenerate: 0,
                })
                .collect(),
            skipped_classes: vec![],
        }
    }

    #[test]
    fn default_plan_has_five_weighted_layers() {
        let p = select_layers(&report(&[0.0; 18]), 0.5, true, Widths::default()).unwrap();
        let got: Vec<(&str, f64)> = p.entries().iter().map(|e| (e.layer.as_str(), e.weight)).collect();
        assert_eq!(
            got,
            vec![("fT1.fc1", 512e-9), ("fT1.fc2", 1e-9), ("fT2.fc1", 0.1), ("fT2.fc2", 0.1), ("fc2", 1.0)]
        );
    }

    #[test]
    fn threshold_above_one_gives_empty_plan() {
        let r = report(&[0.4; 18]);
        assert!(matches!(select_layers(&r, 1.01, false, Widths::default()), Err(Error::EmptyPlan { .. })));
    }

    #[test]
    fn selection_skips_logits_and_per_point_layers() {
        let p = select_layers(&report(&[0.2; 18]), 0.0, false, Widths::default()).unwrap();
        let names: Vec<&str> = p.entries().iter().map(|e| e.layer.as_str()).collect();
        assert!(names.contains(&"fc2") && names.contains(&"f.c3") && names.contains(&"fT2.fc3"));
        assert!(!names.contains(&"fc3") && !names.contains(&"f.c1") && !names.contains(&"fT1.c2"));
        assert!(p.entries().iter().all(|e| e.weight == 1.0));
    }

    #[test]
    fn parse_and_validate() {
        let p: AlignmentPlan = "fc2=1, fT2.fc1=0.1".parse().unwrap();
        assert_eq!(p.to_string(), "fc2=1,fT2.fc1=0.1");
        assert!(matches!("fc3=1".parse::<AlignmentPlan>(), Err(Error::Config(_))));
        assert!(matches!("f.c1=1".parse::<AlignmentPlan>(), Err(Error::Config(_))));
        assert!(matches!("fc2=-1".parse::<AlignmentPlan>(), Err(Error::Config(_))));
        assert!(matches!("fc2=1,fc2=2".parse::<AlignmentPlan>(), Err(Error::Config(_))));
        assert!(matches!("nope=1".parse::<AlignmentPlan>(), Err(Error::Config(_))));
    }
}
