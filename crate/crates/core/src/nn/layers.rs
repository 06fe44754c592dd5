use serde::{Deserialize, Serialize};

/// Canonical layer names, in forward order. These are the keys used by
/// activation records, class profiles and alignment plans.
pub const LAYER_NAMES: [&str; 18] = [
    "fT1.c1", "fT1.c2", "fT1.c3", "fT1.fc1", "fT1.fc2", "fT1.fc3", "f.c1", "fT2.c1", "fT2.c2", "fT2.c3", "fT2.fc1",
    "fT2.fc2", "fT2.fc3", "f.c2", "f.c3", "fc1", "fc2", "fc3",
];

pub const NUM_LAYERS: usize = LAYER_NAMES.len();

pub(crate) const T1_C1: usize = 0;
pub(crate) const T1_C2: usize = 1;
pub(crate) const T1_C3: usize = 2;
pub(crate) const T1_FC1: usize = 3;
pub(crate) const T1_FC2: usize = 4;
pub(crate) const T1_FC3: usize = 5;
pub(crate) const F_C1: usize = 6;
pub(crate) const T2_C1: usize = 7;
pub(crate) const T2_C2: usize = 8;
pub(crate) const T2_C3: usize = 9;
pub(crate) const T2_FC1: usize = 10;
pub(crate) const T2_FC2: usize = 11;
pub(crate) const T2_FC3: usize = 12;
pub(crate) const F_C2: usize = 13;
pub(crate) const F_C3: usize = 14;
pub(crate) const FC1: usize = 15;
pub(crate) const FC2: usize = 16;
pub(crate) const FC3: usize = 17;

/// Index of the layer whose pooled output is the global feature.
pub const GLOBAL_FEATURE_LAYER: &str = "f.c3";
pub const LOGITS_LAYER: &str = "fc3";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// 1x1 convolution applied to every point independently.
    PerPoint,
    /// Fully connected layer on a single global vector.
    Global,
}

pub fn layer_index(name: &str) -> Option<usize> {
    LAYER_NAMES.iter().position(|n| *n == name)
}

pub fn layer_kind(index: usize) -> LayerKind {
    match index {
        T1_C1 | T1_C2 | T1_C3 | F_C1 | T2_C1 | T2_C2 | T2_C3 | F_C2 | F_C3 => LayerKind::PerPoint,
        _ => LayerKind::Global,
    }
}

pub(crate) fn has_relu(index: usize) -> bool {
    !matches!(index, T1_FC3 | T2_FC3 | FC3)
}

/// Channel widths. `conv` covers the three point-wise stages (shared by the
/// trunk and both transform networks), `fc` the two hidden dense stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub conv: [usize; 3],
    pub fc: [usize; 2],
}

impl Default for Widths {
    fn default() -> Self {
        Self {
            conv: [64, 128, 1024],
            fc: [512, 256],
        }
    }
}

impl Widths {
    /// Reduced preset sized for single-core desk-scale experiments.
    pub fn desk() -> Self {
        Self {
            conv: [64, 64, 256],
            fc: [128, 64],
        }
    }

    /// (input, output) size of each canonical layer.
    pub fn layer_dims(&self, num_classes: usize) -> [(usize, usize); NUM_LAYERS] {
        let [c0, c1, c2] = self.conv;
        let [f0, f1] = self.fc;
        [
            (3, c0),
            (c0, c1),
            (c1, c2),
            (c2, f0),
            (f0, f1),
            (f1, 9),
            (3, c0),
            (c0, c0),
            (c0, c1),
            (c1, c2),
            (c2, f0),
            (f0, f1),
            (f1, c0 * c0),
            (c0, c1),
            (c1, c2),
            (c2, f0),
            (f0, f1),
            (f1, num_classes),
        ]
    }
}
