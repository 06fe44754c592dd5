//! Shared fixtures for the kernel benchmarks.

use flowam::data::{generate_synthetic, LabeledDataset, ShapeFamily, SyntheticSpec};
use flowam::nn::{build_model, PointNet, Widths};

pub fn fixture_model(num_classes: usize) -> PointNet<f32> {
    build_model(num_classes, Widths::desk(), 7).expect("valid widths")
}

pub fn fixture_dataset(n_points: usize) -> LabeledDataset {
    let spec = SyntheticSpec::new(ShapeFamily::DESK.to_vec(), 4, n_points, 11);
    generate_synthetic(&spec).expect("valid spec")
}
