//! Point clouds, meshes, file formats and datasets.

mod cloud;
mod dataset;
pub mod io;
mod mesh;
mod synthetic;

pub use cloud::PointCloud;

pub use dataset::{
    average_points, class_average_init, generate_synthetic, load_directory, normalize_to_cube, rebuild, resample,
    Instance, LabeledDataset, Provenance, Split, SyntheticSpec, DEFAULT_POINTS,
};
pub use io::{load_cloud, load_off, load_ply, load_xyz, write_ply, write_xyz, PlyContent};
pub use mesh::{sample_points, Mesh};
pub use synthetic::{sample_instance, RawInstance, ShapeFamily};
