use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use super::io::load_cloud;
use super::synthetic::{sample_instance, ShapeFamily};
use crate::error::{Error, Result};
use crate::rng;

/// Default points per instance when resampling.
pub const DEFAULT_POINTS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub cloud: PointCloud,
}

impl Instance {
    pub fn label(&self) -> usize {
        self.cloud.label.expect("dataset instances are labeled")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: Vec<ShapeFamily>,
    pub instances_per_class: usize,
    pub n_points: usize,
    pub test_fraction: f64,
    pub jitter: f32,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(classes: Vec<ShapeFamily>, instances_per_class: usize, n_points: usize, seed: u64) -> Self {
        Self {
            classes,
            instances_per_class,
            n_points,
            test_fraction: 0.2,
            jitter: 0.01,
            seed,
        }
    }
}

/// Where a dataset came from; enough to rebuild it bit-identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Synthetic(SyntheticSpec),
    Directory { root: PathBuf, n_points: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub classes: Vec<String>,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn split(&self, split: Split) -> &[Instance] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn class_index(&self, name: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::config(format!("class '{name}' is not in the dataset")))
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Instances of `class` in `split`, in stored order.
    pub fn of_class(&self, split: Split, class: usize) -> Vec<&Instance> {
        self.split(split).iter().filter(|i| i.label() == class).collect()
    }

    /// JSON manifest listing every instance with its label and split.
    pub fn manifest(&self) -> serde_json::Value {
        let entry = |inst: &Instance, split: &str| {
            serde_json::json!({
                "id": inst.id,
                "label": inst.label(),
                "class": self.classes[inst.label()],
                "split": split,
                "points": inst.cloud.len(),
            })
        };
        let instances: Vec<_> = self
            .train
            .iter()
            .map(|i| entry(i, "train"))
            .chain(self.test.iter().map(|i| entry(i, "test")))
            .collect();
        serde_json::json!({
            "classes": self.classes,
            "provenance": self.provenance,
            "instances": instances,
        })
    }
}

/// Builds the procedural dataset. Each instance draws from its own stream,
/// so the parallel build equals a sequential one.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    if spec.classes.is_empty() {
        return Err(Error::config("no classes requested"));
    }
    if spec.n_points < 64 {
        return Err(Error::config(format!("n_points must be at least 64, got {}", spec.n_points)));
    }
    if spec.instances_per_class < 2 {
        return Err(Error::config("need at least two instances per class"));
    }
    if !(0.0..1.0).contains(&spec.test_fraction) {
        return Err(Error::config("test_fraction must lie in [0, 1)"));
    }
    let per = spec.instances_per_class;
    let n_test = ((per as f64 * spec.test_fraction).round() as usize).clamp(1, per - 1);
    let jobs: Vec<(usize, usize)> = (0..spec.classes.len())
        .flat_map(|c| (0..per).map(move |i| (c, i)))
        .collect();
    let built: Vec<Instance> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let family = spec.classes[c];
            let mut r = rng::stream(spec.seed, (c * per + i) as u64);
            let raw = sample_instance(family, spec.n_points, spec.jitter, &mut r)?;
            let cloud = normalize_to_cube(&PointCloud::new(raw.points)?, 1.0)?;
            Ok(Instance {
                id: format!("{}_{:04}", family.name(), i),
                cloud: cloud.with_label(c, family.name()),
            })
        })
        .collect::<Result<_>>()?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (k, inst) in built.into_iter().enumerate() {
        if k % per < per - n_test {
            train.push(inst);
        } else {
            test.push(inst);
        }
    }
    Ok(LabeledDataset {
        classes: spec.classes.iter().map(|f| f.name().to_string()).collect(),
        train,
        test,
        provenance: Provenance::Synthetic(spec.clone()),
    })
}

/// Loads a `root/<class>/{train,test}/*.{off,ply,xyz}` tree (the ModelNet layout).
pub fn load_directory(root: &Path, n_points: usize, seed: u64) -> Result<LabeledDataset> {
    let mut classes: Vec<String> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    classes.sort();
    if classes.is_empty() {
        return Err(Error::input(format!("{}: no class directories", root.display())));
    }
    let mut files: BTreeMap<(usize, &str), Vec<PathBuf>> = BTreeMap::new();
    for (c, name) in classes.iter().enumerate() {
        for split in ["train", "test"] {
            let dir = root.join(name).join(split);
            if !dir.is_dir() {
                continue;
            }
            let mut list: Vec<PathBuf> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                        Some("off" | "ply" | "xyz")
                    )
                })
                .collect();
            list.sort();
            files.insert((c, split), list);
        }
    }
    let load = |split: &str| -> Result<Vec<Instance>> {
        let jobs: Vec<(usize, &PathBuf)> = files
            .iter()
            .filter(|((_, s), _)| *s == split)
            .flat_map(|((c, _), list)| list.iter().map(move |p| (*c, p)))
            .collect();
        jobs.par_iter()
            .map(|&(c, path)| {
                let id = path.strip_prefix(root).unwrap_or(path).to_string_lossy().into_owned();
                let cloud = load_cloud(path, n_points, seed ^ rng::key(&id))?;
                let cloud = resample(&cloud, n_points, seed ^ rng::key(&id));
                let cloud = normalize_to_cube(&cloud, 1.0)?;
                Ok(Instance {
                    id,
                    cloud: cloud.with_label(c, classes[c].clone()),
                })
            })
            .collect()
    };
    let train = load("train")?;
    let test = load("test")?;
    if train.is_empty() && test.is_empty() {
        return Err(Error::input(format!("{}: no point-cloud files found", root.display())));
    }
    Ok(LabeledDataset {
        classes,
        train,
        test,
        provenance: Provenance::Directory {
            root: root.to_path_buf(),
            n_points,
            seed,
        },
    })
}

/// Rebuilds a dataset from its provenance record.
pub fn rebuild(provenance: &Provenance) -> Result<LabeledDataset> {
    match provenance {
        Provenance::Synthetic(spec) => generate_synthetic(spec),
        Provenance::Directory { root, n_points, seed } => load_directory(root, *n_points, *seed),
    }
}

/// Centers the cloud on its centroid and scales it so the largest point
/// norm equals `bound`.
pub fn normalize_to_cube(cloud: &PointCloud, bound: f32) -> Result<PointCloud> {
    if !(bound > 0.0) {
        return Err(Error::config("normalization bound must be positive"));
    }
    let c = cloud.centroid();
    let max_norm = cloud
        .points()
        .iter()
        .map(|p| {
            let d = [p[0] as f64 - c[0], p[1] as f64 - c[1], p[2] as f64 - c[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .fold(0.0f64, f64::max);
    if !(max_norm > 0.0) {
        return Err(Error::input("cannot normalize a cloud whose points all coincide"));
    }
    let s = bound as f64 / max_norm;
    let out = cloud.map_points(|p| [0, 1, 2].map(|k| ((p[k] as f64 - c[k]) * s) as f32));
    // f32 rounding can leave a coordinate a hair outside the bound.
    Ok(out.map_points(|p| p.map(|v| v.clamp(-bound, bound))))
}

/// Draws exactly `n_points` points: without replacement when the cloud is
/// large enough, with replacement otherwise.
pub fn resample(cloud: &PointCloud, n_points: usize, seed: u64) -> PointCloud {
    let mut r = rng::stream(seed, 0);
    let n = cloud.len();
    let order: Vec<usize> = if n >= n_points {
        index::sample(&mut r, n, n_points).into_vec()
    } else {
        (0..n_points).map(|_| r.random_range(0..n)).collect()
    };
    cloud.permuted(&order)
}

/// Index-wise mean of equally sized point lists.
pub fn average_points(clouds: &[&[[f32; 3]]]) -> Result<Vec<[f32; 3]>> {
    let first = clouds.first().ok_or_else(|| Error::input("nothing to average"))?;
    let n = first.len();
    if clouds.iter().any(|c| c.len() != n) {
        return Err(Error::input("clouds to average differ in size"));
    }
    let mut acc = vec![[0.0f64; 3]; n];
    for c in clouds {
        for (a, p) in acc.iter_mut().zip(c.iter()) {
            for k in 0..3 {
                a[k] += p[k] as f64;
            }
        }
    }
    let m = clouds.len() as f64;
    Ok(acc.into_iter().map(|a| a.map(|v| (v / m) as f32)).collect())
}

/// Starting cloud for class `class`: every instance of the class in
/// `instances` is resampled to `n_points` (seeded per instance id) and the
/// results are averaged point by point. Instance order does not matter.
pub fn class_average_init(instances: &[Instance], class: usize, n_points: usize, seed: u64) -> Result<PointCloud> {
    let mut members: Vec<&Instance> = instances.iter().filter(|i| i.label() == class).collect();
    if members.is_empty() {
        return Err(Error::input(format!("class {class} has no instances to average")));
    }
    members.sort_by(|a, b| a.id.cmp(&b.id));
    let resampled: Vec<PointCloud> = members
        .iter()
        .map(|i| resample(&i.cloud, n_points, seed ^ rng::key(&i.id)))
        .collect();
    let views: Vec<&[[f32; 3]]> = resampled.iter().map(|c| c.points()).collect();
    let mut out = PointCloud::new(average_points(&views)?)?;
    out.label = Some(class);
    out.class_name = members[0].cloud.class_name.clone();
    Ok(out)
}
