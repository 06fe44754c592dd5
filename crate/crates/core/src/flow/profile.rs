use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Instance, Split};
use crate::error::{Error, Result};
use crate::nn::{layer_index, ActivationRecord, PointNet, LAYER_NAMES, NUM_LAYERS};

/// Activation records of every instance, in instance order.
pub fn record_all(model: &PointNet<f32>, instances: &[Instance]) -> Result<Vec<ActivationRecord<f32>>> {
    instances
        .par_iter()
        .map(|inst| {
            let (_, rec) = model.forward(inst.cloud.to_array::<f32>().view(), true)?;
            Ok(rec.expect("record requested"))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class: usize,
    pub name: String,
    pub count: usize,
    /// Mean activation per canonical layer.
    pub means: Vec<Vec<f64>>,
}

/// Per-class mean activation vectors for every canonical layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub split: Split,
    pub layer_widths: Vec<usize>,
    pub classes: Vec<ClassEntry>,
    /// Classes with no instance in the split.
    pub omitted: Vec<String>,
}

impl ClassProfile {
    pub fn entry(&self, class: usize) -> Option<&ClassEntry> {
        self.classes.iter().find(|e| e.class == class)
    }

    pub fn mean(&self, class: usize, layer: &str) -> Result<ArrayView1<'_, f64>> {
        let l = layer_index(layer).ok_or_else(|| Error::contract(format!("profile has no layer {layer:?}")))?;
        let e = self
            .entry(class)
            .ok_or_else(|| Error::contract(format!("profile has no class {class}")))?;
        Ok(ArrayView1::from(e.means[l].as_slice()))
    }

    pub fn mean_f32(&self, class: usize, layer: &str) -> Result<Array1<f32>> {
        Ok(self.mean(class, layer)?.mapv(|v| v as f32))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Arithmetic mean of the recorded activations per class. Sums run in
/// instance order, so the result does not depend on scheduling.
pub fn class_profiles(
    model: &PointNet<f32>,
    instances: &[Instance],
    class_names: &[String],
    split: Split,
) -> Result<ClassProfile> {
    if instances.is_empty() {
        return Err(Error::input("cannot profile an empty split"));
    }
    let k = class_names.len();
    if let Some(bad) = instances.iter().find(|i| i.cloud.label.is_none_or(|l| l >= k)) {
        return Err(Error::input(format!("instance {} has no label in [0, {k})", bad.id)));
    }
    let records = record_all(model, instances)?;
    let widths: Vec<usize> = (0..NUM_LAYERS).map(|l| model.layer_width(l)).collect();
    let mut sums: Vec<Option<(usize, Vec<Vec<f64>>)>> = vec![None; k];
    for (inst, rec) in instances.iter().zip(&records) {
        let slot = sums[inst.label()].get_or_insert_with(|| (0, widths.iter().map(|&w| vec![0.0; w]).collect()));
        slot.0 += 1;
        for (l, acc) in slot.1.iter_mut().enumerate() {
            for (a, &v) in acc.iter_mut().zip(rec.by_index(l)) {
                *a += v as f64;
            }
        }
    }
    let mut classes = Vec::new();
    let mut omitted = Vec::new();
    for (c, s) in sums.into_iter().enumerate() {
        match s {
            Some((count, mut means)) => {
                for m in &mut means {
                    m.iter_mut().for_each(|v| *v /= count as f64);
                }
                classes.push(ClassEntry {
                    class: c,
                    name: class_names[c].clone(),
                    count,
                    means,
                });
            }
            None => omitted.push(class_names[c].clone()),
        }
    }
    Ok(ClassProfile {
        split,
        layer_widths: widths,
        classes,
        omitted,
    })
}

pub const PROFILE_MAGIC: &[u8; 8] = b"FLOWPRF1";
pub const PROFILE_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct LayerKey {
    name: String,
    width: usize,
}

#[derive(Serialize, Deserialize)]
struct ClassKey {
    class: usize,
    name: String,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct ProfileHeader {
    split: Split,
    layers: Vec<LayerKey>,
    classes: Vec<ClassKey>,
    omitted: Vec<String>,
}

/// Layout: magic, version byte, u32 header length, JSON header naming the
/// layers and classes, f64 LE means (class-major, then layer), CRC-32.
pub fn encode_profiles(p: &ClassProfile) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&ProfileHeader {
        split: p.split,
        layers: LAYER_NAMES
            .iter()
            .zip(&p.layer_widths)
            .map(|(n, &w)| LayerKey {
                name: n.to_string(),
                width: w,
            })
            .collect(),
        classes: p
            .classes
            .iter()
            .map(|e| ClassKey {
                class: e.class,
                name: e.name.clone(),
                count: e.count,
            })
            .collect(),
        omitted: p.omitted.clone(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(PROFILE_MAGIC);
    out.push(PROFILE_VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for e in &p.classes {
        for m in &e.means {
            for v in m {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_profiles(bytes: &[u8]) -> Result<ClassProfile> {
    let trunc = || Error::format("truncated profile file");
    if bytes.len() < 17 || &bytes[..8] != PROFILE_MAGIC {
        return Err(if bytes.len() >= 8 && &bytes[..8] != PROFILE_MAGIC {
            Error::format("bad magic header, not a flowam profile file")
        } else {
            trunc()
        });
    }
    if bytes[8] != PROFILE_VERSION {
        return Err(Error::Version {
            found: bytes[8],
            expected: PROFILE_VERSION,
        });
    }
    let hlen = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let hend = 13usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(trunc)?;
    let header: ProfileHeader =
        serde_json::from_slice(&bytes[13..hend]).map_err(|e| Error::format(format!("corrupt profile header: {e}")))?;
    let mut widths = vec![0usize; NUM_LAYERS];
    if header.layers.len() != NUM_LAYERS {
        return Err(Error::format("profile does not cover every canonical layer"));
    }
    for key in &header.layers {
        let l = layer_index(&key.name).ok_or_else(|| Error::format(format!("unknown layer {:?}", key.name)))?;
        widths[l] = key.width;
    }
    let per_class: usize = widths.iter().sum();
    let need = header.classes.len() * per_class * 8;
    let body_end = hend.checked_add(need).ok_or_else(trunc)?;
    if bytes.len() != body_end + 4 {
        return Err(trunc());
    }
    let crc = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    if crc32fast::hash(&bytes[..body_end]) != crc {
        return Err(Error::format("profile checksum mismatch"));
    }
    let mut vals = bytes[hend..body_end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut classes = Vec::new();
    for key in header.classes {
        let mut means = vec![Vec::new(); NUM_LAYERS];
        for lk in &header.layers {
            let l = layer_index(&lk.name).unwrap();
            means[l] = vals.by_ref().take(lk.width).collect();
        }
        classes.push(ClassEntry {
            class: key.class,
            name: key.name,
            count: key.count,
            means,
        });
    }
    Ok(ClassProfile {
        split: header.split,
        layer_widths: widths,
        classes,
        omitted: header.omitted,
    })
}

pub fn save_profiles(p: &ClassProfile, path: impl AsRef<Path>) -> Result<()> {
    crate::data::io::write_file(path.as_ref(), &encode_profiles(p)?)
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<ClassProfile> {
    decode_profiles(&std::fs::read(path)?)
}
