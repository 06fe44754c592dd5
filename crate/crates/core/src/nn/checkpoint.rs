use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Widths;
use super::model::PointNet;
use super::train::{EpochStats, TrainConfig};
use crate::data::Provenance;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FLOWAM01";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub dataset: Option<Provenance>,
    pub config: Option<TrainConfig>,
    pub history: Vec<EpochStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: PointNet<f32>,
    pub class_names: Vec<String>,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: String,
    num_classes: usize,
    widths: Widths,
    class_names: Vec<String>,
    param_count: usize,
    metadata: TrainingMetadata,
}

const ARCHITECTURE: &str = "pointnet-nobn";

/// Layout: magic, version byte, u32 header length, JSON header, u64
/// parameter count, f32 LE parameters, u32 CRC-32 of everything before it.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    if ckpt.class_names.len() != ckpt.model.num_classes() {
        return Err(Error::config(format!(
            "{} class names for a {}-class model",
            ckpt.class_names.len(),
            ckpt.model.num_classes()
        )));
    }
    let params = ckpt.model.params();
    let header = serde_json::to_vec(&Header {
        architecture: ARCHITECTURE.into(),
        num_classes: ckpt.model.num_classes(),
        widths: ckpt.model.widths(),
        class_names: ckpt.class_names.clone(),
        param_count: params.len(),
        metadata: ckpt.metadata.clone(),
    })?;
    let mut out = Vec::with_capacity(32 + header.len() + 4 * params.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(format!("truncated checkpoint while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format("bad magic header, not a flowam checkpoint"));
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let hlen = u32::from_le_bytes(r.take(4, "header length")?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(hlen, "header")?)
        .map_err(|e| Error::format(format!("corrupt checkpoint header: {e}")))?;
    if header.architecture != ARCHITECTURE {
        return Err(Error::format(format!("unknown architecture {:?}", header.architecture)));
    }
    let count = u64::from_le_bytes(r.take(8, "parameter count")?.try_into().unwrap()) as usize;
    if count != header.param_count {
        return Err(Error::format("parameter count disagrees with header"));
    }
    let payload = r.take(count.checked_mul(4).ok_or_else(|| Error::format("parameter count overflow"))?, "parameters")?;
    let body_end = r.pos;
    let crc = u32::from_le_bytes(r.take(4, "checksum")?.try_into().unwrap());
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after checksum"));
    }
    if crc32fast::hash(&bytes[..body_end]) != crc {
        return Err(Error::format("checksum mismatch, payload is corrupt"));
    }
    let params: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if header.class_names.len() != header.num_classes {
        return Err(Error::format("class-name list does not match class count"));
    }
    let model = PointNet::from_parts(header.num_classes, header.widths, &params)
        .map_err(|e| Error::format(format!("payload does not fit the architecture: {e}")))?;
    Ok(Checkpoint {
        model,
        class_names: header.class_names,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    crate::data::io::write_file(path.as_ref(), &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        let model = PointNet::new(3, Widths { conv: [4, 6, 8], fc: [5, 4] }, 9).unwrap();
        Checkpoint {
            model,
            class_names: vec!["a".into(), "b".into(), "c".into()],
            metadata: TrainingMetadata {
                config: Some(TrainConfig::default()),
                ..Default::default()
            },
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let c = ckpt();
        let bytes = encode_checkpoint(&c).unwrap();
        assert_eq!(&bytes[..8], b"FLOWAM01");
        let back = decode_checkpoint(&bytes).unwrap();
        let bits = |m: &PointNet<f32>| m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.model), bits(&c.model));
        assert_eq!(back, c);
    }

    #[test]
    fn history_floats_survive_reencoding() {
        use rand::Rng;
        let mut r = crate::rng::stream(3, 0);
        let mut c = ckpt();
        c.metadata.history = (1..=200)
            .map(|epoch| crate::nn::EpochStats {
                epoch,
                loss: r.random::<f64>() * 3.0,
                train_accuracy: r.random(),
                test_accuracy: Some(r.random::<f64>() / 7.0),
            })
            .collect();
        let bytes = encode_checkpoint(&c).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&ckpt(), &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), ckpt());
    }

    #[test]
    fn truncation_at_every_length_is_a_format_error() {
        let bytes = encode_checkpoint(&ckpt()).unwrap();
        for n in (0..bytes.len()).step_by(7) {
            assert!(matches!(decode_checkpoint(&bytes[..n]), Err(Error::Format(_))), "len {n}");
        }
    }

    #[test]
    fn corrupted_payload_and_magic() {
        let mut bytes = encode_checkpoint(&ckpt()).unwrap();
        let n = bytes.len();
        bytes[n - 20] ^= 0x40;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_checkpoint(&ckpt()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version_is_reported() {
        let mut bytes = encode_checkpoint(&ckpt()).unwrap();
        bytes[8] = 7;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Version { found: 7, expected: 1 })));
    }
}
