//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "KNEECKPT"  u32 version
//! u32 header length    header JSON    (architecture, preprocessing, target
//!                                     statistics, seed, provenance)
//! u32 manifest length  manifest JSON  (name, group, shape and offset of each
//!                                     tensor; group settings)
//! f64 values of every tensor in manifest order
//! SHA-256 of everything above
//! ```
//!
//! Loading checks the digest before anything else, so truncated or edited
//! files fail with [`Error::Corrupt`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::{write_atomic, FrameReader, FrameWriter};
use crate::model::{declare, ArchitectureDescriptor, GroupSettings, ModelGraph, NamedParam, ParamGroup, TargetStats};
use crate::signal::PreprocessConfig;

pub const MAGIC: &[u8; 8] = b"KNEECKPT";
pub const FORMAT_VERSION: u32 = 1;

/// A model plus what is needed to feed it new data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelGraph,
    /// Preprocessing the model was trained with.
    pub preprocess: PreprocessConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    descriptor: ArchitectureDescriptor,
    preprocess: PreprocessConfig,
    target: Option<TargetStats>,
    seed: u64,
    provenance: Vec<String>,
    n_values: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    /// Index of the first value in the blob.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<TensorEntry>,
    groups: BTreeMap<ParamGroup, GroupSettings>,
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let model = &ckpt.model;
    let mut offset = 0;
    let tensors = model
        .params
        .iter()
        .map(|p| {
            let e = TensorEntry { name: p.name.clone(), group: p.group, shape: p.value.shape().to_vec(), offset };
            offset += p.value.len();
            e
        })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        descriptor: model.descriptor,
        preprocess: ckpt.preprocess,
        target: model.target,
        seed: ckpt.seed,
        provenance: model.provenance.clone(),
        n_values: offset,
    };
    let manifest = Manifest { tensors, groups: model.groups.clone() };
    let mut w = FrameWriter::new(MAGIC, FORMAT_VERSION);
    w.json(&header);
    w.json(&manifest);
    w.values(model.params.iter().flat_map(|p| p.value.data()));
    w.finish()
}

/// Offsets must tile `0..n_values` without gaps or overlap.
fn check_coverage(tensors: &[TensorEntry], n_values: usize) -> Result<()> {
    let mut spans: Vec<(usize, usize, &str)> =
        tensors.iter().map(|t| (t.offset, t.shape.iter().product::<usize>(), t.name.as_str())).collect();
    spans.sort_unstable();
    let mut next = 0;
    for (offset, len, name) in spans {
        if offset != next {
            return Err(Error::Corrupt(format!("`{name}` starts at {offset}, expected {next}")));
        }
        next = offset + len;
    }
    if next != n_values {
        return Err(Error::Corrupt(format!("manifest covers {next} of {n_values} values")));
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = FrameReader::open(bytes, MAGIC, FORMAT_VERSION, "checkpoint")?;
    let header: Header = r.json("header")?;
    let manifest: Manifest = r.json("manifest")?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Corrupt(format!("header says version {}", header.format_version)));
    }

    let expected = declare(header.descriptor.scenario, &header.descriptor.hyper);
    let matches = expected.len() == manifest.tensors.len()
        && expected.iter().zip(&manifest.tensors).all(|(d, t)| d.name == t.name && d.shape == t.shape && d.group == t.group);
    if !matches {
        return Err(Error::Corrupt(format!(
            "tensor list does not match a {} model with the stored hyperparameters",
            header.descriptor.scenario
        )));
    }
    check_coverage(&manifest.tensors, header.n_values)?;
    let values = r.values(header.n_values)?;
    let params = manifest
        .tensors
        .into_iter()
        .map(|t| {
            let n: usize = t.shape.iter().product();
            let data = values[t.offset..t.offset + n].to_vec();
            Ok(NamedParam { name: t.name, group: t.group, value: Tensor::new(t.shape, data)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = ModelGraph {
        descriptor: header.descriptor,
        params,
        groups: manifest.groups,
        target: header.target,
        provenance: header.provenance,
    };
    Ok(Checkpoint { model, preprocess: header.preprocess, seed: header.seed })
}

/// Writes atomically; an interrupted save leaves any previous file intact.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelHyper};
    use crate::scenario::Scenario;
    use sha2::{Digest, Sha256};

    fn wrap(model: ModelGraph) -> Checkpoint {
        Checkpoint { model, preprocess: PreprocessConfig::default(), seed: 5 }
    }

    fn model() -> Checkpoint {
        let mut m = build_model(Scenario::DicF, ModelHyper::default(), 5).unwrap();
        m.target = Some(TargetStats { mean: 31.5, std: 12.25 });
        m.set_group_training(ParamGroup::EmgBranch, false, 0.1).unwrap();
        m.provenance.push("primary".into());
        wrap(m)
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        assert_eq!(decode(&encode(&m)).unwrap(), m);
    }

    #[test]
    fn every_truncation_is_corrupt() {
        let bytes = encode(&wrap(build_model(Scenario::Sic, ModelHyper::default(), 1).unwrap()));
        for cut in [0, 7, 12, 100, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Corrupt(_))), "cut at {cut}");
        }
    }

    #[test]
    fn flipped_bit_is_corrupt() {
        let mut bytes = encode(&model());
        let i = bytes.len() - 100;
        bytes[i] ^= 1;
        assert!(matches!(decode(&bytes), Err(Error::Corrupt(_))));
    }

    #[test]
    fn coverage_gaps_are_found() {
        let t = |name: &str, len: usize, offset: usize| TensorEntry {
            name: name.into(),
            group: ParamGroup::Head,
            shape: vec![len],
            offset,
        };
        assert!(check_coverage(&[t("a", 3, 0), t("b", 2, 3)], 5).is_ok());
        assert!(check_coverage(&[t("a", 3, 0), t("b", 2, 2)], 5).is_err());
        assert!(check_coverage(&[t("a", 3, 0), t("b", 2, 4)], 6).is_err());
        assert!(check_coverage(&[t("a", 3, 0)], 4).is_err());
    }

    #[test]
    fn newer_version_is_refused() {
        let mut bytes = encode(&model());
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        let n = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        assert!(matches!(decode(&bytes), Err(Error::Version { found: 2, expected: 1 })));
    }
}
