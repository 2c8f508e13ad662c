//! On-disk checkpoints: every parameter group and optimiser moment as a
//! concatenated stream of P2IT tensors, plus a JSON index.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{encoded_len, read_tensor, write_tensor};
use crate::tensor::Tensor;

use super::model::{ArchConfig, DenoiserParams};
use super::optim::AdamState;

pub const TENSORS_FILE: &str = "tensors.p2it";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParams,
    pub optimizer: Option<AdamState>,
    pub stage: u8,
    pub seed: u64,
    /// Master seed of the latent codec the weights were trained against.
    pub codec_seed: u64,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    dims: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerRef {
    step: u64,
    m: String,
    v: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Index {
    arch: ArchConfig,
    stage: u8,
    seed: u64,
    codec_seed: u64,
    fingerprint: String,
    tensors: Vec<Entry>,
    optimizer: Option<OptimizerRef>,
    config: serde_json::Value,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut stored = ckpt.params.clone();
    stored.round_to_storage();

    let mut tensors = Vec::new();
    for g in &stored.layout().groups {
        let t = Tensor::new(g.dims.clone(), to_f32(&stored.values()[g.offset..g.offset + g.len]))?;
        tensors.push((g.name.clone(), t));
    }
    let optimizer = match &ckpt.optimizer {
        Some(s) => {
            tensors.push(("adam.m".into(), Tensor::new(vec![s.m.len()], to_f32(&s.m))?));
            tensors.push(("adam.v".into(), Tensor::new(vec![s.v.len()], to_f32(&s.v))?));
            Some(OptimizerRef {
                step: s.step,
                m: "adam.m".into(),
                v: "adam.v".into(),
            })
        }
        None => None,
    };

    let path = dir.join(TENSORS_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut sink = BufWriter::new(file);
    let mut entries = Vec::new();
    let mut offset = 0;
    for (name, t) in &tensors {
        write_tensor(&mut sink, t)?;
        entries.push(Entry {
            name: name.clone(),
            dims: t.dims.clone(),
            offset,
        });
        offset += encoded_len(t);
    }
    sink.flush().map_err(|e| Error::io(&path, e))?;

    let index = Index {
        arch: stored.arch(),
        stage: ckpt.stage,
        seed: ckpt.seed,
        codec_seed: ckpt.codec_seed,
        fingerprint: stored.fingerprint(),
        tensors: entries,
        optimizer,
        config: ckpt.config.clone(),
    };
    let text = serde_json::to_string_pretty(&index).map_err(|e| Error::json("checkpoint index", e))?;
    let ipath = dir.join(INDEX_FILE);
    fs::write(&ipath, text + "\n").map_err(|e| Error::io(&ipath, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let ipath = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&ipath).map_err(|e| Error::io(&ipath, e))?;
    let index: Index = serde_json::from_str(&text).map_err(|e| Error::json("checkpoint index", e))?;
    let path = dir.join(TENSORS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;

    let fetch = |name: &str| -> Result<Tensor> {
        let e = index
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Validation(format!("checkpoint has no tensor {name:?}")))?;
        if e.offset > bytes.len() as u64 {
            return Err(Error::Format {
                offset: e.offset,
                reason: format!("tensor {name:?} starts past end of file"),
            });
        }
        let mut cur = Cursor::new(&bytes[e.offset as usize..]);
        let t = read_tensor(&mut cur).map_err(|err| match err {
            Error::Format { offset, reason } => Error::Format {
                offset: offset + e.offset,
                reason,
            },
            other => other,
        })?;
        if t.dims != e.dims {
            return Err(Error::shape(&e.dims, &t.dims));
        }
        Ok(t)
    };

    let mut params = DenoiserParams::zeros(index.arch)?;
    for g in params.layout().groups.clone() {
        let t = fetch(&g.name)?;
        if t.dims != g.dims {
            return Err(Error::shape(&g.dims, &t.dims));
        }
        for (dst, &src) in params.values_mut()[g.offset..g.offset + g.len].iter_mut().zip(&t.data) {
            *dst = src as f64;
        }
    }
    if params.fingerprint() != index.fingerprint {
        return Err(Error::Validation("checkpoint fingerprint does not match its weights".into()));
    }
    let optimizer = match &index.optimizer {
        Some(r) => {
            let m = fetch(&r.m)?;
            let v = fetch(&r.v)?;
            if m.data.len() != params.len() || v.data.len() != params.len() {
                return Err(Error::shape(&[params.len()], &[m.data.len()]));
            }
            Some(AdamState {
                step: r.step,
                m: m.data.iter().map(|&x| x as f64).collect(),
                v: v.data.iter().map(|&x| x as f64).collect(),
            })
        }
        None => None,
    };
    Ok(Checkpoint {
        params,
        optimizer,
        stage: index.stage,
        seed: index.seed,
        codec_seed: index.codec_seed,
        config: index.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn sample() -> Checkpoint {
        let mut rng = SeededRng::new(11);
        let params = DenoiserParams::init(ArchConfig::default(), &mut rng).unwrap();
        let mut opt = AdamState::new(params.len());
        opt.step = 3;
        opt.m.iter_mut().enumerate().for_each(|(i, m)| *m = i as f64 * 0.5);
        Checkpoint {
            params,
            optimizer: Some(opt),
            stage: 1,
            seed: 11,
            codec_seed: 5,
            config: serde_json::json!({"steps": 3}),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample();
        save_checkpoint(dir.path(), &c).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.params.fingerprint(), c.params.fingerprint());
    }

    #[test]
    fn detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &sample()).unwrap();
        let p = dir.path().join(TENSORS_FILE);
        let mut bytes = fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n / 3] ^= 0x40;
        fs::write(&p, &bytes).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }

    #[test]
    fn truncation_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &sample()).unwrap();
        let p = dir.path().join(TENSORS_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Format { .. })));
    }
}
