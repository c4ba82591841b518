//! Binary model file.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! b"ICDM"  u32 version
//! u64 header length, header JSON {config, vocab, training_log}
//! u32 tensor count
//! per tensor: u32 name length, name, u8 dtype (8 = f64), u8 ndim,
//!             u64 per dim, raw values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, TrainedModel};
use super::store::ParamStore;
use super::train::EpochLog;
use super::vocab::Vocab;
use super::{NnError, Tensor};

const MAGIC: &[u8; 4] = b"ICDM";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 8;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocab,
    training_log: Vec<EpochLog>,
}

pub fn write_model<W: Write>(model: &TrainedModel, mut w: W) -> Result<(), NnError> {
    let header = Header {
        config: model.config.clone(),
        vocab: model.vocab.clone(),
        training_log: model.training_log.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| NnError::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for (name, t) in model.params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[DTYPE_F64, 2])?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in t.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], NnError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

// Guards allocations against corrupt length fields.
const MAX_HEADER: u64 = 1 << 30;
const MAX_ELEMS: u64 = 1 << 32;

pub fn read_model<R: Read>(mut r: R) -> Result<TrainedModel, NnError> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(NnError::Format("not a model file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let hlen = read_u64(&mut r)?;
    if hlen > MAX_HEADER {
        return Err(NnError::Format(format!("header length {hlen} too large")));
    }
    let mut json = vec![0u8; hlen as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| NnError::Format(e.to_string()))?;
    let count = read_u32(&mut r)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let nlen = read_u32(&mut r)?;
        if u64::from(nlen) > MAX_HEADER {
            return Err(NnError::Format("tensor name too long".into()));
        }
        let mut name = vec![0u8; nlen as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| NnError::Format("tensor name is not utf-8".into()))?;
        let [dtype, ndim] = read_array(&mut r)?;
        if dtype != DTYPE_F64 || ndim != 2 {
            return Err(NnError::Format(format!(
                "tensor {name}: dtype {dtype} ndim {ndim}, expected f64 matrix"
            )));
        }
        let rows = read_u64(&mut r)?;
        let cols = read_u64(&mut r)?;
        if rows.saturating_mul(cols) > MAX_ELEMS {
            return Err(NnError::Format(format!("tensor {name} too large")));
        }
        let mut data = Vec::with_capacity((rows * cols) as usize);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        let t = Tensor::from_shape_vec((rows as usize, cols as usize), data)
            .map_err(|e| NnError::Format(e.to_string()))?;
        params.insert(name, t);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(NnError::Format("trailing bytes after last tensor".into()));
    }
    header.config.validate()?;
    if params.try_get("embedding").map(|e| e.nrows()) != Some(header.vocab.size()) {
        return Err(NnError::Format("embedding rows do not match the vocabulary".into()));
    }
    Ok(TrainedModel {
        config: header.config,
        vocab: header.vocab,
        params,
        training_log: header.training_log,
    })
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), NnError> {
    write_model(model, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: &Path) -> Result<TrainedModel, NnError> {
    read_model(BufReader::new(File::open(path)?))
}
