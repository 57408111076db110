//! Binary checkpoints: the run configuration plus every named parameter
//! tensor, written in store order with explicit shapes.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"ALGN"
//! version u32
//! config  u64 length + that many bytes of JSON
//! count   u64 number of parameters
//! per parameter:
//!   name  u64 length + UTF-8 bytes
//!   ndim  u64, then each dimension as u64
//!   data  numel × f64 bit patterns
//! ```
//!
//! Values are stored as raw f64 bits, so save → load → save reproduces the
//! file byte for byte.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::config::TrainConfig;
use crate::model::{Model, VocabSizes};
use crate::params::ParamStore;

const MAGIC: &[u8; 4] = b"ALGN";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("config in checkpoint is invalid: {0}")]
    BadConfig(String),
}

fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_bytes(w: &mut impl Write, bytes: &[u8]) -> io::Result<()> {
    write_u64(w, bytes.len() as u64)?;
    w.write_all(bytes)
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_bytes(r: &mut impl Read, what: &str) -> Result<Vec<u8>, CheckpointError> {
    let len = read_u64(r)? as usize;
    // each element of any real section is at least a byte; a gigabyte cap
    // keeps a corrupt length from triggering a huge allocation
    if len > (1 << 30) {
        return Err(CheckpointError::Malformed(format!(
            "{what} length {len} is implausible"
        )));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Serializes `model` (config + parameters) to `w`.
pub fn write_model(w: &mut impl Write, model: &Model) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config_json =
        serde_json::to_vec(&model.config).expect("config serialization cannot fail");
    write_bytes(w, &config_json)?;
    write_u64(w, model.params.len() as u64)?;
    for (name, param) in model.params.iter() {
        write_bytes(w, name.as_bytes())?;
        write_u64(w, param.shape.len() as u64)?;
        for &d in &param.shape {
            write_u64(w, d as u64)?;
        }
        for &v in param.data.iter() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint back into a model. Vocabulary sizes are recovered from
/// the embedding-table shapes.
pub fn read_model(r: &mut impl Read) -> Result<Model, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let config_json = read_bytes(r, "config")?;
    let config: TrainConfig = serde_json::from_slice(&config_json)
        .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    config
        .validate()
        .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;

    let count = read_u64(r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_bytes = read_bytes(r, "parameter name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?;
        let ndim = read_u64(r)? as usize;
        if ndim == 0 || ndim > 4 {
            return Err(CheckpointError::Malformed(format!(
                "parameter {name}: {ndim} dimensions"
            )));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel == 0 || numel > (1 << 27) {
            return Err(CheckpointError::Malformed(format!(
                "parameter {name}: implausible element count {numel}"
            )));
        }
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_bits(u64::from_le_bytes(buf)));
        }
        if store.contains(&name) {
            return Err(CheckpointError::Malformed(format!(
                "parameter {name} appears twice"
            )));
        }
        store.insert(&name, shape, data);
    }

    let sizes = sizes_from_store(&store)?;
    let model = Model::from_parts(config, sizes, store);
    Ok(model)
}

fn sizes_from_store(store: &ParamStore) -> Result<VocabSizes, CheckpointError> {
    let rows = |name: &str| -> Result<usize, CheckpointError> {
        if !store.contains(name) {
            return Err(CheckpointError::Malformed(format!(
                "checkpoint is missing parameter {name}"
            )));
        }
        Ok(store.get(name).shape[0])
    };
    Ok(VocabSizes {
        diag: rows("embed.diag")?,
        proc: rows("embed.proc")?,
        med: rows("embed.med")?,
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let model = read_model(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Malformed(
            "trailing bytes after checkpoint".into(),
        ));
    }
    Ok(model)
}
