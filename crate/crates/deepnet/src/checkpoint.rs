//! Binary checkpoint: magic, format version (u32), header length (u64), a
//! JSON header, then every parameter block as little-endian f64 in
//! declaration order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use dlnice_core::{Error, Result};

use crate::config::{NetworkConfig, NetworkKind};
use crate::data::Normalizer;
use crate::network::{Architecture, Network};
use crate::train::{EpochLog, TrainedNetwork};

pub const MAGIC: &[u8; 8] = b"DLNICENN";
pub const VERSION: u32 = 1;
/// Headers larger than this are rejected as corrupt.
const MAX_HEADER: u64 = 64 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BlockShape {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: NetworkKind,
    config: NetworkConfig,
    seed: u64,
    architecture: Architecture,
    blocks: Vec<BlockShape>,
    normalizer: Normalizer,
    residual_sd: BTreeMap<String, f64>,
    best_epoch: usize,
    best_val_loss: f64,
    history: Vec<EpochLog>,
}

fn shapes(arch: &Architecture) -> Vec<BlockShape> {
    arch.blocks()
        .into_iter()
        .map(|b| BlockShape { name: b.name, rows: b.rows, cols: b.cols })
        .collect()
}

pub fn write_checkpoint<W: Write>(t: &TrainedNetwork, out: &mut W) -> Result<()> {
    let header = Header {
        kind: t.kind,
        config: t.config.clone(),
        seed: t.seed,
        architecture: t.net.arch.clone(),
        blocks: shapes(&t.net.arch),
        normalizer: t.norm.clone(),
        residual_sd: t.residual_sd.clone(),
        best_epoch: t.best_epoch,
        best_val_loss: t.best_val_loss,
        history: t.history.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for p in &t.net.params {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Domain(format!("invalid network checkpoint: {}", msg.into()))
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<TrainedNetwork> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    if len > MAX_HEADER {
        return Err(corrupt(format!("header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json)?;
    let h: Header = serde_json::from_slice(&json)?;
    if h.blocks != shapes(&h.architecture) {
        return Err(corrupt("block list does not match the architecture"));
    }
    let n = h.architecture.n_params();
    let mut bytes = Vec::with_capacity(n * 8);
    input.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(corrupt(format!("expected {} weight bytes, found {}", n * 8, bytes.len())));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(corrupt("non-finite weight"));
    }
    Ok(TrainedNetwork {
        kind: h.kind,
        config: h.config,
        seed: h.seed,
        net: Network::from_params(h.architecture, params)?,
        norm: h.normalizer,
        residual_sd: h.residual_sd,
        history: h.history,
        best_epoch: h.best_epoch,
        best_val_loss: h.best_val_loss,
    })
}

pub fn save_checkpoint(t: &TrainedNetwork, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(t, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedNetwork> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
