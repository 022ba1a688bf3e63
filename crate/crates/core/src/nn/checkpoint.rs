//! Binary checkpoint container.
//!
//! Layout: the 8 magic bytes `HIMCCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! tensor listed in the header as little-endian `f32` values in order.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use super::{AffinityState, Network, Tensor};
use crate::topology::Topology;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"HIMCCKPT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub topology: Topology,
    pub tensors: Vec<TensorEntry>,
    pub affinity: Option<AffinityState>,
    pub seed: u64,
    pub epoch: u64,
    /// Free-form run metadata (device assignment, ADC ranges, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_network(net: &Network, affinity: Option<&AffinityState>, seed: u64, epoch: u64) -> Self {
        let mut tensors: Vec<TensorEntry> = net
            .conv_weights
            .iter()
            .enumerate()
            .map(|(i, t)| entry(&format!("conv{}.weight", i + 1), t))
            .collect();
        tensors.push(entry("fc.weight", &net.fc_weight));
        tensors.push(entry("fc.bias", &net.fc_bias));
        Checkpoint {
            topology: net.topology.clone(),
            tensors,
            affinity: affinity.cloned(),
            seed,
            epoch,
            meta: serde_json::Value::Null,
        }
    }

    /// Rebuild the network; shapes are checked against the topology.
    pub fn to_network(&self) -> Result<Network> {
        let mut net = Network::new(self.topology.clone(), 0)?;
        let expected = net.params().len();
        if self.tensors.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, topology needs {expected}",
                self.tensors.len()
            )));
        }
        for (param, e) in net.params_mut().into_iter().zip(&self.tensors) {
            if param.shape != e.shape {
                return Err(Error::Format(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    e.name, e.shape, param.shape
                )));
            }
            param.data.copy_from_slice(&e.data);
        }
        Ok(net)
    }
}

fn entry(name: &str, t: &Tensor) -> TensorEntry {
    TensorEntry {
        name: name.into(),
        shape: t.shape.clone(),
        data: t.data.clone(),
    }
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    let header = serde_json::to_vec(ckpt).map_err(|e| Error::Format(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    for t in &ckpt.tensors {
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for a checkpoint".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut header = vec![0u8; len];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    let mut ckpt: Checkpoint = serde_json::from_slice(&header).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    for t in ckpt.tensors.iter_mut() {
        let n: usize = t.shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::Format(format!("truncated data for tensor {}", t.name)))?;
        t.data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
    }
    Ok(ckpt)
}

/// Write via a temporary sibling file and rename, so readers never see a partial file.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let f = std::fs::File::create(&tmp)?;
        write_checkpoint(ckpt, std::io::BufWriter::new(f))?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
