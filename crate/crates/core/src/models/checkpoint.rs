//! Checkpoint files: `LCKPT1\n`, a `u64` LE header length, a JSON header
//! (architecture, config, tensor table, free-form state) and then one tensor
//! snapshot per table entry, in table order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Network};
use crate::num::Scalar;
use crate::tensorkit::snapshot::{read_tensor, write_tensor};
use crate::tensorkit::{ParamStore, Tensor};

const MAGIC: &[u8] = b"LCKPT1\n";
const MAX_HEADER: u64 = 64 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Param,
    Extra,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    kind: Kind,
    #[serde(default)]
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: String,
    config: ModelConfig,
    tensors: Vec<Entry>,
    #[serde(default)]
    state: serde_json::Value,
}

/// Everything needed to rebuild a model and resume its training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    /// Auxiliary tensors such as optimizer moments.
    pub extra: Vec<(String, Tensor<T>)>,
    pub state: serde_json::Value,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_network(net: &Network<T>) -> Self {
        Self {
            config: net.config.clone(),
            params: net.params.clone(),
            extra: Vec::new(),
            state: serde_json::Value::Null,
        }
    }

    pub fn extra(&self, name: &str) -> Option<&Tensor<T>> {
        self.extra.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the network, checking every parameter shape against the config.
    pub fn to_network(&self) -> Result<Network<T>, ModelError> {
        let mut net = Network::new(self.config.clone())?;
        net.load_params(&self.params)?;
        Ok(net)
    }
}

pub fn write_checkpoint_to<T: Scalar, W: Write>(w: &mut W, ck: &Checkpoint<T>) -> Result<(), ModelError> {
    let mut tensors: Vec<Entry> = ck
        .params
        .iter()
        .map(|p| Entry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            kind: Kind::Param,
            trainable: p.trainable,
        })
        .collect();
    tensors.extend(ck.extra.iter().map(|(name, t)| Entry {
        name: name.clone(),
        shape: t.shape().to_vec(),
        kind: Kind::Extra,
        trainable: false,
    }));
    let header = Header {
        arch: ck.config.arch.as_str().to_string(),
        config: ck.config.clone(),
        tensors,
        state: ck.state.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in ck.params.iter() {
        write_tensor(w, &p.value)?;
    }
    for (_, t) in &ck.extra {
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn write_checkpoint<T: Scalar>(path: &Path, ck: &Checkpoint<T>) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint_to(&mut w, ck)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint_from<T: Scalar, R: Read>(r: &mut R) -> Result<Checkpoint<T>, ModelError> {
    let mut magic = [0u8; MAGIC.len()];
    r.read_exact(&mut magic)
        .map_err(|_| ModelError::Checkpoint("file too short".into()))?;
    if magic != MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(ModelError::Checkpoint(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.arch != header.config.arch.as_str() {
        return Err(ModelError::Checkpoint(format!(
            "architecture tag '{}' disagrees with config '{}'",
            header.arch,
            header.config.arch.as_str()
        )));
    }
    let mut params = ParamStore::new();
    let mut extra = Vec::new();
    for e in header.tensors {
        let t: Tensor<T> = read_tensor(r)
            .map_err(|err| ModelError::Checkpoint(format!("tensor '{}': {err}", e.name)))?;
        if t.shape() != e.shape.as_slice() {
            return Err(ModelError::ShapeMismatch {
                name: e.name,
                expected: e.shape,
                found: t.shape().to_vec(),
            });
        }
        match e.kind {
            Kind::Param => params.insert(e.name, t, e.trainable),
            Kind::Extra => extra.push((e.name, t)),
        }
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        extra,
        state: header.state,
    })
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint_from(&mut r)
}
