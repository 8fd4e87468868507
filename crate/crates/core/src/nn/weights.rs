//! `SKFORGE1` parameter files.
//!
//! Layout: the 8-byte magic `SKFORGE1`, a little-endian `u64` header length,
//! the JSON header, then every tensor's values as little-endian `f64` in
//! header order. The header lists each tensor's name, shape and byte offset
//! into the data section, the dtype, a config echo and free-form metadata.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ModelConfig;
use super::tensor::Tensor;
use super::NnError;

pub const MAGIC: &[u8; 8] = b"SKFORGE1";

/// Named network parameters plus the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
}

impl ModelWeights {
    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.params
            .get(name)
            .ok_or_else(|| NnError::MissingParameter(name.to_string()))
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }
}

/// Raw contents of a weights file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightsFile {
    pub tensors: BTreeMap<String, Tensor>,
    pub config: serde_json::Value,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    tensors: Vec<Entry>,
    config: serde_json::Value,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn write_weights<W: Write>(file: &WeightsFile, mut out: W) -> Result<(), NnError> {
    let mut offset = 0u64;
    let tensors = file
        .tensors
        .iter()
        .map(|(name, t)| {
            let e = Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 8 * t.len() as u64;
            e
        })
        .collect();
    let header = Header {
        dtype: "f64".into(),
        tensors,
        config: file.config.clone(),
        meta: file.meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| NnError::Format(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(offset as usize);
    for t in file.tensors.values() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_weights<R: Read>(mut input: R) -> Result<WeightsFile, NnError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| NnError::Format(e.to_string()))?;
    if header.dtype != "f64" {
        return Err(NnError::Format(format!("unsupported dtype {}", header.dtype)));
    }
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let mut tensors = BTreeMap::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * n;
        if end > data.len() {
            return Err(NnError::Format(format!("tensor {} runs past end of file", e.name)));
        }
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.insert(e.name, Tensor::new(e.shape, values));
    }
    Ok(WeightsFile {
        tensors,
        config: header.config,
        meta: header.meta,
    })
}

impl ModelWeights {
    pub fn to_file(&self, meta: serde_json::Value) -> WeightsFile {
        WeightsFile {
            tensors: self.params.clone(),
            config: serde_json::to_value(&self.config).expect("config serializes"),
            meta,
        }
    }

    /// Optimizer state stored alongside (`adam.*`) is dropped.
    pub fn from_file(file: WeightsFile) -> Result<Self, NnError> {
        let config: ModelConfig =
            serde_json::from_value(file.config).map_err(|e| NnError::Format(format!("config: {e}")))?;
        let params = file.tensors.into_iter().filter(|(k, _)| !k.starts_with("adam.")).collect();
        Ok(Self { config, params })
    }
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<(), NnError> {
    let f = std::fs::File::create(path)?;
    write_weights(&weights.to_file(serde_json::Value::Null), std::io::BufWriter::new(f))
}

pub fn load_weights(path: &Path) -> Result<ModelWeights, NnError> {
    let f = std::fs::File::open(path)?;
    ModelWeights::from_file(read_weights(std::io::BufReader::new(f))?)
}
