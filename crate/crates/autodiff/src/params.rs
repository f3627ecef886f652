//! Named parameter storage and the JSON checkpoint format.
//!
//! Checkpoint layout (version 1):
//!
//! ```json
//! {
//!   "format": "gtm-params",
//!   "version": 1,
//!   "params": { "<name>": { "shape": [rows, cols], "data": [f64, ...] } }
//! }
//! ```
//!
//! Parameters are written in name order and floats use the shortest
//! round-tripping decimal form, so identical parameters give identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "gtm-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Registers every parameter as a trainable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| (k.clone(), graph.param(t.clone())))
            .collect();
        BoundParams { vars }
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            params: self.params.clone(),
        };
        serde_json::to_writer(&mut w, &file)
            .map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_reader(r).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_slice(bytes).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        Self::from_file(file)
    }

    fn from_file(file: CheckpointFile) -> Result<Self> {
        if file.format != CHECKPOINT_FORMAT {
            return Err(TensorError::Checkpoint(format!(
                "unknown format {:?}",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(TensorError::Checkpoint(format!(
                "unsupported version {}",
                file.version
            )));
        }
        // Deserialization bypasses Tensor::new, so re-validate.
        let mut params = BTreeMap::new();
        for (name, t) in file.params {
            let checked = Tensor::new(t.shape().to_vec(), t.into_data())
                .map_err(|e| TensorError::Checkpoint(format!("{name}: {e}")))?;
            params.insert(name, checked);
        }
        Ok(ParamStore { params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_json(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_json(std::io::BufReader::new(f))
    }
}

/// Graph handles for a [`ParamStore`] bound into one forward pass.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Panics on an unknown name: parameter names are fixed at model build time.
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter {name:?} not bound"),
        }
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
