//! Fixed-length feature vectors for images and attribute words.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::csv_io::read_feature_file;
use crate::error::{Error, Result};

/// A deterministic map from raw input bytes (an image, or an attribute
/// string) to a vector of exactly `dim()` values.
pub trait FeatureProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn features(&self, input: &[u8]) -> Result<Vec<f64>>;
}

/// Embedding-free fallback: SHA-256 of the seed and input seeds a ChaCha
/// stream of uniform values in [-1, 1].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashProvider {
    name: String,
    dim: usize,
    seed: u64,
}

impl HashProvider {
    pub fn new(name: impl Into<String>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        Ok(HashProvider {
            name: name.into(),
            dim,
            seed,
        })
    }
}

impl FeatureProvider for HashProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, input: &[u8]) -> Result<Vec<f64>> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(input);
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        Ok((0..self.dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
    }
}

/// Precomputed vectors keyed by the UTF-8 input string.
#[derive(Debug, Clone, PartialEq)]
pub struct TableProvider {
    name: String,
    dim: usize,
    table: BTreeMap<String, Vec<f64>>,
}

impl TableProvider {
    pub fn new(name: impl Into<String>, table: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let dim = table
            .values()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::Config("empty feature table".into()))?;
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if let Some((k, v)) = table.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::DimMismatch {
                what: format!("feature vector for {k:?}"),
                expected: dim,
                actual: v.len(),
            });
        }
        Ok(TableProvider {
            name: name.into(),
            dim,
            table,
        })
    }

    /// Loads every `<key>.bin` file in `dir`.
    pub fn load_dir(name: impl Into<String>, dir: &Path) -> Result<Self> {
        let mut table = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("bin") {
                continue;
            }
            let Some(key) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            table.insert(key.to_string(), read_feature_file(&path)?);
        }
        Self::new(name, table)
    }
}

impl FeatureProvider for TableProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, input: &[u8]) -> Result<Vec<f64>> {
        let key = String::from_utf8_lossy(input);
        self.table
            .get(key.as_ref())
            .cloned()
            .ok_or_else(|| Error::Validation(format!("no {} features for {key:?}", self.name)))
    }
}
