use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One named tensor with its shape header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major values.
    pub data: Vec<f64>,
}

/// Named groups of parameter tensors, stored as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub groups: BTreeMap<String, Vec<TensorRecord>>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<T: Scalar>(&mut self, group: &str, store: &ParamStore<T>) {
        let records = store
            .names()
            .iter()
            .zip(store.values())
            .map(|(name, v)| TensorRecord {
                name: name.clone(),
                shape: [v.nrows(), v.ncols()],
                data: v.iter().map(|x| x.to_f64()).collect(),
            })
            .collect();
        self.groups.insert(group.to_string(), records);
    }

    /// Overwrite `store` with the tensors of `group`; names and shapes must match.
    pub fn restore<T: Scalar>(&self, group: &str, store: &mut ParamStore<T>) -> Result<()> {
        let records = self
            .groups
            .get(group)
            .ok_or_else(|| Error::Checkpoint(format!("missing group `{group}`")))?;
        if records.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "group `{group}` has {} tensors, expected {}",
                records.len(),
                store.len()
            )));
        }
        let mut loaded = Vec::with_capacity(records.len());
        for (rec, (name, cur)) in records.iter().zip(store.names().iter().zip(store.values())) {
            if &rec.name != name || rec.shape != [cur.nrows(), cur.ncols()] {
                return Err(Error::Checkpoint(format!(
                    "`{group}`: found {} {:?}, expected {name} {:?}",
                    rec.name,
                    rec.shape,
                    cur.dim()
                )));
            }
            let arr = Array2::from_shape_vec((rec.shape[0], rec.shape[1]), rec.data.iter().map(|&x| T::of(x)).collect())
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", rec.name)))?;
            loaded.push(arr);
        }
        for (dst, src) in store.values_mut().iter_mut().zip(loaded) {
            *dst = src;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
