//! Named parameter storage shared by every model component.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::graph::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Learning-rate group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Encoder,
    Task,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    groups: Vec<ParamGroup>,
    values: Vec<Mat>,
}

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    group: ParamGroup,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// How a fresh parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Glorot uniform over `fan_in + fan_out = rows + cols`.
    Xavier,
    /// Uniform in `[-a, a]`.
    Uniform(f64),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, shape: (usize, usize), init: Init, rng: &mut ChaCha8Rng) -> ParamId {
        let value = match init {
            Init::Zeros => Array2::zeros(shape),
            Init::Ones => Array2::ones(shape),
            Init::Constant(c) => Array2::from_elem(shape, c),
            Init::Xavier => {
                let a = (6.0 / (shape.0 + shape.1) as f64).sqrt();
                Array2::from_shape_simple_fn(shape, || rng.gen_range(-a..a))
            }
            Init::Uniform(a) => Array2::from_shape_simple_fn(shape, || rng.gen_range(-a..a)),
        };
        self.names.push(name.into());
        self.groups.push(group);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.groups[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let stored: Vec<StoredParam> = self
            .ids()
            .map(|id| {
                let v = self.value(id);
                StoredParam {
                    name: self.name(id).to_owned(),
                    group: self.group(id),
                    rows: v.nrows(),
                    cols: v.ncols(),
                    data: v.iter().copied().collect(),
                }
            })
            .collect();
        serde_json::to_value(stored).expect("parameters serialise")
    }

    /// Overwrites values from a serialised store. Names and shapes must match
    /// the parameters already registered here, in order.
    pub fn load_json(&mut self, value: serde_json::Value) -> Result<()> {
        let stored: Vec<StoredParam> = serde_json::from_value(value)?;
        if stored.len() != self.len() {
            return Err(Error::Checkpoint(format!("parameter count mismatch: checkpoint has {}, model has {}", stored.len(), self.len())));
        }
        for (id, p) in self.ids().collect::<Vec<_>>().into_iter().zip(stored) {
            let cur = &self.values[id.0];
            if p.name != self.names[id.0] || (p.rows, p.cols) != cur.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} ({}x{}) does not match model parameter {} {:?}",
                    p.name,
                    p.rows,
                    p.cols,
                    self.names[id.0],
                    cur.dim()
                )));
            }
            self.values[id.0] = Array2::from_shape_vec((p.rows, p.cols), p.data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(())
    }
}
