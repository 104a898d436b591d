use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix, NnError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameters and their accumulated gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter {name}");
        self.grads.push(Matrix::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `(-a, a)` with `a = sqrt(6 / (rows + cols))`.
    pub fn add_xavier(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
        self.add(name, Matrix::new(rows, cols, data))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Matrix::zeros(rows, cols))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Matrix) {
        self.grads[id.0].add_assign(g);
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// L2 norm over every gradient entry.
    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(|g| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    /// `(value, grad)` pairs in insertion order, for optimizers.
    pub(crate) fn pairs_mut(&mut self) -> impl Iterator<Item = (&mut Matrix, &Matrix)> {
        self.values.iter_mut().zip(self.grads.iter())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(n, v)| (n.clone(), Tensor { shape: [v.rows(), v.cols()], values: v.data().to_vec() }))
                .collect(),
        }
    }

    /// Overwrites every parameter from `ckpt`; names and shapes must match
    /// exactly.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<(), NnError> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        if ckpt.params.len() != self.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                ckpt.params.len(),
                self.len()
            )));
        }
        for i in 0..self.len() {
            let name = &self.names[i];
            let t = ckpt.params.get(name).ok_or_else(|| NnError::Checkpoint(format!("missing parameter {name}")))?;
            let want = [self.values[i].rows(), self.values[i].cols()];
            if t.shape != want || t.values.len() != want[0] * want[1] {
                return Err(NnError::Checkpoint(format!(
                    "parameter {name} has shape {:?}, model expects {:?}",
                    t.shape, want
                )));
            }
            self.values[i] = Matrix::new(want[0], want[1], t.values.clone());
        }
        self.zero_grad();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// On-disk parameter snapshot: name to shape and row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: BTreeMap<String, Tensor>,
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> std::io::Result<()> {
    let text = serde_json::to_string(&store.to_checkpoint()).map_err(std::io::Error::other)?;
    fs::write(path, text)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> std::io::Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(std::io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_bounds_and_determinism() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let ia = a.add_xavier("w", 10, 6, &mut ChaCha8Rng::seed_from_u64(3));
        b.add_xavier("w", 10, 6, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(a.value(ia).data().iter().all(|x| x.abs() < bound));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut s = ParamStore::new();
        s.add_xavier("a", 3, 4, &mut ChaCha8Rng::seed_from_u64(1));
        s.add("b", Matrix::row_vector(vec![0.1, 1.0 / 3.0]));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        save_checkpoint(&s, &p).unwrap();
        let mut t = ParamStore::new();
        t.add_zeros("a", 3, 4);
        t.add_zeros("b", 1, 2);
        t.load_checkpoint(&load_checkpoint(&p).unwrap()).unwrap();
        assert_eq!(s, t);

        let mut wrong = ParamStore::new();
        wrong.add_zeros("a", 4, 3);
        wrong.add_zeros("b", 1, 2);
        assert!(wrong.load_checkpoint(&s.to_checkpoint()).is_err());
    }
}
