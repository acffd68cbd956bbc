use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{Gradients, NodeId, Tape};
use super::AutodiffError;

pub const CHECKPOINT_FORMAT: &str = "movesd-params";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<(String, Matrix)>,
}

/// Leaf ids of a [`ParamStore`] placed on a tape, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn id(&self, slot: usize) -> NodeId {
        self.ids[slot]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor and returns its slot index.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.entries.push((name.into(), value));
        self.entries.len() - 1
    }

    /// Adds a `rows × cols` tensor drawn uniformly from `±1/√fan_in`.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> usize {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn get(&self, slot: usize) -> &Matrix {
        &self.entries[slot].1
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Matrix {
        &mut self.entries[slot].1
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for (_, m) in &self.entries {
            out.extend_from_slice(m.data());
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<(), AutodiffError> {
        if flat.len() != self.numel() {
            return Err(AutodiffError::Shape {
                op: "unflatten",
                detail: format!("{} values for {} parameters", flat.len(), self.numel()),
            });
        }
        let mut off = 0;
        for (_, m) in &mut self.entries {
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Places every tensor on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            ids: self.entries.iter().map(|(_, m)| tape.variable(m.clone())).collect(),
        }
    }

    /// Places every tensor on the tape as a constant (no gradients).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            ids: self.entries.iter().map(|(_, m)| tape.constant(m.clone())).collect(),
        }
    }

    /// Flat gradient in store order; parameters the output does not reach get zeros.
    pub fn gather_grad(&self, bound: &Bound, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for ((_, m), id) in self.entries.iter().zip(&bound.ids) {
            match grads.get(*id) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, m.len())),
            }
        }
        out
    }

    /// Splits a flat vector into per-leaf tangent seeds for [`Tape::jvp`].
    pub fn tangent_seeds(&self, bound: &Bound, flat: &[f64]) -> Vec<(NodeId, Matrix)> {
        let mut off = 0;
        self.entries
            .iter()
            .zip(&bound.ids)
            .map(|((_, m), id)| {
                let n = m.len();
                let t = Matrix::from_vec(m.rows(), m.cols(), flat[off..off + n].to_vec());
                off += n;
                (*id, t)
            })
            .collect()
    }

    /// Bitwise fingerprint of all values.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, m) in &self.entries {
            name.hash(&mut h);
            m.shape().hash(&mut h);
            for v in m.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, m)| m.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    network: String,
    dims: serde_json::Value,
    params: Vec<TensorRecord>,
}

/// Writes one network's parameters with a versioned header.
pub fn save_checkpoint(
    path: &Path,
    network: &str,
    dims: serde_json::Value,
    params: &ParamStore,
) -> Result<(), AutodiffError> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        network: network.to_string(),
        dims,
        params: params
            .entries
            .iter()
            .map(|(n, m)| TensorRecord {
                name: n.clone(),
                shape: [m.rows(), m.cols()],
                values: m.data().to_vec(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&file).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))
}

/// Reads a checkpoint, returning `(network, dims, params)`.
pub fn load_checkpoint(path: &Path) -> Result<(String, serde_json::Value, ParamStore), AutodiffError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    let mut store = ParamStore::new();
    for t in file.params {
        if t.values.len() != t.shape[0] * t.shape[1] {
            return Err(AutodiffError::Checkpoint(format!("tensor {} has wrong length", t.name)));
        }
        store.insert(t.name, Matrix::from_vec(t.shape[0], t.shape[1], t.values));
    }
    Ok((file.network, file.dims, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.insert_uniform("w", 3, 4, 3, &mut rng);
        store.insert_uniform("b", 1, 4, 3, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_checkpoint(&path, "toy", serde_json::json!({"in": 3}), &store).unwrap();
        let (name, dims, back) = load_checkpoint(&path).unwrap();
        assert_eq!(name, "toy");
        assert_eq!(dims["in"], 3);
        assert_eq!(back, store);
        assert_eq!(back.fingerprint(), store.fingerprint());
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::zeros(2, 2));
        assert!(store.unflatten(&[1.0; 3]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn flatten_unflatten_identity(values in proptest::collection::vec(-1e3f64..1e3, 10)) {
            let mut store = ParamStore::new();
            store.insert("a", Matrix::zeros(2, 3));
            store.insert("b", Matrix::zeros(4, 1));
            store.unflatten(&values).unwrap();
            proptest::prop_assert_eq!(store.flatten(), values);
            proptest::prop_assert_eq!(store.numel(), 10);
        }
    }
}
