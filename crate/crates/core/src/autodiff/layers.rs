use rand::Rng;

use super::params::{Bound, ParamStore};
use super::tape::{NodeId, Tape};
use super::{AutodiffError, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

/// Affine layer `x W + b` stored as two slots of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let weight = store.insert_uniform(format!("{name}.w"), inputs, outputs, inputs, rng);
        let bias = store.insert_uniform(format!("{name}.b"), 1, outputs, inputs, rng);
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    /// Looks up an existing layer by name, checking its shape.
    pub fn find(store: &ParamStore, name: &str) -> Result<Self, AutodiffError> {
        let missing = || AutodiffError::Checkpoint(format!("missing tensor {name}"));
        let weight = store.slot(&format!("{name}.w")).ok_or_else(missing)?;
        let bias = store.slot(&format!("{name}.b")).ok_or_else(missing)?;
        let (inputs, outputs) = store.get(weight).shape();
        if store.get(bias).shape() != (1, outputs) {
            return Err(AutodiffError::Checkpoint(format!("tensor {name}.b has the wrong shape")));
        }
        Ok(Self {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    pub fn zero(&self, store: &mut ParamStore) {
        *store.get_mut(self.weight) = Matrix::zeros(self.inputs, self.outputs);
        *store.get_mut(self.bias) = Matrix::zeros(1, self.outputs);
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: NodeId, act: Activation) -> Result<NodeId, AutodiffError> {
        let h = tape.matmul(x, bound.id(self.weight))?;
        let h = tape.add_row(h, bound.id(self.bias))?;
        Ok(match act {
            Activation::Identity => h,
            Activation::Relu => tape.relu(h),
            Activation::Tanh => tape.tanh(h),
        })
    }
}

/// Stack of dense layers with a shared hidden activation and a linear output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden_activation: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        hidden_activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self {
            layers,
            hidden_activation,
        }
    }

    pub fn find(store: &ParamStore, name: &str, depth: usize, hidden_activation: Activation) -> Result<Self, AutodiffError> {
        let layers = (0..depth)
            .map(|i| Dense::find(store, &format!("{name}.{i}")))
            .collect::<Result<Vec<_>, _>>()?;
        if layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return Err(AutodiffError::Checkpoint(format!("layers of {name} do not chain")));
        }
        Ok(Self {
            layers,
            hidden_activation,
        })
    }

    pub fn output(&self) -> &Dense {
        self.layers.last().expect("an MLP has at least one layer")
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: NodeId) -> Result<NodeId, AutodiffError> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let act = if i == last { Activation::Identity } else { self.hidden_activation };
            h = layer.forward(tape, bound, h, act)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 5, 4, 2], Activation::Tanh, &mut rng);
        let x = Matrix::from_vec(2, 3, vec![0.1, -0.4, 0.7, 1.2, 0.3, -0.9]);
        let err = grad_check(&store, 1e-6, |tape, bound| {
            let xi = tape.constant(x.clone());
            let y = mlp.forward(tape, bound, xi)?;
            let y = tape.tanh(y);
            Ok(tape.sum(y))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
        let found = Mlp::find(&store, "m", 3, Activation::Tanh).unwrap();
        assert_eq!(found, mlp);
        assert!(Mlp::find(&store, "m", 4, Activation::Tanh).is_err());
    }
}
