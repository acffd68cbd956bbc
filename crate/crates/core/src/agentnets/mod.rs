//! The policy `π(a | window; g)` and discriminator `D(window, a; g)`.
//!
//! Both networks embed each observation as `[W_e[loc] ; relu(o W_o + b_o)]`,
//! run an LSTM over the window, and feed the final hidden state `h_R`
//! (concatenated with `g`, and for the discriminator a one-hot action) to an
//! MLP head.

mod window;

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use window::WindowBatch;

use crate::autodiff::{
    load_checkpoint, save_checkpoint, Activation, Adam, Bound, Dense, Matrix, Mlp, NodeId, ParamStore, Tape,
};
use crate::dynamics::{beta_head, ConstraintDist};
use crate::error::{Error, Result};
use crate::types::{Action, AgentState, FeatureSchema};

/// Architecture hyperparameters shared by both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Location embedding width `m₁`.
    pub embed_dim: usize,
    /// Feature branch width `m₂`.
    pub feature_width: usize,
    pub recurrent_units: usize,
    pub head_hidden: Vec<usize>,
    /// Window length `L_in`.
    pub window: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            embed_dim: 50,
            feature_width: 50,
            recurrent_units: 10,
            head_hidden: vec![50, 50],
            window: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetDims {
    pub arch: ArchConfig,
    pub n_locations: usize,
    pub feature_dim: usize,
    pub n_actions: usize,
}

impl NetDims {
    pub fn new(schema: &FeatureSchema, arch: ArchConfig) -> Self {
        Self {
            arch,
            n_locations: schema.n_locations,
            feature_dim: schema.feature_dim(),
            n_actions: schema.n_actions,
        }
    }

    pub fn embedding_width(&self) -> usize {
        self.arch.embed_dim + self.arch.feature_width
    }

    pub fn empty_batch(&self) -> WindowBatch {
        WindowBatch::new(self.arch.window, self.feature_dim)
    }

    pub fn batch(&self, schema: &FeatureSchema, windows: &[&[AgentState]]) -> Result<WindowBatch> {
        let mut b = self.empty_batch();
        for w in windows {
            b.push(schema, w)?;
        }
        Ok(b)
    }
}

/// Embedding, feature branch, and LSTM.
#[derive(Clone, Debug, PartialEq)]
struct Trunk {
    embed: usize,
    feat: Dense,
    w_ih: usize,
    w_hh: usize,
    bias: usize,
    hidden: usize,
}

impl Trunk {
    fn new(store: &mut ParamStore, dims: &NetDims, rng: &mut impl Rng) -> Self {
        let a = &dims.arch;
        let embed = store.insert_uniform("trunk.embed", dims.n_locations, a.embed_dim, a.embed_dim, rng);
        let feat = Dense::new(store, "trunk.feat", dims.feature_dim, a.feature_width, rng);
        let h = a.recurrent_units;
        let m = dims.embedding_width();
        let w_ih = store.insert_uniform("trunk.lstm.w_ih", m, 4 * h, h, rng);
        let w_hh = store.insert_uniform("trunk.lstm.w_hh", h, 4 * h, h, rng);
        let bias = store.insert_uniform("trunk.lstm.b", 1, 4 * h, h, rng);
        Self {
            embed,
            feat,
            w_ih,
            w_hh,
            bias,
            hidden: h,
        }
    }

    fn find(store: &ParamStore, dims: &NetDims) -> Result<Self> {
        let slot = |name: &str| {
            store
                .slot(name)
                .ok_or_else(|| Error::config("params", format!("checkpoint lacks {name}")))
        };
        let t = Self {
            embed: slot("trunk.embed")?,
            feat: Dense::find(store, "trunk.feat")?,
            w_ih: slot("trunk.lstm.w_ih")?,
            w_hh: slot("trunk.lstm.w_hh")?,
            bias: slot("trunk.lstm.b")?,
            hidden: dims.arch.recurrent_units,
        };
        let h = t.hidden;
        let ok = store.get(t.embed).shape() == (dims.n_locations, dims.arch.embed_dim)
            && (t.feat.inputs, t.feat.outputs) == (dims.feature_dim, dims.arch.feature_width)
            && store.get(t.w_ih).shape() == (dims.embedding_width(), 4 * h)
            && store.get(t.w_hh).shape() == (h, 4 * h)
            && store.get(t.bias).shape() == (1, 4 * h);
        if !ok {
            return Err(Error::config("dims", "trunk tensors do not match the recorded dimensions"));
        }
        Ok(t)
    }

    fn embed_step(&self, tape: &mut Tape, bound: &Bound, locs: &[usize], feats: Matrix) -> Result<NodeId> {
        let e = tape.embedding(bound.id(self.embed), locs)?;
        let f = tape.constant(feats);
        let f = self.feat.forward(tape, bound, f, Activation::Relu)?;
        Ok(tape.concat(&[e, f])?)
    }

    fn encode(&self, tape: &mut Tape, bound: &Bound, batch: &WindowBatch) -> Result<NodeId> {
        let n = batch.n();
        if n == 0 {
            return Err(Error::Empty("window batch"));
        }
        let mut h = tape.constant(Matrix::zeros(n, self.hidden));
        let mut c = tape.constant(Matrix::zeros(n, self.hidden));
        for t in 0..batch.len {
            let feats = Matrix::from_vec(n, batch.k, batch.feats_at(t));
            let x = self.embed_step(tape, bound, &batch.locs_at(t), feats)?;
            (h, c) = tape.lstm_cell(x, h, c, bound.id(self.w_ih), bound.id(self.w_hh), bound.id(self.bias))?;
        }
        Ok(h)
    }
}

fn column_node(tape: &mut Tape, values: &[f64], n: usize, what: &'static str) -> Result<NodeId> {
    if values.len() != n {
        return Err(Error::OutOfRange {
            what,
            detail: format!("{} values for {n} samples", values.len()),
        });
    }
    Ok(tape.constant(Matrix::column(values)))
}

fn finite_probs(m: &Matrix, op: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op.into()))
    }
}

/// Nodes produced by one policy pass.
#[derive(Clone, Copy, Debug)]
pub struct PolicyOutput {
    pub h_r: NodeId,
    pub logits: NodeId,
    pub log_probs: NodeId,
}

#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub dims: NetDims,
    pub params: ParamStore,
    trunk: Trunk,
    head: Mlp,
    /// Beta head on `h_R` when the constraint model shares the trunk.
    beta_head: Option<Mlp>,
}

#[derive(Serialize, Deserialize)]
struct PolicyDims {
    dims: NetDims,
    joint: bool,
}

impl PolicyNet {
    pub fn new(dims: NetDims, joint: bool, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let trunk = Trunk::new(&mut params, &dims, rng);
        let mut widths = vec![dims.arch.recurrent_units + 1];
        widths.extend(&dims.arch.head_hidden);
        widths.push(dims.n_actions);
        let head = Mlp::new(&mut params, "head", &widths, Activation::Relu, rng);
        let beta_head = joint.then(|| {
            let h = dims.arch.recurrent_units;
            Mlp::new(&mut params, "beta_head", &[h, 50, 2], Activation::Relu, rng)
        });
        Self {
            dims,
            params,
            trunk,
            head,
            beta_head,
        }
    }

    pub fn is_joint(&self) -> bool {
        self.beta_head.is_some()
    }

    /// Zeroes the action head's output layer (uniform policy).
    pub fn zero_head(&mut self) {
        let out = *self.head.output();
        out.zero(&mut self.params);
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, batch: &WindowBatch, g: &[f64]) -> Result<PolicyOutput> {
        let h_r = self.trunk.encode(tape, bound, batch)?;
        self.forward_from(tape, bound, h_r, g)
    }

    /// `h_R` node for every window.
    pub fn encode_node(&self, tape: &mut Tape, bound: &Bound, batch: &WindowBatch) -> Result<NodeId> {
        self.trunk.encode(tape, bound, batch)
    }

    /// Action head on an existing encoding.
    pub fn forward_from(&self, tape: &mut Tape, bound: &Bound, h_r: NodeId, g: &[f64]) -> Result<PolicyOutput> {
        let n = tape.value(h_r).rows();
        let gn = column_node(tape, g, n, "g")?;
        let x = tape.concat(&[h_r, gn])?;
        let logits = self.head.forward(tape, bound, x)?;
        let log_probs = tape.log_softmax(logits);
        Ok(PolicyOutput { h_r, logits, log_probs })
    }

    /// `(α, β)` nodes from the shared-trunk Beta head.
    pub fn beta_node(&self, tape: &mut Tape, bound: &Bound, h_r: NodeId) -> Result<(NodeId, NodeId)> {
        let head = self.beta_head.as_ref().ok_or(Error::OutOfRange {
            what: "policy",
            detail: "network has no constraint head".into(),
        })?;
        let raw = head.forward(tape, bound, h_r)?;
        beta_head(tape, raw)
    }

    /// `h_R` for every window, `[n, recurrent_units]`.
    pub fn encode(&self, batch: &WindowBatch) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let h = self.trunk.encode(&mut tape, &bound, batch)?;
        Ok(tape.value(h).clone())
    }

    /// `p^A` per window, `[n, |A|]`.
    pub fn action_probs(&self, batch: &WindowBatch, g: &[f64]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &bound, batch, g)?;
        let p = tape.value(out.log_probs).map(f64::exp);
        finite_probs(&p, "policy logits")?;
        Ok(p)
    }

    /// `h_R` and, for a joint network, the shared-trunk constraint
    /// distribution, from a single pass.
    pub fn encode_with_constraint(&self, batch: &WindowBatch) -> Result<(Matrix, Option<Vec<ConstraintDist>>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let h_r = self.trunk.encode(&mut tape, &bound, batch)?;
        let dists = match self.beta_head {
            Some(_) => {
                let (a, b) = self.beta_node(&mut tape, &bound, h_r)?;
                let (a, b) = (tape.value(a), tape.value(b));
                Some(
                    (0..a.rows())
                        .map(|i| ConstraintDist::Beta {
                            alpha: a.get(i, 0),
                            beta: b.get(i, 0),
                        })
                        .collect(),
                )
            }
            None => None,
        };
        Ok((tape.value(h_r).clone(), dists))
    }

    /// Action head on precomputed encodings.
    pub fn probs_from_encoding(&self, h_r: &Matrix, g: &[f64]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let h = tape.constant(h_r.clone());
        let out = self.forward_from(&mut tape, &bound, h, g)?;
        let p = tape.value(out.log_probs).map(f64::exp);
        finite_probs(&p, "policy logits")?;
        Ok(p)
    }

    pub fn log_probs(&self, batch: &WindowBatch, g: &[f64], actions: &[Action]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &bound, batch, g)?;
        let lp = tape.value(out.log_probs);
        if actions.len() != lp.rows() {
            return Err(Error::OutOfRange {
                what: "actions",
                detail: format!("{} actions for {} windows", actions.len(), lp.rows()),
            });
        }
        actions
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if a.0 >= self.dims.n_actions {
                    return Err(Error::InvalidAction { agent: i, action: a.0 });
                }
                Ok(lp.get(i, a.0))
            })
            .collect()
    }

    /// `[W_e[loc] ; relu(o W_o + b_o)]` for one state.
    pub fn embed_observation(&self, schema: &FeatureSchema, s: &AgentState) -> Result<Vec<f64>> {
        if s.loc_id >= self.dims.n_locations {
            return Err(Error::UnknownLocation(s.loc_id));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let feats = Matrix::row(&schema.encode(s));
        let x = self.trunk.embed_step(&mut tape, &bound, &[s.loc_id], feats)?;
        Ok(tape.value(x).data().to_vec())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dims = serde_json::to_value(PolicyDims {
            dims: self.dims.clone(),
            joint: self.is_joint(),
        })
        .map_err(|e| Error::NonFinite(e.to_string()))?;
        Ok(save_checkpoint(path, "policy", dims, &self.params)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (network, dims, params) = load_checkpoint(path)?;
        if network != "policy" {
            return Err(Error::config("network", format!("expected policy checkpoint, found {network}")));
        }
        let PolicyDims { dims, joint } = serde_json::from_value(dims).map_err(|e| Error::config("dims", e.to_string()))?;
        let trunk = Trunk::find(&params, &dims)?;
        let head = Mlp::find(&params, "head", dims.arch.head_hidden.len() + 1, Activation::Relu)?;
        let beta_head = if joint {
            Some(Mlp::find(&params, "beta_head", 2, Activation::Relu)?)
        } else {
            None
        };
        if head.output().outputs != dims.n_actions {
            return Err(Error::config("dims", "policy head width differs from n_actions"));
        }
        Ok(Self {
            dims,
            params,
            trunk,
            head,
            beta_head,
        })
    }
}

/// Draws an action index from a categorical distribution.
pub fn sample_action(probs: &[f64], rng: &mut impl Rng) -> Result<Action> {
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("action probabilities".into()));
    }
    let dist = WeightedIndex::new(probs).map_err(|e| Error::NonFinite(format!("action probabilities: {e}")))?;
    Ok(Action(dist.sample(rng)))
}

/// Tuples `(window, a, g)` scored by the discriminator.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiscBatch {
    pub windows: WindowBatch,
    pub actions: Vec<Action>,
    pub g: Vec<f64>,
}

impl DiscBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            windows: self.windows.select(idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            g: idx.iter().map(|&i| self.g[i]).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorNet {
    pub dims: NetDims,
    pub params: ParamStore,
    trunk: Trunk,
    head: Mlp,
}

impl DiscriminatorNet {
    pub fn new(dims: NetDims, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let trunk = Trunk::new(&mut params, &dims, rng);
        let mut widths = vec![dims.arch.recurrent_units + dims.n_actions + 1];
        widths.extend(&dims.arch.head_hidden);
        widths.push(1);
        let head = Mlp::new(&mut params, "head", &widths, Activation::Relu, rng);
        Self {
            dims,
            params,
            trunk,
            head,
        }
    }

    pub fn zero_head(&mut self) {
        let out = *self.head.output();
        out.zero(&mut self.params);
    }

    /// Pre-sigmoid scores `[n, 1]`.
    pub fn logits_node(&self, tape: &mut Tape, bound: &Bound, batch: &DiscBatch) -> Result<NodeId> {
        let h_r = self.trunk.encode(tape, bound, &batch.windows)?;
        let n = tape.value(h_r).rows();
        if batch.actions.len() != n {
            return Err(Error::OutOfRange {
                what: "actions",
                detail: format!("{} actions for {n} windows", batch.actions.len()),
            });
        }
        let mut onehot = Matrix::zeros(n, self.dims.n_actions);
        for (i, a) in batch.actions.iter().enumerate() {
            if a.0 >= self.dims.n_actions {
                return Err(Error::InvalidAction { agent: i, action: a.0 });
            }
            onehot.set(i, a.0, 1.0);
        }
        let a = tape.constant(onehot);
        let g = column_node(tape, &batch.g, n, "g")?;
        let x = tape.concat(&[h_r, a, g])?;
        Ok(self.head.forward(tape, bound, x)?)
    }

    pub fn scores(&self, batch: &DiscBatch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let z = self.logits_node(&mut tape, &bound, batch)?;
        let d = tape.sigmoid(z);
        let d = tape.value(d);
        finite_probs(d, "discriminator logits")?;
        Ok(d.data().to_vec())
    }

    /// `E_expert[log D] + E_gen[log(1 − D)]`, via log-sigmoids for stability.
    pub fn loss_node(&self, tape: &mut Tape, bound: &Bound, expert: &DiscBatch, generated: &DiscBatch) -> Result<NodeId> {
        if expert.is_empty() || generated.is_empty() {
            return Err(Error::Empty("discriminator batch"));
        }
        let ze = self.logits_node(tape, bound, expert)?;
        let zg = self.logits_node(tape, bound, generated)?;
        // log σ(z) = −softplus(−z), log(1 − σ(z)) = −softplus(z)
        let neg = tape.scale(ze, -1.0);
        let sp_e = tape.softplus(neg);
        let sp_g = tape.softplus(zg);
        let me = tape.mean(sp_e);
        let mg = tape.mean(sp_g);
        let total = tape.add(me, mg)?;
        Ok(tape.scale(total, -1.0))
    }

    pub fn loss(&self, expert: &DiscBatch, generated: &DiscBatch) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let l = self.loss_node(&mut tape, &bound, expert, generated)?;
        Ok(tape.scalar(l)?)
    }

    /// One ascent step on the loss; returns its value before the step.
    pub fn update(&mut self, adam: &mut Adam, expert: &DiscBatch, generated: &DiscBatch) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let l = self.loss_node(&mut tape, &bound, expert, generated)?;
        let value = tape.scalar(l)?;
        let grads = tape.backward(l)?;
        let grad = self.params.gather_grad(&bound, &grads);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("discriminator loss".into()));
        }
        adam.ascend(&mut self.params, &grad);
        Ok(value)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dims = serde_json::to_value(&self.dims).map_err(|e| Error::NonFinite(e.to_string()))?;
        Ok(save_checkpoint(path, "discriminator", dims, &self.params)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (network, dims, params) = load_checkpoint(path)?;
        if network != "discriminator" {
            return Err(Error::config(
                "network",
                format!("expected discriminator checkpoint, found {network}"),
            ));
        }
        let dims: NetDims = serde_json::from_value(dims).map_err(|e| Error::config("dims", e.to_string()))?;
        let trunk = Trunk::find(&params, &dims)?;
        let head = Mlp::find(&params, "head", dims.arch.head_hidden.len() + 1, Activation::Relu)?;
        Ok(Self {
            dims,
            params,
            trunk,
            head,
        })
    }
}

#[cfg(test)]
mod tests;
