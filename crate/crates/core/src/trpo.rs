//! Generalized advantage estimation, a value baseline, and KL-constrained
//! natural-gradient policy steps.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agentnets::{PolicyNet, PolicyOutput, WindowBatch};
use crate::autodiff::{load_checkpoint, save_checkpoint, Activation, Adam, Bound, Matrix, Mlp, NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::types::Action;

/// Policy optimizer variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    Trpo,
    /// Ratio-clipped surrogate ascent with Adam.
    Clipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub max_kl: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub backtrack_steps: usize,
    pub damping: f64,
    /// Fisher products use every `fvp_stride`-th sample; 1 uses all.
    pub fvp_stride: usize,
    pub entropy_coef: f64,
    pub clip: f64,
    pub optimizer: Optimizer,
    /// Adam passes for the clipped optimizer.
    pub clipped_epochs: usize,
    pub clipped_lr: f64,
    pub value_hidden: Vec<usize>,
    pub value_lr: f64,
    pub value_epochs: usize,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            lambda: 0.98,
            max_kl: 0.01,
            cg_iters: 10,
            cg_tol: 1e-10,
            backtrack_steps: 10,
            damping: 0.1,
            fvp_stride: 1,
            entropy_coef: 0.001,
            clip: 0.2,
            optimizer: Optimizer::Trpo,
            clipped_epochs: 4,
            clipped_lr: 3e-4,
            value_hidden: vec![50, 50],
            value_lr: 1e-3,
            value_epochs: 5,
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("trpo.gamma", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("trpo.lambda", "must lie in [0, 1]"));
        }
        if !(self.max_kl > 0.0) {
            return Err(Error::config("trpo.max_kl", "must be positive"));
        }
        if self.damping < 0.0 || self.entropy_coef < 0.0 {
            return Err(Error::config("trpo.damping", "damping and entropy_coef must be non-negative"));
        }
        if self.fvp_stride == 0 {
            return Err(Error::config("trpo.fvp_stride", "must be at least 1"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::config("trpo.clip", "must be positive"));
        }
        Ok(())
    }
}

/// `δ_t = r_t + γV_{t+1} − V_t`, `A_t = Σ (γλ)^k δ_{t+k}`, returns `A + V`,
/// for one episode with terminal bootstrap value 0.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::OutOfRange {
            what: "values",
            detail: format!("{} values for {} rewards", values.len(), rewards.len()),
        });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Solves `A x = b` for symmetric positive-definite `A` given as a product.
pub fn conjugate_gradient(
    mut avp: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    iters: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let b_norm = dot(b, b).sqrt();
    let mut rr = dot(&r, &r);
    for _ in 0..iters {
        if rr.sqrt() <= tol * b_norm || rr == 0.0 {
            break;
        }
        let ap = avp(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            if pap.is_finite() {
                break;
            }
            return Err(Error::NonFinite("conjugate gradient curvature".into()));
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("conjugate gradient iterate".into()));
    }
    Ok(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `KL(p ‖ q)` for one categorical pair.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum::<f64>()
        .max(0.0)
}

/// Row-averaged categorical KL between two probability matrices.
pub fn mean_kl_probs(p: &Matrix, q: &Matrix) -> f64 {
    let n = p.rows().max(1);
    (0..p.rows()).map(|i| categorical_kl(p.row_slice(i), q.row_slice(i))).sum::<f64>() / n as f64
}

fn mean_entropy(p: &Matrix) -> f64 {
    let n = p.rows().max(1);
    let total: f64 = p.data().iter().filter(|&&x| x > 0.0).map(|x| -x * x.ln()).sum();
    total / n as f64
}

/// Mean `KL(π_old ‖ π_new)` over the buffer's samples.
pub fn mean_kl(old: &PolicyNet, new: &PolicyNet, buffer: &RolloutBuffer) -> Result<f64> {
    if buffer.is_empty() {
        return Ok(0.0);
    }
    let p = old.action_probs(&buffer.windows, &buffer.g)?;
    let q = new.action_probs(&buffer.windows, &buffer.g)?;
    Ok(mean_kl_probs(&p, &q))
}

/// State-value baseline on `concat(h_R, g)`.
#[derive(Clone, Debug)]
pub struct ValueNet {
    pub params: ParamStore,
    mlp: Mlp,
    adam: Adam,
    epochs: usize,
}

#[derive(Serialize, Deserialize)]
struct ValueDims {
    hidden: Vec<usize>,
    inputs: usize,
    lr: f64,
    epochs: usize,
}

impl ValueNet {
    pub fn new(encoding_width: usize, cfg: &TrpoConfig, rng: &mut impl Rng) -> Self {
        let mut params = ParamStore::new();
        let mut widths = vec![encoding_width + 1];
        widths.extend(&cfg.value_hidden);
        widths.push(1);
        let mlp = Mlp::new(&mut params, "value", &widths, Activation::Relu, rng);
        let adam = Adam::new(cfg.value_lr, params.numel());
        Self {
            params,
            mlp,
            adam,
            epochs: cfg.value_epochs,
        }
    }

    fn node(&self, tape: &mut Tape, bound: &crate::autodiff::Bound, h_r: &Matrix, g: &[f64]) -> Result<NodeId> {
        if g.len() != h_r.rows() {
            return Err(Error::OutOfRange {
                what: "g",
                detail: format!("{} values for {} encodings", g.len(), h_r.rows()),
            });
        }
        let h = tape.constant(h_r.clone());
        let gn = tape.constant(Matrix::column(g));
        let x = tape.concat(&[h, gn])?;
        Ok(self.mlp.forward(tape, bound, x)?)
    }

    pub fn predict(&self, h_r: &Matrix, g: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let v = self.node(&mut tape, &bound, h_r, g)?;
        let out = tape.value(v).data().to_vec();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("value estimates".into()));
        }
        Ok(out)
    }

    /// Full-batch Adam on the squared error to `returns`; gives the final loss.
    pub fn fit(&mut self, h_r: &Matrix, g: &[f64], returns: &[f64]) -> Result<f64> {
        let mut loss = 0.0;
        for _ in 0..self.epochs {
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape);
            let v = self.node(&mut tape, &bound, h_r, g)?;
            let target = tape.constant(Matrix::column(returns));
            let diff = tape.sub(v, target)?;
            let sq = tape.mul(diff, diff)?;
            let l = tape.mean(sq);
            loss = tape.scalar(l)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("value loss".into()));
            }
            let grads = tape.backward(l)?;
            let grad = self.params.gather_grad(&bound, &grads);
            self.adam.descend(&mut self.params, &grad);
        }
        Ok(loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dims = serde_json::json!({
            "spec": ValueDims {
                hidden: self.mlp.layers[..self.mlp.layers.len() - 1].iter().map(|l| l.outputs).collect(),
                inputs: self.mlp.layers[0].inputs,
                lr: self.adam.lr,
                epochs: self.epochs,
            },
            "adam": self.adam,
        });
        Ok(save_checkpoint(path, "value", dims, &self.params)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (network, dims, params) = load_checkpoint(path)?;
        if network != "value" {
            return Err(Error::config("network", format!("expected value checkpoint, found {network}")));
        }
        let bad = |e: serde_json::Error| Error::config("dims", e.to_string());
        let spec: ValueDims = serde_json::from_value(dims["spec"].clone()).map_err(bad)?;
        let adam: Adam = serde_json::from_value(dims["adam"].clone()).map_err(bad)?;
        let mlp = Mlp::find(&params, "value", spec.hidden.len() + 1, Activation::Relu)?;
        Ok(Self {
            params,
            mlp,
            adam,
            epochs: spec.epochs,
        })
    }
}

/// On-policy samples with per-episode boundaries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub windows: WindowBatch,
    pub g: Vec<f64>,
    pub actions: Vec<Action>,
    pub log_prob_old: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Normalized advantages, filled by [`RolloutBuffer::prepare`].
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Exclusive end index of every episode.
    pub episode_ends: Vec<usize>,
    /// `h_R` under the collecting policy.
    pub encodings: Option<Matrix>,
}

impl RolloutBuffer {
    pub fn new(window: usize, k: usize) -> Self {
        Self {
            windows: WindowBatch::new(window, k),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.episode_ends.len()
    }

    /// Appends one episode's samples.
    pub fn add_episode(
        &mut self,
        windows: &WindowBatch,
        g: &[f64],
        actions: &[Action],
        log_probs: &[f64],
        rewards: &[f64],
    ) -> Result<()> {
        let n = windows.n();
        if [g.len(), actions.len(), log_probs.len(), rewards.len()].iter().any(|&l| l != n) {
            return Err(Error::OutOfRange {
                what: "episode",
                detail: format!(
                    "{n} windows, {} g, {} actions, {} log-probs, {} rewards",
                    g.len(),
                    actions.len(),
                    log_probs.len(),
                    rewards.len()
                ),
            });
        }
        if (windows.len, windows.k) != (self.windows.len, self.windows.k) {
            return Err(Error::OutOfRange {
                what: "window shape",
                detail: format!("{:?} vs {:?}", (windows.len, windows.k), (self.windows.len, self.windows.k)),
            });
        }
        if n == 0 {
            return Ok(());
        }
        self.windows.extend_from(windows);
        self.g.extend_from_slice(g);
        self.actions.extend_from_slice(actions);
        self.log_prob_old.extend_from_slice(log_probs);
        self.rewards.extend_from_slice(rewards);
        self.episode_ends.push(self.actions.len());
        self.advantages.clear();
        self.returns.clear();
        self.values.clear();
        self.encodings = None;
        Ok(())
    }

    /// Appends every episode of `other`.
    pub fn append(&mut self, other: &RolloutBuffer) -> Result<()> {
        for r in other.episodes() {
            let idx: Vec<usize> = r.clone().collect();
            self.add_episode(
                &other.windows.select(&idx),
                &other.g[r.clone()],
                &other.actions[r.clone()],
                &other.log_prob_old[r.clone()],
                &other.rewards[r],
            )?;
        }
        Ok(())
    }

    fn episodes(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let starts = std::iter::once(0).chain(self.episode_ends.iter().copied());
        starts.zip(self.episode_ends.iter().copied()).map(|(a, b)| a..b)
    }

    /// Estimates values, runs GAE per episode, and normalizes advantages.
    pub fn prepare(&mut self, policy: &PolicyNet, value: &ValueNet, cfg: &TrpoConfig) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("rollout buffer"));
        }
        let h_r = policy.encode(&self.windows)?;
        self.values = value.predict(&h_r, &self.g)?;
        let mut adv = Vec::with_capacity(self.len());
        let mut ret = Vec::with_capacity(self.len());
        for range in self.episodes().collect::<Vec<_>>() {
            let (a, r) = compute_gae(&self.rewards[range.clone()], &self.values[range], cfg.gamma, cfg.lambda)?;
            adv.extend(a);
            ret.extend(r);
        }
        normalize(&mut adv);
        if adv.iter().chain(&ret).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("advantages".into()));
        }
        self.advantages = adv;
        self.returns = ret;
        self.encodings = Some(h_r);
        Ok(())
    }

    pub fn is_prepared(&self) -> bool {
        self.advantages.len() == self.len() && self.encodings.is_some()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.rewards.is_empty() {
            0.0
        } else {
            self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
        }
    }
}

/// Zero mean, unit variance.
pub fn normalize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    for v in x {
        *v = (*v - mean) / sd;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub kl: f64,
    pub entropy: f64,
    pub accepted: bool,
    /// Halvings applied before acceptance.
    pub backtracks: usize,
    pub value_loss: f64,
}

/// Surrogate `mean(exp(lp − lp_old)·A) + β·H` and its entropy part, from probabilities.
fn surrogate_value(p: &Matrix, buffer: &RolloutBuffer, entropy_coef: f64) -> (f64, f64) {
    let n = buffer.len() as f64;
    let gain: f64 = (0..buffer.len())
        .map(|i| {
            let lp = p.get(i, buffer.actions[i].0).ln();
            (lp - buffer.log_prob_old[i]).exp() * buffer.advantages[i]
        })
        .sum::<f64>()
        / n;
    let h = mean_entropy(p);
    (gain + entropy_coef * h, h)
}

/// Surrogate node with an optional per-sample mask on the ratio term.
fn surrogate_node(
    tape: &mut Tape,
    log_probs: NodeId,
    buffer: &RolloutBuffer,
    mask: Option<&[f64]>,
    entropy_coef: f64,
) -> Result<NodeId> {
    let acts: Vec<usize> = buffer.actions.iter().map(|a| a.0).collect();
    let picked = tape.gather(log_probs, &acts)?;
    let old = tape.constant(Matrix::column(&buffer.log_prob_old));
    let diff = tape.sub(picked, old)?;
    let ratio = tape.exp(diff);
    let weights: Vec<f64> = match mask {
        Some(m) => buffer.advantages.iter().zip(m).map(|(a, m)| a * m).collect(),
        None => buffer.advantages.clone(),
    };
    let w = tape.constant(Matrix::column(&weights));
    let gain = tape.mul(ratio, w)?;
    let gain = tape.mean(gain);
    let p = tape.exp(log_probs);
    let plp = tape.mul(p, log_probs)?;
    let neg_h = tape.row_sum(plp);
    let neg_h = tape.mean(neg_h);
    let ent = tape.scale(neg_h, -entropy_coef);
    Ok(tape.add(gain, ent)?)
}

/// One policy update on a prepared buffer, followed by the value fit.
pub fn trpo_step(policy: &mut PolicyNet, value: &mut ValueNet, buffer: &RolloutBuffer, cfg: &TrpoConfig) -> Result<StepReport> {
    if !buffer.is_prepared() {
        return Err(Error::config("buffer", "advantages must be computed before a policy step"));
    }
    if let Some(bad) = buffer.actions.iter().position(|a| a.0 >= policy.dims.n_actions) {
        return Err(Error::InvalidAction {
            agent: bad,
            action: buffer.actions[bad].0,
        });
    }
    let mut report = match cfg.optimizer {
        Optimizer::Trpo => natural_step(policy, buffer, cfg)?,
        Optimizer::Clipped => clipped_step(policy, buffer, cfg)?,
    };
    let h_r = buffer.encodings.as_ref().expect("checked by is_prepared");
    report.value_loss = value.fit(h_r, &buffer.g, &buffer.returns)?;
    Ok(report)
}

fn natural_step(policy: &mut PolicyNet, buffer: &RolloutBuffer, cfg: &TrpoConfig) -> Result<StepReport> {
    let mut tape = Tape::new();
    let bound = policy.params.bind(&mut tape);
    let out = policy.forward(&mut tape, &bound, &buffer.windows, &buffer.g)?;
    let surr = surrogate_node(&mut tape, out.log_probs, buffer, None, cfg.entropy_coef)?;
    let p_old = tape.value(out.log_probs).map(f64::exp);
    let (surr_before, entropy_before) = surrogate_value(&p_old, buffer, cfg.entropy_coef);
    if !surr_before.is_finite() || !tape.scalar(surr)?.is_finite() {
        return Err(Error::NonFinite("policy surrogate".into()));
    }
    let grads = tape.backward(surr)?;
    let grad = policy.params.gather_grad(&bound, &grads);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("policy gradient".into()));
    }
    let unchanged = StepReport {
        surrogate_before: surr_before,
        surrogate_after: surr_before,
        kl: 0.0,
        entropy: entropy_before,
        accepted: false,
        backtracks: 0,
        value_loss: 0.0,
    };
    if dot(&grad, &grad) == 0.0 {
        return Ok(unchanged);
    }
    // Fisher products on a strided subsample, on their own tape when strided.
    let sub: Option<(Tape, Bound, PolicyOutput, Matrix)> = if cfg.fvp_stride > 1 {
        let idx: Vec<usize> = (0..buffer.len()).step_by(cfg.fvp_stride).collect();
        let g: Vec<f64> = idx.iter().map(|&i| buffer.g[i]).collect();
        let mut t = Tape::new();
        let b = policy.params.bind(&mut t);
        let o = policy.forward(&mut t, &b, &buffer.windows.select(&idx), &g)?;
        let p = t.value(o.log_probs).map(f64::exp);
        Some((t, b, o, p))
    } else {
        None
    };
    let (f_tape, f_bound, f_logits, f_p) = match &sub {
        Some((t, b, o, p)) => (t, b, o.logits, p),
        None => (&tape, &bound, out.logits, &p_old),
    };
    let n = f_p.rows() as f64;
    let fvp = |v: &[f64]| -> Result<Vec<f64>> {
        let seeds = policy.params.tangent_seeds(f_bound, v);
        let tangents = f_tape.jvp(&seeds)?;
        let dz = tangents
            .get(f_logits)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(f_p.rows(), f_p.cols()));
        let mut u = Matrix::zeros(dz.rows(), dz.cols());
        for i in 0..dz.rows() {
            let p = f_p.row_slice(i);
            let d = dz.row_slice(i);
            let pd = dot(p, d);
            for (slot, (pj, dj)) in u.row_slice_mut(i).iter_mut().zip(p.iter().zip(d)) {
                *slot = pj * (dj - pd) / n;
            }
        }
        let back = f_tape.vjp(f_logits, u)?;
        let mut fv = policy.params.gather_grad(f_bound, &back);
        for (f, x) in fv.iter_mut().zip(v) {
            *f += cfg.damping * x;
        }
        Ok(fv)
    };
    let dir = conjugate_gradient(fvp, &grad, cfg.cg_iters, cfg.cg_tol)?;
    let shs = dot(&dir, &fvp(&dir)?);
    if !(shs > 0.0) {
        return Ok(unchanged);
    }
    let scale = (2.0 * cfg.max_kl / shs).sqrt();
    let theta = policy.params.flatten();
    let mut frac = 1.0;
    for backtracks in 0..=cfg.backtrack_steps {
        let candidate: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + frac * scale * d).collect();
        policy.params.unflatten(&candidate)?;
        let evaluated = policy.action_probs(&buffer.windows, &buffer.g);
        if let Ok(p_new) = evaluated {
            let (surr_after, entropy) = surrogate_value(&p_new, buffer, cfg.entropy_coef);
            let kl = mean_kl_probs(&p_old, &p_new);
            if surr_after.is_finite() && kl <= cfg.max_kl && surr_after > surr_before {
                return Ok(StepReport {
                    surrogate_before: surr_before,
                    surrogate_after: surr_after,
                    kl,
                    entropy,
                    accepted: true,
                    backtracks,
                    value_loss: 0.0,
                });
            }
        }
        frac *= 0.5;
    }
    policy.params.unflatten(&theta)?;
    Ok(unchanged)
}

fn clipped_step(policy: &mut PolicyNet, buffer: &RolloutBuffer, cfg: &TrpoConfig) -> Result<StepReport> {
    let p_old = policy.action_probs(&buffer.windows, &buffer.g)?;
    let (surr_before, _) = surrogate_value(&p_old, buffer, cfg.entropy_coef);
    if !surr_before.is_finite() {
        return Err(Error::NonFinite("policy surrogate".into()));
    }
    let theta = policy.params.flatten();
    let mut adam = Adam::new(cfg.clipped_lr, policy.params.numel());
    for _ in 0..cfg.clipped_epochs {
        let mut tape = Tape::new();
        let bound = policy.params.bind(&mut tape);
        let out = policy.forward(&mut tape, &bound, &buffer.windows, &buffer.g)?;
        // the clipped branch is constant in θ, so it contributes no gradient
        let lp = tape.value(out.log_probs);
        let mask: Vec<f64> = (0..buffer.len())
            .map(|i| {
                let r = (lp.get(i, buffer.actions[i].0) - buffer.log_prob_old[i]).exp();
                let a = buffer.advantages[i];
                let clipped = (a > 0.0 && r > 1.0 + cfg.clip) || (a < 0.0 && r < 1.0 - cfg.clip);
                if clipped {
                    0.0
                } else {
                    1.0
                }
            })
            .collect();
        let surr = surrogate_node(&mut tape, out.log_probs, buffer, Some(&mask), cfg.entropy_coef)?;
        if !tape.scalar(surr)?.is_finite() {
            policy.params.unflatten(&theta)?;
            return Err(Error::NonFinite("policy surrogate".into()));
        }
        let grads = tape.backward(surr)?;
        let grad = policy.params.gather_grad(&bound, &grads);
        adam.ascend(&mut policy.params, &grad);
    }
    let p_new = policy.action_probs(&buffer.windows, &buffer.g)?;
    let (surr_after, entropy) = surrogate_value(&p_new, buffer, cfg.entropy_coef);
    Ok(StepReport {
        surrogate_before: surr_before,
        surrogate_after: surr_after,
        kl: mean_kl_probs(&p_old, &p_new),
        entropy,
        accepted: true,
        backtracks: 0,
        value_loss: 0.0,
    })
}

#[cfg(test)]
mod tests;
