//! Adversarial imitation with constraint-conditioned policies.
//!
//! Each iteration rolls the policy out in the simulator with constraints
//! drawn from the dynamics model, scores the samples with the
//! discriminator, blends in the judger reward, takes policy steps, and
//! then updates the discriminator on expert versus generated tuples.

mod rollout;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use rollout::{
    assign_rewards, collect_rollouts, constraint_input, generate, simulate, stay_entry, Constraints, GSampling, RewardTuple,
    Rollout,
};

use crate::agentnets::{ArchConfig, DiscBatch, DiscriminatorNet, NetDims, PolicyNet, WindowBatch};
use crate::autodiff::{Adam, Tape};
use crate::dynamics::{
    beta_log_likelihood, build_dynamics_dataset, pretrain_dynamics, stays, ConstraintDist, DynamicsModel, PretrainConfig,
    PretrainReport,
    DYNAMICS_INPUTS,
};
use crate::envsim::{Env, EnvConfig, GridParkConfig};
use crate::error::{Error, Result};
use crate::rewards::RewardConfig;
use crate::trpo::{trpo_step, RolloutBuffer, StepReport, TrpoConfig, ValueNet};
use crate::types::{rescale_duration, Action, AgentState, FeatureSchema, Trajectory};

/// How the dynamics model is trained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TrainOption {
    /// Pretrained on demonstrations, then frozen.
    #[default]
    Pretrained,
    /// Updated every iteration on generated stays.
    Iterative,
    /// A Beta head on the policy trunk, trained alongside the policy.
    Joint,
}

impl TryFrom<u8> for TrainOption {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(TrainOption::Pretrained),
            2 => Ok(TrainOption::Iterative),
            3 => Ok(TrainOption::Joint),
            _ => Err(format!("option must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<TrainOption> for u8 {
    fn from(o: TrainOption) -> u8 {
        match o {
            TrainOption::Pretrained => 1,
            TrainOption::Iterative => 2,
            TrainOption::Joint => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub option: TrainOption,
    pub iterations: usize,
    /// Discriminator steps per iteration.
    pub d_updates: usize,
    /// Rollout-then-policy-step cycles per iteration.
    pub pi_updates: usize,
    /// Samples per side in each discriminator step.
    pub batch: usize,
    /// Learning rate of the discriminator, dynamics, and joint Beta head.
    pub lr: f64,
    /// Steps per rollout episode; 0 runs the full episode.
    pub rollout_steps: usize,
    /// Rollout episodes collected for each policy step.
    pub episodes_per_update: usize,
    /// Threads used for rollout collection.
    pub workers: usize,
    pub g_sampling: GSampling,
    /// Weight of the Beta likelihood in joint training.
    pub joint_weight: f64,
    /// Dynamics epochs per iteration under iterative training.
    pub dynamics_epochs: usize,
    pub env: EnvConfig,
    pub reward: RewardConfig,
    pub trpo: TrpoConfig,
    pub arch: ArchConfig,
    pub pretrain: PretrainConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            option: TrainOption::Pretrained,
            iterations: 100,
            d_updates: 5,
            pi_updates: 100,
            batch: 128,
            lr: 3e-4,
            rollout_steps: 0,
            episodes_per_update: 1,
            workers: 1,
            g_sampling: GSampling::PerStay,
            joint_weight: 1.0,
            dynamics_epochs: 1,
            env: EnvConfig::GridPark(GridParkConfig::smoke()),
            reward: RewardConfig::default(),
            trpo: TrpoConfig::default(),
            arch: ArchConfig::default(),
            pretrain: PretrainConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.reward.validate()?;
        self.trpo.validate()?;
        for (key, v) in [
            ("d_updates", self.d_updates),
            ("pi_updates", self.pi_updates),
            ("batch", self.batch),
            ("episodes_per_update", self.episodes_per_update),
            ("workers", self.workers),
            ("arch.window", self.arch.window),
            ("arch.recurrent_units", self.arch.recurrent_units),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.joint_weight >= 0.0) {
            return Err(Error::config("joint_weight", "must be non-negative"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(toml_key(&e), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn schema(&self) -> FeatureSchema {
        self.env.schema()
    }

    pub fn dims(&self) -> NetDims {
        NetDims::new(&self.schema(), self.arch.clone())
    }

    fn rollout_len(&self) -> usize {
        match self.rollout_steps {
            0 => self.env.max_steps(),
            n => n.min(self.env.max_steps()),
        }
    }
}

/// Best-effort name of the key a TOML error points at.
pub(crate) fn toml_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(key) = rest.split('`').next() {
                return key.to_string();
            }
        }
    }
    "config".into()
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Mean discriminator objective over the iteration's updates.
    pub d_loss: f64,
    pub mean_reward: f64,
    pub mean_r_judger: f64,
    pub mean_r_disc: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub entropy: f64,
    pub value_loss: f64,
    pub pi_updates: usize,
    pub accepted_steps: usize,
    pub d_updates: usize,
    /// Largest mean KL among accepted steps.
    pub max_accepted_kl: f64,
    /// Smallest surrogate gain among accepted steps.
    pub min_accepted_gain: Option<f64>,
    /// Fingerprint of the separate dynamics model, hex.
    pub dynamics_fingerprint: Option<String>,
    /// Likelihood of the constraint model on this iteration's generated stays.
    pub dynamics_objective: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub policy: PolicyNet,
    pub discriminator: DiscriminatorNet,
    /// The separate dynamics model; absent under joint training.
    pub dynamics: Option<DynamicsModel>,
    pub value: ValueNet,
    pub log: Vec<IterationLog>,
    pub step_reports: Vec<StepReport>,
}

impl TrainOutput {
    pub fn constraints(&self) -> Constraints<'_> {
        match &self.dynamics {
            Some(m) => Constraints::Model(m),
            None => Constraints::Joint,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory for the log and checkpoints.
    pub out_dir: Option<PathBuf>,
    /// Continue from the checkpoint in `out_dir`.
    pub resume: bool,
    /// Dynamics model to use instead of pretraining one.
    pub pretrained: Option<DynamicsModel>,
}

/// Expert `(window, a)` tuples with their stays.
#[derive(Clone, Debug)]
pub struct ExpertSet {
    pub windows: WindowBatch,
    pub actions: Vec<Action>,
    /// Per record, the index of its stay.
    stay_of: Vec<usize>,
    /// Per record, its own `o_g`.
    record_inputs: Vec<[f64; DYNAMICS_INPUTS]>,
    /// Per stay, `o_g` at entry.
    stay_inputs: Vec<[f64; DYNAMICS_INPUTS]>,
    /// Per stay, the record index of its entry.
    stay_records: Vec<usize>,
}

impl ExpertSet {
    pub fn new(schema: &FeatureSchema, dims: &NetDims, demos: &[Trajectory]) -> Result<Self> {
        let mut set = Self {
            windows: dims.empty_batch(),
            actions: Vec::new(),
            stay_of: Vec::new(),
            record_inputs: Vec::new(),
            stay_inputs: Vec::new(),
            stay_records: Vec::new(),
        };
        let len = dims.arch.window;
        for t in demos {
            let base = set.actions.len();
            let states: Vec<AgentState> = t.records.iter().map(|r| r.state.clone()).collect();
            for (i, r) in t.records.iter().enumerate() {
                if r.action.0 >= dims.n_actions {
                    return Err(Error::InvalidAction {
                        agent: t.agent_id,
                        action: r.action.0,
                    });
                }
                set.windows.push(schema, &states[(i + 1).saturating_sub(len)..=i])?;
                set.actions.push(r.action);
                set.record_inputs
                    .push(schema.dynamics_input(r.state.loc_id, r.state.clock, r.state.population));
            }
            for s in stays(t) {
                let entry = &t.records[s.start].state;
                let id = set.stay_inputs.len();
                set.stay_inputs
                    .push(schema.dynamics_input(entry.loc_id, entry.clock, entry.population));
                set.stay_records.push(base + s.start);
                set.stay_of.extend(std::iter::repeat_n(id, s.len));
            }
        }
        if set.actions.is_empty() {
            return Err(Error::Empty("demonstrations"));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Draws `g` for every record from the current constraint model.
    pub fn sample_g(
        &self,
        policy: &PolicyNet,
        constraints: Constraints<'_>,
        mode: GSampling,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        let dists: Vec<ConstraintDist> = match (constraints, mode) {
            (Constraints::Model(m), GSampling::PerStay) => m.predict_batch(&self.stay_inputs)?,
            (Constraints::Model(m), GSampling::PerStep) => m.predict_batch(&self.record_inputs)?,
            (Constraints::Joint, GSampling::PerStay) => joint_dists(policy, &self.windows.select(&self.stay_records))?,
            (Constraints::Joint, GSampling::PerStep) => joint_dists(policy, &self.windows)?,
        };
        let draws: Vec<f64> = dists.iter().map(|d| d.sample(rng)).collect::<Result<_>>()?;
        Ok(match mode {
            GSampling::PerStay => self.stay_of.iter().map(|&s| draws[s]).collect(),
            GSampling::PerStep => draws,
        })
    }
}

fn joint_dists(policy: &PolicyNet, windows: &WindowBatch) -> Result<Vec<ConstraintDist>> {
    let (_, d) = policy.encode_with_constraint(windows)?;
    d.ok_or(Error::OutOfRange {
        what: "policy",
        detail: "network has no constraint head".into(),
    })
}

/// Independent stream for iteration `i`, so resumed runs match fresh ones.
fn iteration_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(i as u64 + 1);
    r
}

/// Everything mutable carried across iterations.
struct TrainState {
    policy: PolicyNet,
    disc: DiscriminatorNet,
    dynamics: Option<DynamicsModel>,
    value: ValueNet,
    d_adam: Adam,
    dyn_adam: Option<Adam>,
    joint_adam: Option<Adam>,
    log: Vec<IterationLog>,
    step_reports: Vec<StepReport>,
}

#[derive(Serialize, Deserialize)]
struct SavedState {
    completed: usize,
    log: Vec<IterationLog>,
    step_reports: Vec<StepReport>,
    d_adam: Adam,
    dyn_adam: Option<Adam>,
    joint_adam: Option<Adam>,
}

const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOG_FILE: &str = "train_log.jsonl";

impl TrainState {
    fn init(cfg: &TrainConfig, demos: &[Trajectory], pretrained: Option<DynamicsModel>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dims = cfg.dims();
        let joint = cfg.option == TrainOption::Joint;
        let policy = PolicyNet::new(dims.clone(), joint, &mut rng);
        let disc = DiscriminatorNet::new(dims, &mut rng);
        let value = ValueNet::new(cfg.arch.recurrent_units, &cfg.trpo, &mut rng);
        let dynamics = match cfg.option {
            TrainOption::Pretrained => Some(match pretrained {
                Some(m) => m,
                None => pretrain_for(cfg, demos)?.0,
            }),
            TrainOption::Iterative => Some(DynamicsModel::new(cfg.pretrain.mode, &cfg.pretrain.hidden, &mut rng)),
            TrainOption::Joint => None,
        };
        let dyn_adam = (cfg.option == TrainOption::Iterative)
            .then(|| Adam::new(cfg.lr, dynamics.as_ref().map_or(0, |m| m.params.numel())));
        let joint_adam = joint.then(|| Adam::new(cfg.lr, policy.params.numel()));
        Ok(Self {
            d_adam: Adam::new(cfg.lr, disc.params.numel()),
            policy,
            disc,
            dynamics,
            value,
            dyn_adam,
            joint_adam,
            log: Vec::new(),
            step_reports: Vec::new(),
        })
    }

    fn constraints(&self) -> Constraints<'_> {
        match &self.dynamics {
            Some(m) => Constraints::Model(m),
            None => Constraints::Joint,
        }
    }

    fn save(&self, dir: &Path, cfg: &TrainConfig) -> Result<()> {
        let tmp = dir.join(format!("{CHECKPOINT_DIR}.tmp"));
        let _ = fs::remove_dir_all(&tmp);
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        self.policy.save(&tmp.join("policy.json"))?;
        self.disc.save(&tmp.join("discriminator.json"))?;
        self.value.save(&tmp.join("value.json"))?;
        if let Some(m) = &self.dynamics {
            m.save(&tmp.join("dynamics.json"))?;
        }
        write_file(&tmp.join("config.toml"), cfg.to_toml_string()?.as_bytes())?;
        let state = SavedState {
            completed: self.log.len(),
            log: self.log.clone(),
            step_reports: self.step_reports.clone(),
            d_adam: self.d_adam.clone(),
            dyn_adam: self.dyn_adam.clone(),
            joint_adam: self.joint_adam.clone(),
        };
        let json = serde_json::to_vec(&state).map_err(|e| Error::NonFinite(e.to_string()))?;
        write_file(&tmp.join("state.json"), &json)?;
        let dst = dir.join(CHECKPOINT_DIR);
        let _ = fs::remove_dir_all(&dst);
        fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
        let mut log = Vec::new();
        for entry in &self.log {
            serde_json::to_writer(&mut log, entry).map_err(|e| Error::NonFinite(e.to_string()))?;
            log.push(b'\n');
        }
        write_file(&dir.join(LOG_FILE), &log)
    }

    fn load(dir: &Path, cfg: &TrainConfig) -> Result<Self> {
        let ck = dir.join(CHECKPOINT_DIR);
        let saved = TrainConfig::load(&ck.join("config.toml"))?;
        let scrub = |c: TrainConfig| TrainConfig {
            iterations: 0,
            workers: 1,
            ..c
        };
        if scrub(saved) != scrub(cfg.clone()) {
            return Err(Error::config("resume", "checkpoint was written with a different configuration"));
        }
        let path = ck.join("state.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let state: SavedState = serde_json::from_slice(&bytes).map_err(|e| Error::config("state", e.to_string()))?;
        let dyn_path = ck.join("dynamics.json");
        let dynamics = if cfg.option == TrainOption::Joint {
            None
        } else {
            Some(DynamicsModel::load(&dyn_path)?)
        };
        if state.completed != state.log.len() {
            return Err(Error::config("state", "log length differs from completed iterations"));
        }
        Ok(Self {
            policy: PolicyNet::load(&ck.join("policy.json"))?,
            disc: DiscriminatorNet::load(&ck.join("discriminator.json"))?,
            value: ValueNet::load(&ck.join("value.json"))?,
            dynamics,
            d_adam: state.d_adam,
            dyn_adam: state.dyn_adam,
            joint_adam: state.joint_adam,
            log: state.log,
            step_reports: state.step_reports,
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Per-stay Beta-likelihood examples from generated rollouts: windows at
/// stay entry and the realized stay lengths.
fn joint_examples(rollouts: &[Rollout], max_steps: usize) -> Result<(WindowBatch, Vec<f64>)> {
    let mut windows: Option<WindowBatch> = None;
    let mut labels = Vec::new();
    for r in rollouts {
        for (t, w) in r.trajectories.iter().zip(&r.windows) {
            let out = windows.get_or_insert_with(|| WindowBatch::new(w.len, w.k));
            for s in stays(t) {
                out.extend_from(&w.select(&[s.start]));
                labels.push(rescale_duration(s.len.min(max_steps), max_steps)?);
            }
        }
    }
    Ok((windows.unwrap_or_default(), labels))
}

/// Mean Beta log-likelihood of the policy's constraint head, and its gradient.
fn joint_objective(policy: &PolicyNet, windows: &WindowBatch, labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let bound = policy.params.bind(&mut tape);
    let h = policy.encode_node(&mut tape, &bound, windows)?;
    let (a, b) = policy.beta_node(&mut tape, &bound, h)?;
    let ll = beta_log_likelihood(&mut tape, a, b, labels)?;
    let m = tape.mean(ll);
    let value = tape.scalar(m)?;
    let grads = tape.backward(m)?;
    Ok((value, policy.params.gather_grad(&bound, &grads)))
}

fn run_rollouts(cfg: &TrainConfig, env: &Arc<EnvConfig>, state: &TrainState, rng: &mut ChaCha8Rng) -> Result<Vec<Rollout>> {
    let seeds: Vec<(u64, u64)> = (0..cfg.episodes_per_update).map(|_| (rng.random(), rng.random())).collect();
    let steps = cfg.rollout_len();
    let one = |&(env_seed, r_seed): &(u64, u64)| -> Result<Rollout> {
        let mut e = Env::reset_with_seed(Arc::clone(env), env_seed)?;
        let mut r = ChaCha8Rng::seed_from_u64(r_seed);
        collect_rollouts(&mut e, &state.policy, state.constraints(), steps, cfg.g_sampling, &mut r)
    };
    if cfg.workers <= 1 || seeds.len() <= 1 {
        return seeds.iter().map(one).collect();
    }
    let chunk = seeds.len().div_ceil(cfg.workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(one).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(seeds.len());
        for h in handles {
            out.extend(h.join().expect("rollout worker panicked")?);
        }
        Ok(out)
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Rewards and buffer for one policy step.
fn score_rollouts(cfg: &TrainConfig, state: &TrainState, rollouts: &[Rollout]) -> Result<(RolloutBuffer, Vec<RewardTuple>)> {
    let schema = cfg.schema();
    let mut buffer = RolloutBuffer::new(cfg.arch.window, schema.feature_dim());
    let mut tuples = Vec::new();
    for r in rollouts {
        let (b, t) = assign_rewards(r, &state.disc, &cfg.reward, &schema)?;
        buffer.append(&b)?;
        tuples.extend(t);
    }
    Ok((buffer, tuples))
}

fn iterate(cfg: &TrainConfig, env: &Arc<EnvConfig>, expert: &ExpertSet, state: &mut TrainState, i: usize) -> Result<()> {
    let mut rng = iteration_rng(cfg.seed, i);
    let schema = cfg.schema();
    let mut generated = DiscBatch {
        windows: cfg.dims().empty_batch(),
        ..Default::default()
    };
    let mut gen_trajs = Vec::new();
    let mut rewards = (Vec::new(), Vec::new(), Vec::new());
    let mut reports = Vec::with_capacity(cfg.pi_updates);
    let mut joint_ll = Vec::new();
    for _ in 0..cfg.pi_updates {
        let rollouts = run_rollouts(cfg, env, state, &mut rng)?;
        let (mut buffer, tuples) = score_rollouts(cfg, state, &rollouts)?;
        if buffer.is_empty() {
            return Err(Error::Empty("rollout"));
        }
        for t in &tuples {
            rewards.0.push(t.reward);
            rewards.1.push(t.r_judger);
            rewards.2.push(t.r_disc);
        }
        buffer.prepare(&state.policy, &state.value, &cfg.trpo)?;
        let report = trpo_step(&mut state.policy, &mut state.value, &buffer, &cfg.trpo)?;
        if report.accepted && report.kl > cfg.trpo.max_kl {
            return Err(Error::NonFinite(format!("accepted step with KL {} above the trust region", report.kl)));
        }
        reports.push(report);
        if let Some(adam) = state.joint_adam.as_mut() {
            let (w, labels) = joint_examples(&rollouts, schema.max_steps)?;
            if !labels.is_empty() {
                let (ll, mut grad) = joint_objective(&state.policy, &w, &labels)?;
                if !ll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite("joint constraint likelihood".into()));
                }
                grad.iter_mut().for_each(|g| *g *= cfg.joint_weight);
                adam.ascend(&mut state.policy.params, &grad);
                joint_ll.push(ll);
            }
        }
        for r in &rollouts {
            let b = r.disc_batch();
            generated.windows.extend_from(&b.windows);
            generated.actions.extend(b.actions);
            generated.g.extend(b.g);
            gen_trajs.extend(r.trajectories.iter().cloned());
        }
    }
    let mut dynamics_objective = (!joint_ll.is_empty()).then(|| mean(&joint_ll));
    if let (Some(m), Some(adam)) = (state.dynamics.as_mut(), state.dyn_adam.as_mut()) {
        let examples = build_dynamics_dataset(&schema, &gen_trajs)?;
        if !examples.is_empty() {
            let h = m.fit_epochs(&examples, cfg.dynamics_epochs, cfg.batch, adam, &mut rng)?;
            dynamics_objective = h.last().copied();
        }
    } else if let (Some(m), TrainOption::Pretrained) = (&state.dynamics, cfg.option) {
        let examples = build_dynamics_dataset(&schema, &gen_trajs)?;
        if !examples.is_empty() {
            dynamics_objective = Some(m.objective(&examples)?);
        }
    }
    let expert_g = expert.sample_g(&state.policy, state.constraints(), cfg.g_sampling, &mut rng)?;
    let mut d_losses = Vec::with_capacity(cfg.d_updates);
    for _ in 0..cfg.d_updates {
        let e_idx: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..expert.len())).collect();
        let g_idx: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..generated.len())).collect();
        let e = DiscBatch {
            windows: expert.windows.select(&e_idx),
            actions: e_idx.iter().map(|&j| expert.actions[j]).collect(),
            g: e_idx.iter().map(|&j| expert_g[j]).collect(),
        };
        let g = generated.select(&g_idx);
        d_losses.push(state.disc.update(&mut state.d_adam, &e, &g)?);
    }
    let accepted: Vec<&StepReport> = reports.iter().filter(|r| r.accepted).collect();
    let entry = IterationLog {
        iteration: i,
        d_loss: mean(&d_losses),
        mean_reward: mean(&rewards.0),
        mean_r_judger: mean(&rewards.1),
        mean_r_disc: mean(&rewards.2),
        surrogate: mean(&reports.iter().map(|r| r.surrogate_after).collect::<Vec<_>>()),
        kl: mean(&reports.iter().map(|r| r.kl).collect::<Vec<_>>()),
        entropy: mean(&reports.iter().map(|r| r.entropy).collect::<Vec<_>>()),
        value_loss: mean(&reports.iter().map(|r| r.value_loss).collect::<Vec<_>>()),
        pi_updates: reports.len(),
        accepted_steps: accepted.len(),
        d_updates: d_losses.len(),
        max_accepted_kl: accepted.iter().map(|r| r.kl).fold(0.0, f64::max),
        min_accepted_gain: accepted
            .iter()
            .map(|r| r.surrogate_after - r.surrogate_before)
            .reduce(f64::min),
        dynamics_fingerprint: state.dynamics.as_ref().map(|m| format!("{:016x}", m.params.fingerprint())),
        dynamics_objective,
    };
    let finite = [entry.d_loss, entry.mean_reward, entry.surrogate, entry.kl, entry.value_loss]
        .iter()
        .all(|v| v.is_finite());
    if !finite || !state.policy.params.is_finite() || !state.disc.params.is_finite() {
        return Err(Error::NonFinite(format!("training diverged at iteration {i}")));
    }
    log::info!(
        "iteration {i}: d_loss {:.4} reward {:.4} kl {:.5} accepted {}/{}",
        entry.d_loss,
        entry.mean_reward,
        entry.kl,
        entry.accepted_steps,
        entry.pi_updates
    );
    state.step_reports.extend(reports);
    state.log.push(entry);
    Ok(())
}

/// The dynamics model that pretrained training starts from.
pub fn pretrain_for(cfg: &TrainConfig, demos: &[Trajectory]) -> Result<(DynamicsModel, PretrainReport)> {
    let examples = build_dynamics_dataset(&cfg.schema(), demos)?;
    let pcfg = PretrainConfig {
        seed: cfg.pretrain.seed ^ cfg.seed,
        ..cfg.pretrain.clone()
    };
    pretrain_dynamics(&examples, &pcfg)
}

/// Runs the full training loop.
///
/// With an output directory, the log and a checkpoint are written after
/// every iteration. A failing iteration leaves the last good checkpoint in
/// place and returns its error.
pub fn train(cfg: &TrainConfig, demos: &[Trajectory], opts: TrainOptions) -> Result<TrainOutput> {
    cfg.validate()?;
    let schema = cfg.schema();
    let expert = ExpertSet::new(&schema, &cfg.dims(), demos)?;
    let mut state = match (&opts.out_dir, opts.resume) {
        (Some(dir), true) if dir.join(CHECKPOINT_DIR).join("state.json").exists() => TrainState::load(dir, cfg)?,
        _ => TrainState::init(cfg, demos, opts.pretrained)?,
    };
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if state.log.is_empty() {
            state.save(dir, cfg)?;
        }
    }
    let env = Arc::new(cfg.env.clone());
    for i in state.log.len()..cfg.iterations {
        iterate(cfg, &env, &expert, &mut state, i)?;
        if let Some(dir) = &opts.out_dir {
            state.save(dir, cfg)?;
        }
    }
    Ok(TrainOutput {
        policy: state.policy,
        discriminator: state.disc,
        dynamics: state.dynamics,
        value: state.value,
        log: state.log,
        step_reports: state.step_reports,
    })
}

/// Loads trained networks from a checkpoint directory.
pub fn load_checkpoint_dir(dir: &Path) -> Result<(PolicyNet, Option<DynamicsModel>, TrainConfig)> {
    let ck = if dir.join(CHECKPOINT_DIR).is_dir() {
        dir.join(CHECKPOINT_DIR)
    } else {
        dir.to_path_buf()
    };
    let cfg = TrainConfig::load(&ck.join("config.toml"))?;
    let policy = PolicyNet::load(&ck.join("policy.json"))?;
    let dyn_path = ck.join("dynamics.json");
    let dynamics = if dyn_path.exists() {
        Some(DynamicsModel::load(&dyn_path)?)
    } else {
        None
    };
    Ok((policy, dynamics, cfg))
}
