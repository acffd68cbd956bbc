use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agentnets::{sample_action, DiscBatch, DiscriminatorNet, PolicyNet, WindowBatch};
use crate::dynamics::{ConstraintDist, DynamicsModel, DYNAMICS_INPUTS};
use crate::envsim::Env;
use crate::error::{Error, Result};
use crate::rewards::{combined_reward, judger_reward, surrogate_reward, RewardConfig};
use crate::trpo::RolloutBuffer;
use crate::types::{Action, AgentState, FeatureSchema, StepRecord, Trajectory};

/// When a fresh constraint is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GSampling {
    /// Once per stay, from `o_g` at stay entry.
    #[default]
    PerStay,
    /// Every step, from the current `o_g`.
    PerStep,
}

/// Where constraints come from.
#[derive(Clone, Copy, Debug)]
pub enum Constraints<'a> {
    Model(&'a DynamicsModel),
    /// The policy's own Beta head.
    Joint,
}

/// The state that opened the run of `history` ending at its last element.
pub fn stay_entry(history: &[AgentState]) -> Option<&AgentState> {
    let last = history.last()?;
    history.iter().rev().take_while(|s| s.loc_id == last.loc_id).last()
}

/// `o_g` for the current step: at stay entry, or at the current state.
pub fn constraint_input(schema: &FeatureSchema, history: &[AgentState], mode: GSampling) -> Result<[f64; DYNAMICS_INPUTS]> {
    let s = match mode {
        GSampling::PerStay => stay_entry(history),
        GSampling::PerStep => history.last(),
    }
    .ok_or(Error::Empty("agent history"))?;
    Ok(schema.dynamics_input(s.loc_id, s.clock, s.population))
}

/// Key identifying one stay.
fn stay_key(history: &[AgentState]) -> Option<(usize, usize)> {
    stay_entry(history).map(|e| (e.loc_id, e.clock))
}

/// Samples of `π` in an environment, before rewards are assigned.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Rollout {
    /// One trajectory per agent, `records[t].constraint` the `g` in use.
    pub trajectories: Vec<Trajectory>,
    /// Per agent, the window seen at every step.
    pub windows: Vec<WindowBatch>,
    pub log_probs: Vec<Vec<f64>>,
}

impl Rollout {
    pub fn n_steps(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.records.len())
    }

    /// All `(window, a, g)` tuples, agent-major.
    pub fn disc_batch(&self) -> DiscBatch {
        let mut out = DiscBatch {
            windows: self.windows.first().map_or_else(WindowBatch::default, |w| WindowBatch::new(w.len, w.k)),
            ..Default::default()
        };
        for (t, w) in self.trajectories.iter().zip(&self.windows) {
            out.windows.extend_from(w);
            out.actions.extend(t.records.iter().map(|r| r.action));
            out.g.extend(t.records.iter().map(|r| r.constraint));
        }
        out
    }
}

/// Runs the policy for `n_steps` steps (or until the episode ends) from
/// the current environment state, with `histories[i]` the states agent
/// `i` has already visited (its last entry the current observation).
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    env: &mut Env,
    policy: &PolicyNet,
    constraints: Constraints<'_>,
    histories: &mut [Vec<AgentState>],
    n_steps: usize,
    mode: GSampling,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    let schema = env.config().schema();
    let n = env.n_agents();
    if histories.len() != n {
        return Err(Error::OutOfRange {
            what: "initial windows",
            detail: format!("{} windows for {n} agents", histories.len()),
        });
    }
    for (i, h) in histories.iter().enumerate() {
        if h.last() != Some(&env.observe(i)?) {
            return Err(Error::OutOfRange {
                what: "initial windows",
                detail: format!("window of agent {i} does not end at its current state"),
            });
        }
    }
    if (policy.dims.n_locations, policy.dims.feature_dim, policy.dims.n_actions)
        != (schema.n_locations, schema.feature_dim(), schema.n_actions)
    {
        return Err(Error::OutOfRange {
            what: "policy",
            detail: "network dimensions do not match the environment".into(),
        });
    }
    if matches!(constraints, Constraints::Joint) && !policy.is_joint() {
        return Err(Error::OutOfRange {
            what: "policy",
            detail: "joint constraints need a policy with a Beta head".into(),
        });
    }
    let mut out = Rollout {
        trajectories: (0..n)
            .map(|agent_id| Trajectory {
                agent_id,
                records: Vec::with_capacity(n_steps),
            })
            .collect(),
        windows: vec![policy.dims.empty_batch(); n],
        log_probs: vec![Vec::with_capacity(n_steps); n],
    };
    let mut g = vec![f64::NAN; n];
    let mut g_key: Vec<Option<(usize, usize)>> = vec![None; n];
    let len = policy.dims.arch.window;
    for _ in 0..n_steps {
        if env.is_done() {
            break;
        }
        let refs: Vec<&[AgentState]> = histories.iter().map(|h| &h[h.len().saturating_sub(len)..]).collect();
        let batch = policy.dims.batch(&schema, &refs)?;
        let (h_r, joint) = policy.encode_with_constraint(&batch)?;
        let fresh: Vec<usize> = (0..n)
            .filter(|&i| mode == GSampling::PerStep || g_key[i] != stay_key(&histories[i]))
            .collect();
        let dists: Vec<ConstraintDist> = match constraints {
            Constraints::Model(m) => {
                let inputs: Vec<[f64; DYNAMICS_INPUTS]> = fresh
                    .iter()
                    .map(|&i| constraint_input(&schema, &histories[i], mode))
                    .collect::<Result<_>>()?;
                m.predict_batch(&inputs)?
            }
            Constraints::Joint => {
                let all = joint.expect("checked above");
                fresh.iter().map(|&i| all[i]).collect()
            }
        };
        for (&i, d) in fresh.iter().zip(&dists) {
            g[i] = d.sample(rng)?;
            g_key[i] = stay_key(&histories[i]);
        }
        let probs = policy.probs_from_encoding(&h_r, &g)?;
        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            let a = sample_action(probs.row_slice(i), rng)?;
            out.log_probs[i].push(probs.get(i, a.0).ln());
            actions.push(a);
        }
        let states = env.observe_all();
        env.step(&actions)?;
        for i in 0..n {
            let next = env.observe(i)?;
            out.windows[i].extend_from(&batch.select(&[i]));
            out.trajectories[i].records.push(StepRecord {
                state: states[i].clone(),
                action: actions[i],
                constraint: g[i],
                next_state: next.clone(),
            });
            histories[i].push(next);
        }
    }
    Ok(out)
}

/// A fresh rollout of `n_steps` from the environment's current state.
pub fn collect_rollouts(
    env: &mut Env,
    policy: &PolicyNet,
    constraints: Constraints<'_>,
    n_steps: usize,
    mode: GSampling,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    let mut histories: Vec<Vec<AgentState>> = env.observe_all().into_iter().map(|s| vec![s]).collect();
    let mut r = simulate(env, policy, constraints, &mut histories, n_steps, mode, rng)?;
    if r.n_steps() == 0 {
        r.trajectories.clear();
        r.windows.clear();
        r.log_probs.clear();
    }
    Ok(r)
}

/// Rolls the learned policy forward `horizon` steps from `initial` windows.
pub fn generate(
    policy: &PolicyNet,
    constraints: Constraints<'_>,
    env: &mut Env,
    initial: &[Vec<AgentState>],
    horizon: usize,
    mode: GSampling,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>> {
    if horizon == 0 {
        return Err(Error::OutOfRange {
            what: "horizon",
            detail: "must be at least 1".into(),
        });
    }
    let mut histories = initial.to_vec();
    Ok(simulate(env, policy, constraints, &mut histories, horizon, mode, rng)?.trajectories)
}

/// Everything a reward was computed from, kept for replay checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTuple {
    pub next_state: AgentState,
    pub action: Action,
    pub g: f64,
    pub d_score: f64,
    pub r_judger: f64,
    pub r_disc: f64,
    pub reward: f64,
}

/// Scores a rollout with the discriminator and fills a buffer with the
/// blended rewards, one episode per agent.
pub fn assign_rewards(
    rollout: &Rollout,
    disc: &DiscriminatorNet,
    reward: &RewardConfig,
    schema: &FeatureSchema,
) -> Result<(RolloutBuffer, Vec<RewardTuple>)> {
    let window = disc.dims.arch.window;
    let mut buffer = RolloutBuffer::new(window, disc.dims.feature_dim);
    let mut tuples = Vec::new();
    if rollout.n_steps() == 0 {
        return Ok((buffer, tuples));
    }
    let scores = disc.scores(&rollout.disc_batch())?;
    let stay = reward.stay_set(schema.kind);
    let mut offset = 0;
    for ((t, w), lp) in rollout.trajectories.iter().zip(&rollout.windows).zip(&rollout.log_probs) {
        let mut rewards = Vec::with_capacity(t.records.len());
        for (j, r) in t.records.iter().enumerate() {
            let d = scores[offset + j];
            let r_judger = judger_reward(&r.next_state, r.action, r.constraint, &stay, schema.max_steps, reward.judger_mode)?;
            let r_disc = surrogate_reward(d)?;
            let total = combined_reward(r_judger, r_disc, reward.eta);
            rewards.push(total);
            tuples.push(RewardTuple {
                next_state: r.next_state.clone(),
                action: r.action,
                g: r.constraint,
                d_score: d,
                r_judger,
                r_disc,
                reward: total,
            });
        }
        offset += t.records.len();
        let g: Vec<f64> = t.records.iter().map(|r| r.constraint).collect();
        let actions: Vec<Action> = t.records.iter().map(|r| r.action).collect();
        buffer.add_episode(w, &g, &actions, lp, &rewards)?;
    }
    Ok((buffer, tuples))
}
