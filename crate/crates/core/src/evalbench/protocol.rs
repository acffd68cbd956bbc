use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::EvalReport;
use super::{ade, fde, markov_predict, trajectory_points, uniform_over, AccAccumulator, LocDist, MarkovModel};
use crate::agentnets::PolicyNet;
use crate::dynamics::{ConstraintDist, DYNAMICS_INPUTS};
use crate::envsim::{expert_episode, Env, EnvConfig};
use crate::error::{Error, Result};
use crate::gailtrain::{constraint_input, generate, Constraints, GSampling};
use crate::types::{Action, AgentState, StepRecord, Trajectory};

/// Episode indices used for testing start here, far past any demonstration index.
const TEST_OFFSET: usize = 1 << 32;

pub const K_VALUES: [usize; 3] = [1, 3, 5];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalTask {
    /// Acc@k of one-step next-location prediction.
    NextLoc,
    /// ADE and FDE of multi-step generation.
    #[default]
    Gen,
    /// Both of the above.
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Held-out expert episodes.
    pub test_episodes: usize,
    /// First prediction step; defaults to the window length minus one.
    pub t0: Option<usize>,
    /// Requested generation length.
    pub horizon: usize,
    /// Generated rollouts per test episode and method.
    pub gen_samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            test_episodes: 3,
            t0: None,
            horizon: 100,
            gen_samples: 1,
            seed: 0,
        }
    }
}

/// Seeds of the held-out test episodes.
pub fn test_seeds(cfg: &EnvConfig, n: usize) -> Vec<u64> {
    (0..n).map(|j| cfg.episode_seed(TEST_OFFSET + j)).collect()
}

/// A trained policy with its constraint source.
#[derive(Clone, Copy, Debug)]
pub struct Predictor<'a> {
    pub policy: &'a PolicyNet,
    pub constraints: Constraints<'a>,
    pub g_sampling: GSampling,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub acc_at_1: Option<f64>,
    pub acc_at_3: Option<f64>,
    pub acc_at_5: Option<f64>,
    pub ade: Option<f64>,
    pub fde: Option<f64>,
    /// Next-location predictions scored.
    pub n_predictions: usize,
    /// Predictions whose truth lay outside the candidate set.
    pub missing_truth: usize,
    /// Generated trajectories scored.
    pub n_trajectories: usize,
}

pub const METHODS: [&str; 3] = ["MoveSD", "RandomWalk", "Markov"];

/// Mean constraint per history, as used for deterministic prediction.
fn mean_constraints(cfg: &EnvConfig, p: &Predictor<'_>, histories: &[&[AgentState]]) -> Result<Vec<f64>> {
    let schema = cfg.schema();
    let dists: Vec<ConstraintDist> = match p.constraints {
        Constraints::Model(m) => {
            let inputs: Vec<[f64; DYNAMICS_INPUTS]> = histories
                .iter()
                .map(|h| constraint_input(&schema, h, p.g_sampling))
                .collect::<Result<_>>()?;
            m.predict_batch(&inputs)?
        }
        Constraints::Joint => {
            let len = p.policy.dims.arch.window;
            let ends: Vec<&[AgentState]> = histories
                .iter()
                .map(|h| {
                    let end = match p.g_sampling {
                        GSampling::PerStay => {
                            let last = h.last().map_or(0, |s| s.loc_id);
                            h.len() - h.iter().rev().take_while(|s| s.loc_id == last).count() + 1
                        }
                        GSampling::PerStep => h.len(),
                    };
                    &h[end.saturating_sub(len)..end]
                })
                .collect();
            let batch = p.policy.dims.batch(&schema, &ends)?;
            p.policy.encode_with_constraint(&batch)?.1.ok_or(Error::OutOfRange {
                what: "policy",
                detail: "network has no constraint head".into(),
            })?
        }
    };
    Ok(dists.iter().map(ConstraintDist::mean).collect())
}

/// Next-location distributions of the policy, one per history, with the
/// action probabilities pooled by the location each action leads to.
pub fn policy_next_loc(cfg: &EnvConfig, p: &Predictor<'_>, histories: &[&[AgentState]]) -> Result<Vec<LocDist>> {
    if histories.is_empty() {
        return Ok(Vec::new());
    }
    let schema = cfg.schema();
    let len = p.policy.dims.arch.window;
    let windows: Vec<&[AgentState]> = histories.iter().map(|h| &h[h.len().saturating_sub(len)..]).collect();
    let batch = p.policy.dims.batch(&schema, &windows)?;
    let g = mean_constraints(cfg, p, histories)?;
    let probs = p.policy.action_probs(&batch, &g)?;
    histories
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let loc = h.last().ok_or(Error::Empty("agent history"))?.loc_id;
            let mut dist: LocDist = cfg.candidates(loc)?.into_iter().map(|l| (l, 0.0)).collect();
            for a in 0..probs.cols() {
                let target = cfg.action_target(loc, Action(a));
                if let Some(slot) = dist.iter_mut().find(|(l, _)| *l == target) {
                    slot.1 += probs.get(i, a);
                }
            }
            Ok(dist)
        })
        .collect()
}

fn t0_of(eval: &EvalConfig, p: &Predictor<'_>) -> usize {
    eval.t0.unwrap_or(p.policy.dims.arch.window.saturating_sub(1))
}

fn acc_result(method: &str, acc: &AccAccumulator) -> MethodResult {
    let rates = acc.rates();
    let at = |k| rates.iter().find(|(kk, _)| *kk == k).map(|(_, r)| *r);
    MethodResult {
        method: method.into(),
        acc_at_1: at(1),
        acc_at_3: at(3),
        acc_at_5: at(5),
        n_predictions: acc.total,
        missing_truth: acc.missing,
        ..Default::default()
    }
}

/// Acc@{1,3,5} on every step from `t0` of held-out expert episodes.
pub fn evaluate_next_loc(
    cfg: &EnvConfig,
    p: &Predictor<'_>,
    markov: &MarkovModel,
    eval: &EvalConfig,
) -> Result<Vec<MethodResult>> {
    let shared = Arc::new(cfg.clone());
    let t0 = t0_of(eval, p);
    let mut accs: Vec<AccAccumulator> = METHODS.iter().map(|_| AccAccumulator::new(&K_VALUES)).collect::<Result<_>>()?;
    for seed in test_seeds(cfg, eval.test_episodes) {
        let (trajs, _) = expert_episode(Arc::clone(&shared), seed, None)?;
        for t in &trajs {
            let states: Vec<AgentState> = t.records.iter().map(|r| r.state.clone()).collect();
            let steps: Vec<usize> = (t0..t.records.len()).collect();
            let hist: Vec<&[AgentState]> = steps.iter().map(|&i| &states[..=i]).collect();
            let moved = policy_next_loc(cfg, p, &hist)?;
            for (j, &i) in steps.iter().enumerate() {
                let truth = t.records[i].next_state.loc_id;
                let loc = t.records[i].state.loc_id;
                accs[0].add(&moved[j], truth);
                accs[1].add(&uniform_over(cfg, loc)?, truth);
                accs[2].add(&markov_predict(markov, cfg, loc)?, truth);
            }
        }
    }
    Ok(METHODS.iter().zip(&accs).map(|(m, a)| acc_result(m, a)).collect())
}

/// Moves every agent toward a location drawn from `choose`.
fn baseline_generate(
    env: &mut Env,
    initial: &[Vec<AgentState>],
    horizon: usize,
    mut choose: impl FnMut(usize) -> Result<LocDist>,
    rng: &mut impl Rng,
) -> Result<Vec<Trajectory>> {
    let cfg = env.shared_config();
    let mut out: Vec<Trajectory> = (0..initial.len())
        .map(|agent_id| Trajectory {
            agent_id,
            records: Vec::with_capacity(horizon),
        })
        .collect();
    for _ in 0..horizon {
        if env.is_done() {
            break;
        }
        let states = env.observe_all();
        let mut actions = Vec::with_capacity(states.len());
        for s in &states {
            let dist = choose(s.loc_id)?;
            let w = WeightedIndex::new(dist.iter().map(|(_, p)| *p))
                .map_err(|e| Error::NonFinite(format!("baseline distribution: {e}")))?;
            let target = dist[w.sample(rng)].0;
            actions.push(cfg.action_to(s.loc_id, target).unwrap_or_else(|| cfg.kind().stay_action()));
        }
        env.step(&actions)?;
        for (i, t) in out.iter_mut().enumerate() {
            t.records.push(StepRecord {
                state: states[i].clone(),
                action: actions[i],
                constraint: 0.0,
                next_state: env.observe(i)?,
            });
        }
    }
    Ok(out)
}

fn points(cfg: &EnvConfig, trajs: &[Trajectory]) -> Result<Vec<Vec<(f64, f64)>>> {
    trajs.iter().map(|t| trajectory_points(cfg, t)).collect()
}

/// ADE and FDE of `horizon`-step generation from snapshots of held-out
/// expert episodes; also returns the horizon actually used, which is
/// capped by the episode length.
pub fn evaluate_generation(
    cfg: &EnvConfig,
    p: &Predictor<'_>,
    markov: &MarkovModel,
    eval: &EvalConfig,
) -> Result<(Vec<MethodResult>, usize)> {
    let shared = Arc::new(cfg.clone());
    let t0 = t0_of(eval, p);
    if t0 >= cfg.max_steps() {
        return Err(Error::config("t0", format!("{t0} leaves no steps before max_steps {}", cfg.max_steps())));
    }
    let horizon = eval.horizon.min(cfg.max_steps() - t0);
    if horizon == 0 || eval.gen_samples == 0 {
        return Err(Error::config("horizon", "generation needs at least one step and one sample"));
    }
    let mut sums = [(0.0, 0.0, 0usize); 3];
    for (e, seed) in test_seeds(cfg, eval.test_episodes).into_iter().enumerate() {
        let (trajs, snap) = expert_episode(Arc::clone(&shared), seed, Some(t0))?;
        let snap = snap.ok_or(Error::config("t0", "snapshot clock not reached"))?;
        let truth: Vec<Vec<(f64, f64)>> = trajs
            .iter()
            .map(|t| t.records[t0..t0 + horizon].iter().map(|r| cfg.loc_coordinates(r.next_state.loc_id)).collect())
            .collect::<Result<_>>()?;
        let initial: Vec<Vec<AgentState>> =
            trajs.iter().map(|t| t.records[..=t0].iter().map(|r| r.state.clone()).collect()).collect();
        for s in 0..eval.gen_samples {
            // One stream per method, so each method's draws are independent of the others.
            let rng = |m: u64| {
                let mut r = ChaCha8Rng::seed_from_u64(eval.seed);
                r.set_stream((((e * eval.gen_samples + s) as u64) << 2) | m);
                r
            };
            let gen = generate(p.policy, p.constraints, &mut snap.clone(), &initial, horizon, p.g_sampling, &mut rng(0))?;
            let rw = baseline_generate(&mut snap.clone(), &initial, horizon, |loc| uniform_over(cfg, loc), &mut rng(1))?;
            let mk = baseline_generate(
                &mut snap.clone(),
                &initial,
                horizon,
                |loc| markov_predict(markov, cfg, loc),
                &mut rng(2),
            )?;
            for (slot, trajs) in sums.iter_mut().zip([gen, rw, mk]) {
                let pts = points(cfg, &trajs)?;
                slot.0 += ade(&pts, &truth)?;
                slot.1 += fde(&pts, &truth)?;
                slot.2 += trajs.len();
            }
        }
    }
    let runs = (eval.test_episodes * eval.gen_samples).max(1) as f64;
    let results = METHODS
        .iter()
        .zip(sums)
        .map(|(m, (a, f, n))| MethodResult {
            method: (*m).into(),
            ade: (eval.test_episodes > 0).then_some(a / runs),
            fde: (eval.test_episodes > 0).then_some(f / runs),
            n_trajectories: n,
            ..Default::default()
        })
        .collect();
    Ok((results, horizon))
}

/// Runs the requested task(s) and merges the per-method results.
pub fn evaluate(
    cfg: &EnvConfig,
    p: &Predictor<'_>,
    markov: &MarkovModel,
    eval: &EvalConfig,
    task: EvalTask,
) -> Result<EvalReport> {
    let mut methods: Vec<MethodResult> = METHODS
        .iter()
        .map(|m| MethodResult {
            method: (*m).into(),
            ..Default::default()
        })
        .collect();
    let mut horizon_used = 0;
    if matches!(task, EvalTask::NextLoc | EvalTask::Both) {
        for (dst, src) in methods.iter_mut().zip(evaluate_next_loc(cfg, p, markov, eval)?) {
            dst.acc_at_1 = src.acc_at_1;
            dst.acc_at_3 = src.acc_at_3;
            dst.acc_at_5 = src.acc_at_5;
            dst.n_predictions = src.n_predictions;
            dst.missing_truth = src.missing_truth;
        }
    }
    if matches!(task, EvalTask::Gen | EvalTask::Both) {
        let (gen, h) = evaluate_generation(cfg, p, markov, eval)?;
        horizon_used = h;
        for (dst, src) in methods.iter_mut().zip(gen) {
            dst.ade = src.ade;
            dst.fde = src.fde;
            dst.n_trajectories = src.n_trajectories;
        }
    }
    Ok(EvalReport {
        task,
        env: format!("{:?}", cfg.kind()),
        test_episodes: eval.test_episodes,
        t0: t0_of(eval, p),
        horizon_requested: if task == EvalTask::NextLoc { 1 } else { eval.horizon },
        horizon_used: if task == EvalTask::NextLoc { 1 } else { horizon_used },
        seed: eval.seed,
        methods,
    })
}
