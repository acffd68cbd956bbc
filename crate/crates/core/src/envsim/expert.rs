use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Env, EnvConfig};
use crate::error::Result;
use crate::types::{grid_actions, rescale_duration, unscale_duration, Action, StepRecord, Trajectory};

/// Hand-written behaviour used to produce demonstrations.
///
/// Grid-park agents loop over the facilities in a shuffled order, checking in
/// and waiting out the queue at each, then walk back to their entry cell.
/// Road agents follow a shortest path to their destination and stay there.
/// Both wait out the true constraint before every move.
#[derive(Clone, Debug)]
pub struct ScriptedExpert {
    plans: Vec<VecDeque<usize>>,
    entries: Vec<usize>,
    next_hops: Vec<Vec<Option<usize>>>,
}

impl ScriptedExpert {
    pub fn new(env: &Env) -> Self {
        let entries = env.observe_all().iter().map(|s| s.loc_id).collect();
        let next_hops = match env.config() {
            EnvConfig::RoadNet(c) => c.next_hops(),
            EnvConfig::GridPark(_) => Vec::new(),
        };
        Self {
            plans: vec![VecDeque::new(); env.n_agents()],
            entries,
            next_hops,
        }
    }

    pub fn act(&mut self, env: &Env, agent: usize, rng: &mut ChaCha8Rng) -> Result<Action> {
        let s = env.observe(agent)?;
        let stay = env.config().kind().stay_action();
        if s.clock < s.start_time {
            return Ok(stay);
        }
        match env.config() {
            EnvConfig::RoadNet(_) => {
                if s.loc_id == s.dest_loc || s.time_in_loc < env.constraint(agent)? {
                    return Ok(stay);
                }
                Ok(self.next_hops[s.dest_loc][s.loc_id].map_or(stay, Action))
            }
            EnvConfig::GridPark(c) => {
                let max_hops = 2 * (c.facilities.len() + 2);
                for _ in 0..max_hops {
                    if self.plans[agent].is_empty() {
                        let mut round: Vec<usize> = c.facilities.iter().map(|f| f.loc_id).collect();
                        round.shuffle(rng);
                        round.push(self.entries[agent]);
                        self.plans[agent].extend(round);
                    }
                    let target = self.plans[agent][0];
                    if s.loc_id != target {
                        if s.time_in_loc < env.constraint(agent)? {
                            return Ok(stay);
                        }
                        return Ok(c.step_toward(s.loc_id, target).map_or(stay, Action));
                    }
                    if c.facility(target).is_some_and(|f| f.checkinable) {
                        if !env.is_checked_in(agent)? {
                            return Ok(Action(grid_actions::CHECK_IN));
                        }
                        if !env.is_served(agent)? {
                            return Ok(stay);
                        }
                    }
                    self.plans[agent].pop_front();
                }
                Ok(stay)
            }
        }
    }

    pub fn act_all(&mut self, env: &Env, rng: &mut ChaCha8Rng) -> Result<Vec<Action>> {
        (0..env.n_agents()).map(|i| self.act(env, i, rng)).collect()
    }
}

/// Runs the expert for a full episode from `seed`.
///
/// Returns one trajectory per agent (ids `0..n_agents`) and, when
/// `snapshot_clock` is given, a copy of the environment at that clock.
pub fn expert_episode(
    cfg: Arc<EnvConfig>,
    seed: u64,
    snapshot_clock: Option<usize>,
) -> Result<(Vec<Trajectory>, Option<Env>)> {
    let mut env = Env::reset_with_seed(cfg, seed)?;
    let mut expert = ScriptedExpert::new(&env);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_CAFE);
    let max = env.config().max_steps();
    let mut trajs: Vec<Trajectory> = (0..env.n_agents())
        .map(|agent_id| Trajectory {
            agent_id,
            records: Vec::with_capacity(max),
        })
        .collect();
    let mut snapshot = None;
    while !env.is_done() {
        if snapshot_clock == Some(env.clock()) {
            snapshot = Some(env.clone());
        }
        let states = env.observe_all();
        let required: Vec<usize> = (0..env.n_agents()).map(|i| env.constraint(i)).collect::<Result<_>>()?;
        let actions = expert.act_all(&env, &mut rng)?;
        env.step(&actions)?;
        for (i, t) in trajs.iter_mut().enumerate() {
            t.records.push(StepRecord {
                state: states[i].clone(),
                action: actions[i],
                constraint: rescale_duration(required[i].min(max), max)?,
                next_state: env.observe(i)?,
            });
        }
    }
    Ok((trajs, snapshot))
}

/// Expert demonstrations over `n_episodes` episodes seeded by
/// [`EnvConfig::episode_seed`]. Agent ids are `episode * n_agents + agent`.
///
/// Each record's `constraint` is the environment's true constraint at that
/// step, kept for auditing; training does not read it.
pub fn generate_demonstrations(cfg: &EnvConfig, n_episodes: usize) -> Result<Vec<Trajectory>> {
    let shared = Arc::new(cfg.clone());
    let n_agents = cfg.n_agents();
    let mut out = Vec::with_capacity(n_episodes * n_agents);
    for e in 0..n_episodes {
        let (trajs, _) = expert_episode(Arc::clone(&shared), cfg.episode_seed(e), None)?;
        out.extend(trajs.into_iter().map(|mut t| {
            t.agent_id += e * n_agents;
            t
        }));
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub records: usize,
    pub departures: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replays demonstrations through the simulator.
///
/// Checks that each trajectory is chained, that the recorded actions
/// reproduce the recorded states, and that every departure happens after
/// the recorded constraint has elapsed.
pub fn audit_demonstrations(cfg: &EnvConfig, trajectories: &[Trajectory]) -> Result<AuditReport> {
    let n_agents = cfg.n_agents();
    let max = cfg.max_steps();
    let mut report = AuditReport::default();
    let mut episodes: BTreeMap<usize, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajectories {
        report.records += t.records.len();
        if !t.is_chained() {
            report.violations.push(format!("agent {}: records are not chained", t.agent_id));
        }
        for r in &t.records {
            if r.next_state.loc_id != r.state.loc_id {
                report.departures += 1;
                let need = unscale_duration(r.constraint, max);
                if r.state.time_in_loc < need {
                    report.violations.push(format!(
                        "agent {} left {} at t={} after {} of {need} steps",
                        t.agent_id, r.state.loc_id, r.state.clock, r.state.time_in_loc
                    ));
                }
            }
        }
        episodes.entry(t.agent_id / n_agents).or_default().push(t);
    }
    let shared = Arc::new(cfg.clone());
    for (e, mut trajs) in episodes {
        trajs.sort_by_key(|t| t.agent_id);
        if trajs.len() != n_agents || trajs.iter().any(|t| t.records.len() != trajs[0].records.len()) {
            report.violations.push(format!("episode {e}: incomplete agent set"));
            continue;
        }
        let mut env = Env::reset_with_seed(Arc::clone(&shared), cfg.episode_seed(e))?;
        'steps: for step in 0..trajs[0].records.len() {
            for (i, t) in trajs.iter().enumerate() {
                if env.observe(i)? != t.records[step].state {
                    report
                        .violations
                        .push(format!("episode {e}: agent {i} diverges at step {step}"));
                    break 'steps;
                }
            }
            let actions: Vec<Action> = trajs.iter().map(|t| t.records[step].action).collect();
            env.step(&actions)?;
        }
    }
    Ok(report)
}

/// Structural audit of any trajectory set, generated ones included: records
/// are chained, clocks advance by one, and every transition stays on the map
/// and reaches one of the candidates of its source location.
pub fn audit_trajectories(cfg: &EnvConfig, trajectories: &[Trajectory]) -> Result<AuditReport> {
    let mut report = AuditReport::default();
    for t in trajectories {
        report.records += t.records.len();
        if !t.is_chained() {
            report.violations.push(format!("agent {}: records are not chained", t.agent_id));
        }
        for r in &t.records {
            let (from, to) = (r.state.loc_id, r.next_state.loc_id);
            if r.next_state.clock != r.state.clock + 1 {
                report
                    .violations
                    .push(format!("agent {} at t={}: clock jumps to {}", t.agent_id, r.state.clock, r.next_state.clock));
            }
            if cfg.loc_coordinates(from).is_err() || cfg.loc_coordinates(to).is_err() {
                report.violations.push(format!("agent {} at t={}: location off the map", t.agent_id, r.state.clock));
                continue;
            }
            if from != to {
                report.departures += 1;
            }
            if !cfg.candidates(from)?.contains(&to) {
                report
                    .violations
                    .push(format!("agent {} at t={}: {from} -> {to} is not a candidate move", t.agent_id, r.state.clock));
            }
        }
    }
    Ok(report)
}
