//! Synthetic multi-agent worlds with hidden temporal constraints.
//!
//! Two environments share one [`Env`] interface: a grid-park where facility
//! check-ins join a queue, and a directed road network whose travel times grow
//! with congestion. Agents act simultaneously; within a step their actions are
//! applied in agent order, so congestion and queue positions are deterministic.

mod expert;
mod gridpark;
mod roadnet;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use expert::{audit_demonstrations, audit_trajectories, expert_episode, generate_demonstrations, AuditReport, ScriptedExpert};
pub use gridpark::{Facility, GridParkConfig, CELL_METERS};
pub use roadnet::{Road, RoadNetConfig, MAX_CANDIDATES};

use crate::error::{Error, Result};
use crate::types::{grid_actions, road_actions, Action, AgentState, EnvKind, FeatureSchema};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvConfig {
    GridPark(GridParkConfig),
    RoadNet(RoadNetConfig),
}

impl EnvConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::GridPark(_) => EnvKind::GridPark,
            EnvConfig::RoadNet(_) => EnvKind::RoadNet,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::GridPark(c) => c.validate(),
            EnvConfig::RoadNet(c) => c.validate(),
        }?;
        if self.n_agents() == 0 {
            return Err(Error::config("n_agents", "must be positive"));
        }
        Ok(())
    }

    pub fn n_locations(&self) -> usize {
        match self {
            EnvConfig::GridPark(c) => c.n_locations(),
            EnvConfig::RoadNet(c) => c.n_locations(),
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            EnvConfig::GridPark(c) => c.n_agents,
            EnvConfig::RoadNet(c) => c.n_agents,
        }
    }

    pub fn max_steps(&self) -> usize {
        match self {
            EnvConfig::GridPark(c) => c.max_steps,
            EnvConfig::RoadNet(c) => c.max_steps,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            EnvConfig::GridPark(c) => c.seed,
            EnvConfig::RoadNet(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            EnvConfig::GridPark(c) => c.seed = seed,
            EnvConfig::RoadNet(c) => c.seed = seed,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            EnvConfig::GridPark(c) => c.n_actions,
            EnvConfig::RoadNet(_) => road_actions::COUNT,
        }
    }

    pub fn schema(&self) -> FeatureSchema {
        let (w, h) = match self {
            EnvConfig::GridPark(c) => (c.width, c.height),
            EnvConfig::RoadNet(_) => (0, 0),
        };
        FeatureSchema {
            kind: self.kind(),
            n_locations: self.n_locations(),
            n_agents: self.n_agents(),
            max_steps: self.max_steps(),
            grid_width: w,
            grid_height: h,
            n_actions: self.n_actions(),
        }
    }

    /// Location reached if `action` succeeds at `loc`; `None` for stays and blocked moves.
    pub fn successor(&self, loc: usize, action: Action) -> Option<usize> {
        match self {
            EnvConfig::GridPark(c) => c.successor(loc, action.0),
            EnvConfig::RoadNet(c) => c.successor(loc, action.0),
        }
    }

    /// Location the agent occupies after `action` once its constraint allows leaving.
    pub fn action_target(&self, loc: usize, action: Action) -> usize {
        self.successor(loc, action).unwrap_or(loc)
    }

    /// The current location plus every location one move away, ascending.
    pub fn candidates(&self, loc: usize) -> Result<Vec<usize>> {
        if loc >= self.n_locations() {
            return Err(Error::UnknownLocation(loc));
        }
        let mut out: Vec<usize> = std::iter::once(loc)
            .chain((0..self.n_actions()).filter_map(|a| self.successor(loc, Action(a))))
            .collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// Lowest-index action taking `loc` to `target`, "stay" when they coincide.
    pub fn action_to(&self, loc: usize, target: usize) -> Option<Action> {
        if loc == target {
            return Some(self.kind().stay_action());
        }
        (0..self.n_actions())
            .map(Action)
            .find(|&a| self.successor(loc, a) == Some(target))
    }

    /// Planar coordinates in metres: cell centroid or road midpoint.
    pub fn loc_coordinates(&self, loc: usize) -> Result<(f64, f64)> {
        if loc >= self.n_locations() {
            return Err(Error::UnknownLocation(loc));
        }
        Ok(match self {
            EnvConfig::GridPark(c) => c.centroid(loc),
            EnvConfig::RoadNet(c) => {
                let [x, y] = c.roads[loc].midpoint;
                (x, y)
            }
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: EnvConfig = toml::from_str(text).map_err(|e| Error::config("env", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Seed of episode `index` in a batch drawn from this configuration.
    pub fn episode_seed(&self, index: usize) -> u64 {
        self.seed()
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct AgentSim {
    obs: AgentState,
    /// Dwell required before the agent may leave its location.
    required: usize,
    checked_in: bool,
    served: bool,
}

/// Full simulator state. Equality covers every agent, queue, and the RNG.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub clock: usize,
    agents: Vec<AgentSim>,
    occupancy: Vec<usize>,
    /// Checked-in agents still waiting, per location.
    queues: Vec<usize>,
    rng: ChaCha8Rng,
}

/// An environment configuration together with its current state.
#[derive(Clone, Debug)]
pub struct Env {
    cfg: Arc<EnvConfig>,
    state: EnvState,
}

impl PartialEq for Env {
    fn eq(&self, other: &Self) -> bool {
        self.state == other.state
    }
}

impl Env {
    pub fn reset(cfg: Arc<EnvConfig>) -> Result<Self> {
        let seed = cfg.seed();
        Self::reset_with_seed(cfg, seed)
    }

    pub fn reset_with_seed(cfg: Arc<EnvConfig>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.n_locations();
        let mut occupancy = vec![0; n];
        let mut agents = Vec::with_capacity(cfg.n_agents());
        for i in 0..cfg.n_agents() {
            let sim = match &*cfg {
                EnvConfig::GridPark(c) => {
                    let loc = c.entries[i % c.entries.len()];
                    AgentSim {
                        obs: AgentState {
                            loc_id: loc,
                            start_time: rng.random_range(0..=c.max_start_delay),
                            checkinable: c.facility(loc).is_some_and(|f| f.checkinable),
                            prev_loc: loc,
                            last_action: grid_actions::STAY,
                            ..Default::default()
                        },
                        required: c.walk_steps,
                        checked_in: false,
                        served: false,
                    }
                }
                EnvConfig::RoadNet(c) => {
                    let origin = rng.random_range(0..n);
                    let reachable = reachable_from(c, origin);
                    let dest = if reachable.is_empty() {
                        origin
                    } else {
                        reachable[rng.random_range(0..reachable.len())]
                    };
                    AgentSim {
                        obs: AgentState {
                            loc_id: origin,
                            start_time: rng.random_range(0..=c.max_start_delay),
                            dest_loc: dest,
                            prev_loc: origin,
                            last_action: road_actions::STAY,
                            ..Default::default()
                        },
                        required: c.travel_time(origin, occupancy[origin]),
                        checked_in: false,
                        served: false,
                    }
                }
            };
            occupancy[sim.obs.loc_id] += 1;
            agents.push(sim);
        }
        let mut env = Env {
            state: EnvState {
                clock: 0,
                agents,
                occupancy,
                queues: vec![0; n],
                rng,
            },
            cfg,
        };
        env.refresh_observations();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn shared_config(&self) -> Arc<EnvConfig> {
        Arc::clone(&self.cfg)
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn clock(&self) -> usize {
        self.state.clock
    }

    pub fn n_agents(&self) -> usize {
        self.state.agents.len()
    }

    pub fn is_done(&self) -> bool {
        self.state.clock >= self.cfg.max_steps()
    }

    pub fn observe(&self, agent: usize) -> Result<AgentState> {
        self.sim(agent).map(|a| a.obs.clone())
    }

    pub fn observe_all(&self) -> Vec<AgentState> {
        self.state.agents.iter().map(|a| a.obs.clone()).collect()
    }

    pub fn candidate_next_locations(&self, agent: usize) -> Result<Vec<usize>> {
        self.cfg.candidates(self.sim(agent)?.obs.loc_id)
    }

    /// True dwell the agent must reach before it can leave, in steps.
    pub fn constraint(&self, agent: usize) -> Result<usize> {
        self.sim(agent).map(|a| a.required)
    }

    pub fn is_checked_in(&self, agent: usize) -> Result<bool> {
        self.sim(agent).map(|a| a.checked_in)
    }

    pub fn is_served(&self, agent: usize) -> Result<bool> {
        self.sim(agent).map(|a| a.served)
    }

    fn sim(&self, agent: usize) -> Result<&AgentSim> {
        self.state.agents.get(agent).ok_or(Error::UnknownAgent(agent))
    }

    /// Advances every agent by one step.
    ///
    /// Moves attempted before the agent's constraint has elapsed, off-grid
    /// moves, missing turns, and the reserved grid action all leave the agent
    /// in place with its dwell incremented.
    pub fn step(&mut self, actions: &[Action]) -> Result<()> {
        if self.is_done() {
            return Err(Error::OutOfRange {
                what: "clock",
                detail: format!("episode ended at max_steps {}", self.cfg.max_steps()),
            });
        }
        if actions.len() != self.state.agents.len() {
            return Err(Error::OutOfRange {
                what: "actions",
                detail: format!("{} actions for {} agents", actions.len(), self.state.agents.len()),
            });
        }
        let n_actions = self.cfg.n_actions();
        if let Some((agent, a)) = actions.iter().enumerate().find(|(_, a)| a.0 >= n_actions) {
            return Err(Error::InvalidAction { agent, action: a.0 });
        }
        let cfg = Arc::clone(&self.cfg);
        let st = &mut self.state;
        for (sim, &action) in st.agents.iter_mut().zip(actions) {
            let loc = sim.obs.loc_id;
            let dest = cfg.successor(loc, action).filter(|_| sim.obs.time_in_loc >= sim.required);
            match dest {
                Some(next) => {
                    st.occupancy[loc] -= 1;
                    sim.required = match &*cfg {
                        EnvConfig::GridPark(c) => c.walk_steps,
                        EnvConfig::RoadNet(c) => c.travel_time(next, st.occupancy[next]),
                    };
                    st.occupancy[next] += 1;
                    sim.obs.prev_loc = loc;
                    sim.obs.loc_id = next;
                    sim.obs.time_in_loc = 0;
                    sim.checked_in = false;
                    sim.served = false;
                }
                None => {
                    sim.obs.time_in_loc += 1;
                    if let EnvConfig::GridPark(c) = &*cfg {
                        if action.0 == grid_actions::CHECK_IN && !sim.checked_in {
                            if let Some(f) = c.facility(loc).filter(|f| f.checkinable) {
                                st.queues[loc] += 1;
                                sim.required = sim.obs.time_in_loc + c.queue_wait(f, st.queues[loc]);
                                sim.checked_in = true;
                            }
                        }
                    }
                    if sim.checked_in && !sim.served && sim.obs.time_in_loc >= sim.required {
                        sim.served = true;
                        st.queues[loc] -= 1;
                    }
                }
            }
            sim.obs.last_action = action.0;
        }
        st.clock += 1;
        self.refresh_observations();
        Ok(())
    }

    fn refresh_observations(&mut self) {
        let st = &mut self.state;
        for sim in &mut st.agents {
            sim.obs.clock = st.clock;
            sim.obs.population = st.occupancy[sim.obs.loc_id];
            if let EnvConfig::GridPark(c) = &*self.cfg {
                sim.obs.checkinable = c.facility(sim.obs.loc_id).is_some_and(|f| f.checkinable);
            }
        }
    }

    /// Draws from the environment's own RNG stream.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.state.rng
    }
}

fn reachable_from(c: &RoadNetConfig, origin: usize) -> Vec<usize> {
    let mut seen = vec![false; c.roads.len()];
    let mut stack = vec![origin];
    seen[origin] = true;
    while let Some(r) = stack.pop() {
        for &(_, s) in &c.roads[r].successors {
            if !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
    }
    (0..c.roads.len()).filter(|&r| seen[r] && r != origin).collect()
}
