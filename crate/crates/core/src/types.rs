//! Agent observations, transitions, and the duration scale shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Endpoint clamp for rescaled durations; keeps Beta log-densities finite.
pub const DURATION_EPS: f64 = 1e-4;

/// Which synthetic world produced a state, and hence which features it exposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    GridPark,
    RoadNet,
}

impl EnvKind {
    /// Encoded feature width excluding the location id.
    pub fn feature_dim(self) -> usize {
        match self {
            EnvKind::GridPark => 6,
            EnvKind::RoadNet => 12,
        }
    }

    pub fn default_num_actions(self) -> usize {
        match self {
            EnvKind::GridPark => grid_actions::COUNT,
            EnvKind::RoadNet => road_actions::COUNT,
        }
    }

    /// Actions that count as staying put for the dynamics judger.
    pub fn stay_actions(self) -> &'static [usize] {
        match self {
            EnvKind::GridPark => &[grid_actions::STAY, grid_actions::CHECK_IN],
            EnvKind::RoadNet => &[road_actions::STAY],
        }
    }

    /// The plain "stay" action.
    pub fn stay_action(self) -> Action {
        match self {
            EnvKind::GridPark => Action(grid_actions::STAY),
            EnvKind::RoadNet => Action(road_actions::STAY),
        }
    }
}

/// Grid-park action ids: eight compass moves, stay, check-in, and a reserved slot.
pub mod grid_actions {
    pub const N: usize = 0;
    pub const NE: usize = 1;
    pub const E: usize = 2;
    pub const SE: usize = 3;
    pub const S: usize = 4;
    pub const SW: usize = 5;
    pub const W: usize = 6;
    pub const NW: usize = 7;
    pub const STAY: usize = 8;
    pub const CHECK_IN: usize = 9;
    /// Reserved ("exit park"); behaves as a blocked move.
    pub const RESERVED: usize = 10;
    pub const COUNT: usize = 11;

    /// (dx, dy) for the eight moves, N is +y.
    pub const OFFSETS: [(i64, i64); 8] = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)];
}

/// Road-network action ids.
pub mod road_actions {
    pub const LEFT: usize = 0;
    pub const RIGHT: usize = 1;
    pub const U_TURN: usize = 2;
    pub const STRAIGHT: usize = 3;
    pub const STAY: usize = 4;
    pub const COUNT: usize = 5;
}

/// Categorical action index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(pub usize);

/// One agent's view of the world at one step.
///
/// Fields an environment does not use stay at 0.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub loc_id: usize,
    /// Steps spent in the current location.
    pub time_in_loc: usize,
    /// Episode clock at which the agent begins moving.
    pub start_time: usize,
    /// Agents currently at `loc_id`, this agent included.
    pub population: usize,
    pub checkinable: bool,
    pub dest_loc: usize,
    pub prev_loc: usize,
    pub last_action: usize,
    /// Episode clock of this observation.
    pub clock: usize,
}

/// Number of raw schema fields written to disk.
pub const RAW_FIELDS: usize = 7;

impl AgentState {
    /// Raw schema fields in file order (location id and clock travel separately).
    pub fn raw_fields(&self) -> [f64; RAW_FIELDS] {
        [
            self.time_in_loc as f64,
            self.start_time as f64,
            self.population as f64,
            f64::from(u8::from(self.checkinable)),
            self.dest_loc as f64,
            self.prev_loc as f64,
            self.last_action as f64,
        ]
    }

    pub fn from_raw_fields(loc_id: usize, clock: usize, raw: &[f64]) -> Option<Self> {
        if raw.len() != RAW_FIELDS {
            return None;
        }
        let as_count = |v: f64| (v >= 0.0 && v.fract() == 0.0 && v.is_finite()).then_some(v as usize);
        Some(Self {
            loc_id,
            clock,
            time_in_loc: as_count(raw[0])?,
            start_time: as_count(raw[1])?,
            population: as_count(raw[2])?,
            checkinable: match as_count(raw[3])? {
                0 => false,
                1 => true,
                _ => return None,
            },
            dest_loc: as_count(raw[4])?,
            prev_loc: as_count(raw[5])?,
            last_action: as_count(raw[6])?,
        })
    }
}

/// `(s, a, g, s')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: AgentState,
    pub action: Action,
    /// Temporal constraint on the unit scale.
    pub constraint: f64,
    pub next_state: AgentState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub agent_id: usize,
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    /// `records[i].next_state == records[i + 1].state` for all i.
    pub fn is_chained(&self) -> bool {
        self.records.windows(2).all(|w| w[0].next_state == w[1].state)
    }

    /// States `s⁰ … sᵀ`, including the final next-state.
    pub fn states(&self) -> Vec<&AgentState> {
        let mut out: Vec<&AgentState> = self.records.iter().map(|r| &r.state).collect();
        if let Some(last) = self.records.last() {
            out.push(&last.next_state);
        }
        out
    }
}

/// Maps a dwell of `steps` onto the unit interval, clamped to `[ε, 1−ε]`.
pub fn rescale_duration(steps: usize, max_steps: usize) -> Result<f64> {
    if max_steps == 0 {
        return Err(Error::OutOfRange {
            what: "max_steps",
            detail: "must be positive".into(),
        });
    }
    if steps > max_steps {
        return Err(Error::OutOfRange {
            what: "duration",
            detail: format!("{steps} > max_steps {max_steps}"),
        });
    }
    Ok((steps as f64 / max_steps as f64).clamp(DURATION_EPS, 1.0 - DURATION_EPS))
}

/// Inverse of [`rescale_duration`], rounded to whole steps.
pub fn unscale_duration(g: f64, max_steps: usize) -> usize {
    (g.clamp(0.0, 1.0) * max_steps as f64).round() as usize
}

/// How network inputs are normalized for one environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub kind: EnvKind,
    /// Vocabulary size `l`.
    pub n_locations: usize,
    pub n_agents: usize,
    pub max_steps: usize,
    /// Grid width in cells (grid-park only; 0 otherwise).
    pub grid_width: usize,
    pub grid_height: usize,
    pub n_actions: usize,
}

impl FeatureSchema {
    pub fn feature_dim(&self) -> usize {
        self.kind.feature_dim()
    }

    fn count(&self, n: usize) -> f64 {
        n as f64 / self.n_agents.max(1) as f64
    }

    fn time(&self, t: usize) -> f64 {
        t as f64 / self.max_steps.max(1) as f64
    }

    fn loc(&self, id: usize) -> f64 {
        id as f64 / self.n_locations.max(1) as f64
    }

    /// Scaled feature vector `o` of width [`EnvKind::feature_dim`].
    pub fn encode(&self, s: &AgentState) -> Vec<f64> {
        match self.kind {
            EnvKind::GridPark => {
                let w = self.grid_width.max(1);
                let (x, y) = (s.loc_id % w, s.loc_id / w);
                vec![
                    self.time(s.time_in_loc),
                    self.time(s.start_time),
                    self.count(s.population),
                    f64::from(u8::from(s.checkinable)),
                    (x as f64 + 0.5) / w as f64,
                    (y as f64 + 0.5) / self.grid_height.max(1) as f64,
                ]
            }
            EnvKind::RoadNet => {
                let mut v = vec![
                    self.time(s.time_in_loc),
                    self.time(s.start_time),
                    self.count(s.population),
                    self.loc(s.dest_loc),
                    self.loc(s.prev_loc),
                    f64::from(u8::from(s.loc_id == s.dest_loc)),
                    self.time(s.clock),
                ];
                let mut onehot = [0.0; road_actions::COUNT];
                if s.last_action < road_actions::COUNT {
                    onehot[s.last_action] = 1.0;
                }
                v.extend_from_slice(&onehot);
                v
            }
        }
    }

    /// Dynamics-model input `o_g = (location, clock, population)`, each scaled to ~[0, 1].
    pub fn dynamics_input(&self, loc_id: usize, clock: usize, population: usize) -> [f64; 3] {
        [self.loc(loc_id), self.time(clock), self.count(population)]
    }
}
