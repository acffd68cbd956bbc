use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::grid_actions;

/// Metres per grid cell side.
pub const CELL_METERS: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Facility {
    pub loc_id: usize,
    /// Agents served per step.
    pub service_rate: f64,
    #[serde(default = "yes")]
    pub checkinable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParkConfig {
    pub width: usize,
    pub height: usize,
    pub facilities: Vec<Facility>,
    /// Cells where agents appear at reset; cycled over agents.
    #[serde(default = "default_entries")]
    pub entries: Vec<usize>,
    /// Dwell needed before leaving an ordinary cell.
    #[serde(default)]
    pub walk_steps: usize,
    /// Each agent starts moving at a uniform clock in `0..=max_start_delay`.
    #[serde(default)]
    pub max_start_delay: usize,
    pub n_agents: usize,
    pub max_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_actions")]
    pub n_actions: usize,
}

fn default_entries() -> Vec<usize> {
    vec![0]
}

fn default_actions() -> usize {
    grid_actions::COUNT
}

impl GridParkConfig {
    /// 6×6 park, one queued facility in the far corner, four agents.
    pub fn smoke() -> Self {
        Self {
            width: 6,
            height: 6,
            facilities: vec![Facility {
                loc_id: 35,
                service_rate: 0.25,
                checkinable: true,
            }],
            entries: vec![0],
            walk_steps: 1,
            max_start_delay: 20,
            n_agents: 4,
            max_steps: 150,
            seed: 0,
            n_actions: grid_actions::COUNT,
        }
    }

    /// Smoke park with a slow facility so queue waits dominate.
    pub fn long_wait() -> Self {
        Self {
            facilities: vec![Facility {
                loc_id: 35,
                service_rate: 0.08,
                checkinable: true,
            }],
            ..Self::smoke()
        }
    }

    /// 100×100 cells: 500 m × 500 m at 5 m pitch, vocabulary 10 000.
    pub fn full_scale() -> Self {
        Self {
            width: 100,
            height: 100,
            facilities: [(2020, 0.5), (2080, 0.2), (5050, 0.1), (8020, 0.3), (8080, 0.25)]
                .into_iter()
                .map(|(loc_id, service_rate)| Facility {
                    loc_id,
                    service_rate,
                    checkinable: true,
                })
                .collect(),
            entries: vec![0, 99],
            walk_steps: 3,
            max_start_delay: 300,
            n_agents: 200,
            max_steps: 3600,
            seed: 0,
            n_actions: grid_actions::COUNT,
        }
    }

    pub fn n_locations(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("width", "grid dimensions must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps", "must be positive"));
        }
        if self.n_actions < grid_actions::RESERVED {
            return Err(Error::config("n_actions", "grid-park needs at least 10 actions"));
        }
        let n = self.n_locations();
        for (i, f) in self.facilities.iter().enumerate() {
            if f.loc_id >= n {
                return Err(Error::config(format!("facilities[{i}].loc_id"), "outside the grid"));
            }
            if !(f.service_rate > 0.0) {
                return Err(Error::config(format!("facilities[{i}].service_rate"), "must be positive"));
            }
        }
        if self.entries.is_empty() {
            return Err(Error::config("entries", "need at least one entry cell"));
        }
        if let Some(i) = self.entries.iter().position(|&e| e >= n) {
            return Err(Error::config(format!("entries[{i}]"), "outside the grid"));
        }
        Ok(())
    }

    pub fn xy(&self, loc: usize) -> (usize, usize) {
        (loc % self.width, loc / self.width)
    }

    pub fn facility(&self, loc: usize) -> Option<&Facility> {
        self.facilities.iter().find(|f| f.loc_id == loc)
    }

    /// Cell reached by `action` from `loc`, if it is an in-grid move.
    pub fn successor(&self, loc: usize, action: usize) -> Option<usize> {
        let &(dx, dy) = grid_actions::OFFSETS.get(action)?;
        let (x, y) = self.xy(loc);
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height)
            .then(|| ny as usize * self.width + nx as usize)
    }

    pub fn centroid(&self, loc: usize) -> (f64, f64) {
        let (x, y) = self.xy(loc);
        ((x as f64 + 0.5) * CELL_METERS, (y as f64 + 0.5) * CELL_METERS)
    }

    /// Move along a shortest 8-connected path from `from` to `to`.
    pub fn step_toward(&self, from: usize, to: usize) -> Option<usize> {
        if from == to {
            return None;
        }
        let (fx, fy) = self.xy(from);
        let (tx, ty) = self.xy(to);
        let d = ((tx as i64 - fx as i64).signum(), (ty as i64 - fy as i64).signum());
        grid_actions::OFFSETS.iter().position(|&o| o == d)
    }

    /// Queue wait `ceil(queue_len / service_rate)` at a facility.
    pub fn queue_wait(&self, facility: &Facility, queue_len: usize) -> usize {
        (queue_len as f64 / facility.service_rate).ceil() as usize
    }
}
