use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::road_actions;

/// Out-degree cap including "stay".
pub const MAX_CANDIDATES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Road {
    /// `(action, successor road)` pairs; "stay" is implicit.
    pub successors: Vec<(usize, usize)>,
    /// Steps to traverse the road when empty.
    pub base_travel_time: usize,
    /// Segment midpoint in metres.
    pub midpoint: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadNetConfig {
    pub roads: Vec<Road>,
    /// Extra steps per agent already on a road when another enters.
    pub congestion_factor: f64,
    #[serde(default)]
    pub max_start_delay: usize,
    pub n_agents: usize,
    pub max_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

impl RoadNetConfig {
    /// Directed roads between neighbouring intersections of an `nx × ny` lattice
    /// with `spacing` metres between intersections.
    pub fn lattice(nx: usize, ny: usize, spacing: f64, base_travel_time: usize) -> Self {
        let node = |i: usize, j: usize| j * nx + i;
        let pos = |n: usize| ((n % nx) as f64 * spacing, (n / nx) as f64 * spacing);
        let mut edges = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if i + 1 < nx {
                    edges.push((node(i, j), node(i + 1, j)));
                    edges.push((node(i + 1, j), node(i, j)));
                }
                if j + 1 < ny {
                    edges.push((node(i, j), node(i, j + 1)));
                    edges.push((node(i, j + 1), node(i, j)));
                }
            }
        }
        let heading = |(u, v): (usize, usize)| {
            let (ux, uy) = pos(u);
            let (vx, vy) = pos(v);
            let sign = |d: f64| (d > 0.0) as i64 - (d < 0.0) as i64;
            (sign(vx - ux), sign(vy - uy))
        };
        let roads = edges
            .iter()
            .map(|&(u, v)| {
                let h = heading((u, v));
                let mut successors: Vec<(usize, usize)> = edges
                    .iter()
                    .enumerate()
                    .filter(|(_, &(a, _))| a == v)
                    .map(|(id, &(_, w))| {
                        let hw = heading((v, w));
                        let action = if w == u {
                            road_actions::U_TURN
                        } else if hw == h {
                            road_actions::STRAIGHT
                        } else if hw == (-h.1, h.0) {
                            road_actions::LEFT
                        } else {
                            road_actions::RIGHT
                        };
                        (action, id)
                    })
                    .collect();
                successors.sort();
                let (ux, uy) = pos(u);
                let (vx, vy) = pos(v);
                Road {
                    successors,
                    base_travel_time,
                    midpoint: [(ux + vx) / 2.0, (uy + vy) / 2.0],
                }
            })
            .collect();
        Self {
            roads,
            congestion_factor: 0.5,
            max_start_delay: 20,
            n_agents: 8,
            max_steps: 150,
            seed: 0,
        }
    }

    /// 3×3 lattice, 24 directed roads.
    pub fn smoke() -> Self {
        Self::lattice(3, 3, 200.0, 2)
    }

    pub fn n_locations(&self) -> usize {
        self.roads.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.roads.is_empty() {
            return Err(Error::config("roads", "need at least one road"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps", "must be positive"));
        }
        if !(self.congestion_factor >= 0.0) {
            return Err(Error::config("congestion_factor", "must be non-negative"));
        }
        for (r, road) in self.roads.iter().enumerate() {
            let key = |f: &str| format!("roads[{r}].{f}");
            if road.successors.is_empty() {
                return Err(Error::config(key("successors"), "every road needs a successor"));
            }
            if road.successors.len() + 1 > MAX_CANDIDATES {
                return Err(Error::config(key("successors"), "out-degree exceeds 4 moves plus stay"));
            }
            let mut seen = HashSet::new();
            for &(a, s) in &road.successors {
                if a >= road_actions::STAY {
                    return Err(Error::config(key("successors"), format!("action {a} is not a move")));
                }
                if !seen.insert(a) {
                    return Err(Error::config(key("successors"), format!("action {a} listed twice")));
                }
                if s >= self.roads.len() {
                    return Err(Error::config(key("successors"), format!("unknown road {s}")));
                }
            }
        }
        Ok(())
    }

    pub fn successor(&self, road: usize, action: usize) -> Option<usize> {
        self.roads[road]
            .successors
            .iter()
            .find(|(a, _)| *a == action)
            .map(|&(_, s)| s)
    }

    /// Travel-time constraint on entering `road` with `occupants` already on it.
    pub fn travel_time(&self, road: usize, occupants: usize) -> usize {
        self.roads[road].base_travel_time + (self.congestion_factor * occupants as f64).ceil() as usize
    }

    /// `next_hop[dest][road]` = action toward `dest` along a shortest
    /// base-travel-time path, `None` if unreachable or already there.
    pub fn next_hops(&self) -> Vec<Vec<Option<usize>>> {
        let n = self.roads.len();
        let mut preds: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (r, road) in self.roads.iter().enumerate() {
            for &(a, s) in &road.successors {
                preds[s].push((r, a));
            }
        }
        (0..n)
            .map(|dest| {
                // reverse Dijkstra: cost of leaving r = base time of r
                let mut dist = vec![usize::MAX; n];
                let mut hop = vec![None; n];
                let mut heap = BinaryHeap::new();
                dist[dest] = 0;
                heap.push(std::cmp::Reverse((0usize, dest)));
                while let Some(std::cmp::Reverse((d, v))) = heap.pop() {
                    if d > dist[v] {
                        continue;
                    }
                    for &(u, a) in &preds[v] {
                        let nd = d + self.roads[u].base_travel_time.max(1);
                        let better = nd < dist[u] || (nd == dist[u] && hop[u].is_some_and(|h| a < h));
                        if better && u != dest {
                            dist[u] = nd;
                            hop[u] = Some(a);
                            heap.push(std::cmp::Reverse((nd, u)));
                        }
                    }
                }
                hop
            })
            .collect()
    }
}
