//! Next-location and trajectory-generation metrics, baselines, and reports.

mod protocol;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use protocol::{
    evaluate, evaluate_generation, evaluate_next_loc, policy_next_loc, test_seeds, EvalConfig, EvalTask, MethodResult, Predictor,
    K_VALUES, METHODS,
};
pub use report::{read_report, render_table, validate_report, write_report, EvalReport, ReportFile, CURVE_COLUMNS};

use crate::envsim::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::types::Trajectory;

/// Probabilities over candidate next locations, as `(loc_id, p)`.
pub type LocDist = Vec<(usize, f64)>;

/// Zero-based position of `truth` when candidates are sorted by probability,
/// highest first, ties to the lower id. `None` when `truth` is not a candidate.
pub fn rank_of(dist: &[(usize, f64)], truth: usize) -> Option<usize> {
    let (_, p) = *dist.iter().find(|(l, _)| *l == truth)?;
    Some(dist.iter().filter(|&&(l, q)| q > p || (q == p && l < truth)).count())
}

/// Whether `truth` is among the `k` most probable candidates; `None` when
/// it is not a candidate at all.
pub fn acc_at_k(dist: &[(usize, f64)], truth: usize, k: usize) -> Result<Option<bool>> {
    if k == 0 {
        return Err(Error::OutOfRange {
            what: "k",
            detail: "must be at least 1".into(),
        });
    }
    Ok(rank_of(dist, truth).map(|r| r < k))
}

/// Hit rates at several cut-offs over a test set.
#[derive(Clone, Debug, PartialEq)]
pub struct AccAccumulator {
    ks: Vec<usize>,
    hits: Vec<usize>,
    pub total: usize,
    /// Predictions whose truth was outside the candidate set (counted as misses).
    pub missing: usize,
}

impl AccAccumulator {
    pub fn new(ks: &[usize]) -> Result<Self> {
        if ks.contains(&0) {
            return Err(Error::OutOfRange {
                what: "k",
                detail: "must be at least 1".into(),
            });
        }
        Ok(Self {
            ks: ks.to_vec(),
            hits: vec![0; ks.len()],
            total: 0,
            missing: 0,
        })
    }

    pub fn add(&mut self, dist: &[(usize, f64)], truth: usize) {
        self.total += 1;
        match rank_of(dist, truth) {
            Some(r) => {
                for (h, &k) in self.hits.iter_mut().zip(&self.ks) {
                    if r < k {
                        *h += 1;
                    }
                }
            }
            None => self.missing += 1,
        }
    }

    /// `(k, rate)` pairs; empty sets give rate 0.
    pub fn rates(&self) -> Vec<(usize, f64)> {
        self.ks
            .iter()
            .zip(&self.hits)
            .map(|(&k, &h)| (k, if self.total == 0 { 0.0 } else { h as f64 / self.total as f64 }))
            .collect()
    }
}

fn check_aligned(generated: &[Vec<(f64, f64)>], truth: &[Vec<(f64, f64)>]) -> Result<()> {
    if generated.len() != truth.len() {
        return Err(Error::OutOfRange {
            what: "trajectories",
            detail: format!("{} generated for {} true", generated.len(), truth.len()),
        });
    }
    for (i, (g, t)) in generated.iter().zip(truth).enumerate() {
        if g.len() != t.len() {
            return Err(Error::OutOfRange {
                what: "trajectory length",
                detail: format!("agent {i}: {} generated points for {} true", g.len(), t.len()),
            });
        }
    }
    Ok(())
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Mean Euclidean distance over every agent and step.
pub fn ade(generated: &[Vec<(f64, f64)>], truth: &[Vec<(f64, f64)>]) -> Result<f64> {
    check_aligned(generated, truth)?;
    let (mut total, mut n) = (0.0, 0usize);
    for (g, t) in generated.iter().zip(truth) {
        total += g.iter().zip(t).map(|(a, b)| dist(*a, *b)).sum::<f64>();
        n += g.len();
    }
    if n == 0 {
        return Err(Error::Empty("trajectory points"));
    }
    Ok(total / n as f64)
}

/// Mean distance between final points.
pub fn fde(generated: &[Vec<(f64, f64)>], truth: &[Vec<(f64, f64)>]) -> Result<f64> {
    check_aligned(generated, truth)?;
    let finals: Vec<f64> = generated
        .iter()
        .zip(truth)
        .filter_map(|(g, t)| Some(dist(*g.last()?, *t.last()?)))
        .collect();
    if finals.is_empty() {
        return Err(Error::Empty("trajectory points"));
    }
    Ok(finals.iter().sum::<f64>() / finals.len() as f64)
}

/// Coordinates of the location reached after each record.
pub fn trajectory_points(cfg: &EnvConfig, traj: &Trajectory) -> Result<Vec<(f64, f64)>> {
    traj.records.iter().map(|r| cfg.loc_coordinates(r.next_state.loc_id)).collect()
}

/// Uniform distribution over a location's candidates.
pub fn uniform_over(cfg: &EnvConfig, loc: usize) -> Result<LocDist> {
    let c = cfg.candidates(loc)?;
    let p = 1.0 / c.len() as f64;
    Ok(c.into_iter().map(|l| (l, p)).collect())
}

pub fn random_walk_predict(env: &Env, agent: usize) -> Result<LocDist> {
    let loc = env.observe(agent)?.loc_id;
    uniform_over(env.config(), loc)
}

/// First-order transition counts between locations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MarkovModel {
    pub counts: BTreeMap<usize, BTreeMap<usize, usize>>,
}

impl MarkovModel {
    /// `P(ℓ' | ℓ)`, or `None` for a source never observed.
    pub fn row(&self, from: usize) -> Option<LocDist> {
        let row = self.counts.get(&from)?;
        let total: usize = row.values().sum();
        Some(row.iter().map(|(&l, &c)| (l, c as f64 / total as f64)).collect())
    }

    pub fn prob(&self, from: usize, to: usize) -> Option<f64> {
        self.row(from).map(|r| r.iter().find(|(l, _)| *l == to).map_or(0.0, |(_, p)| *p))
    }
}

pub fn markov_fit(trajectories: &[Trajectory]) -> Result<MarkovModel> {
    let mut m = MarkovModel::default();
    for t in trajectories {
        for r in &t.records {
            *m.counts.entry(r.state.loc_id).or_default().entry(r.next_state.loc_id).or_default() += 1;
        }
    }
    if m.counts.is_empty() {
        return Err(Error::Empty("Markov corpus"));
    }
    Ok(m)
}

/// Transition probabilities over `loc`'s candidates (unobserved ones at 0),
/// uniform when `loc` was never a source.
pub fn markov_predict(model: &MarkovModel, cfg: &EnvConfig, loc: usize) -> Result<LocDist> {
    let cands = cfg.candidates(loc)?;
    match model.counts.get(&loc) {
        Some(row) if cands.iter().any(|c| row.contains_key(c)) => {
            let total: usize = cands.iter().filter_map(|c| row.get(c)).sum();
            Ok(cands
                .into_iter()
                .map(|c| (c, row.get(&c).copied().unwrap_or(0) as f64 / total as f64))
                .collect())
        }
        _ => uniform_over(cfg, loc),
    }
}

#[cfg(test)]
mod tests;
