//! Trajectory JSONL: one object per state with keys
//! `{agent_id, t, loc_id, action, g, features}`.
//!
//! Each trajectory is written as its states in order. The final state of a
//! trajectory carries `"action": null, "g": null`; `features` holds the raw
//! schema fields of [`AgentState::raw_fields`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Action, AgentState, StepRecord, Trajectory};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    agent_id: usize,
    t: usize,
    loc_id: usize,
    action: Option<usize>,
    g: Option<f64>,
    features: Vec<f64>,
}

impl Line {
    fn new(agent_id: usize, s: &AgentState, step: Option<(Action, f64)>) -> Self {
        Line {
            agent_id,
            t: s.clock,
            loc_id: s.loc_id,
            action: step.map(|(a, _)| a.0),
            g: step.map(|(_, g)| g),
            features: s.raw_fields().to_vec(),
        }
    }
}

pub fn write_trajectories_to(mut w: impl Write, trajectories: &[Trajectory]) -> std::io::Result<()> {
    for traj in trajectories {
        for r in &traj.records {
            let line = Line::new(traj.agent_id, &r.state, Some((r.action, r.constraint)));
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        if let Some(last) = traj.records.last() {
            serde_json::to_writer(&mut w, &Line::new(traj.agent_id, &last.next_state, None))?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_trajectories_to(BufWriter::new(file), trajectories).map_err(|e| Error::io(path, e))
}

pub fn read_trajectories_from(r: impl BufRead) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    let mut open: Option<(usize, Vec<StepRecord>, AgentState, Action, f64)> = None;
    let mut last_line = 0;
    for (idx, text) in r.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let text = text.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let line: Line = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        let state = AgentState::from_raw_fields(line.loc_id, line.t, &line.features)
            .ok_or_else(|| parse_err("features are not valid raw schema fields".into()))?;
        let step = match (line.action, line.g) {
            (Some(a), Some(g)) => Some((Action(a), g)),
            (None, None) => None,
            _ => return Err(parse_err("action and g must both be set or both be null".into())),
        };
        let (agent_id, records) = match open.take() {
            Some((id, mut records, prev, action, g)) => {
                if id != line.agent_id {
                    return Err(parse_err(format!("agent {id} ended without a final state")));
                }
                records.push(StepRecord {
                    state: prev,
                    action,
                    constraint: g,
                    next_state: state.clone(),
                });
                (id, records)
            }
            None => (line.agent_id, Vec::new()),
        };
        match step {
            Some((a, g)) => open = Some((agent_id, records, state, a, g)),
            None => {
                if records.is_empty() {
                    return Err(parse_err("trajectory has no steps".into()));
                }
                out.push(Trajectory { agent_id, records });
            }
        }
    }
    if open.is_some() {
        return Err(Error::Parse {
            line: last_line,
            message: "file ends inside a trajectory".into(),
        });
    }
    Ok(out)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectories_from(BufReader::new(file))
}
