use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::protocol::{EvalTask, MethodResult};
use crate::error::{Error, Result};
use crate::gailtrain::IterationLog;

/// Columns of the per-iteration training curve.
pub const CURVE_COLUMNS: [&str; 8] = [
    "iteration",
    "d_loss",
    "mean_reward",
    "mean_r_judger",
    "mean_r_disc",
    "kl",
    "entropy",
    "value_loss",
];

const REPORT_KEYS: [&str; 8] = [
    "task",
    "env",
    "test_episodes",
    "t0",
    "horizon_requested",
    "horizon_used",
    "seed",
    "methods",
];

const METHOD_KEYS: [&str; 9] = [
    "method",
    "acc_at_1",
    "acc_at_3",
    "acc_at_5",
    "ade",
    "fde",
    "n_predictions",
    "missing_truth",
    "n_trajectories",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub task: EvalTask,
    pub env: String,
    pub test_episodes: usize,
    pub t0: usize,
    pub horizon_requested: usize,
    pub horizon_used: usize,
    pub seed: u64,
    pub methods: Vec<MethodResult>,
}

/// Paths written by [`write_report`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportFile {
    pub json: PathBuf,
    pub markdown: PathBuf,
    pub curves: Option<PathBuf>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| x.to_string())
}

/// Markdown table of every method, values at full precision.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(
            out,
            "## {:?} on {} ({} test episodes, t0 {}, horizon {} of {})\n",
            r.task, r.env, r.test_episodes, r.t0, r.horizon_used, r.horizon_requested
        );
        out.push_str("| method | Acc@1 | Acc@3 | Acc@5 | ADE | FDE |\n|---|---|---|---|---|---|\n");
        for m in &r.methods {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} |",
                m.method,
                cell(m.acc_at_1),
                cell(m.acc_at_3),
                cell(m.acc_at_5),
                cell(m.ade),
                cell(m.fde)
            );
        }
        out.push('\n');
    }
    out
}

fn curve_csv(log: &[IterationLog]) -> String {
    let mut out = CURVE_COLUMNS.join(",");
    out.push('\n');
    for e in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.iteration, e.d_loss, e.mean_reward, e.mean_r_judger, e.mean_r_disc, e.kl, e.entropy, e.value_loss
        );
    }
    out
}

/// Writes `report.json`, `report.md` and, when a training log is given,
/// `curves.csv` into `dir`.
pub fn write_report(dir: &Path, reports: &[EvalReport], log: Option<&[IterationLog]>) -> Result<ReportFile> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join("report.json");
    let text = serde_json::to_string_pretty(reports).map_err(parse_err)?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    let markdown = dir.join("report.md");
    fs::write(&markdown, render_table(reports)).map_err(|e| Error::io(&markdown, e))?;
    let curves = match log {
        Some(log) => {
            let p = dir.join("curves.csv");
            fs::write(&p, curve_csv(log)).map_err(|e| Error::io(&p, e))?;
            Some(p)
        }
        None => None,
    };
    Ok(ReportFile { json, markdown, curves })
}

fn parse_err(msg: impl ToString) -> Error {
    Error::Parse {
        line: 0,
        message: msg.to_string(),
    }
}

fn check_keys(obj: &serde_json::Value, keys: &[&str], what: &str) -> Result<()> {
    let map = obj.as_object().ok_or_else(|| parse_err(format!("{what} is not an object")))?;
    for k in keys {
        if !map.contains_key(*k) {
            return Err(parse_err(format!("{what} lacks key `{k}`")));
        }
    }
    if let Some(k) = map.keys().find(|k| !keys.contains(&k.as_str())) {
        return Err(parse_err(format!("{what} has unknown key `{k}`")));
    }
    Ok(())
}

/// Checks a parsed `report.json` against the documented schema.
pub fn validate_report(value: &serde_json::Value) -> Result<()> {
    let reports = value.as_array().ok_or_else(|| parse_err("report is not an array"))?;
    for r in reports {
        check_keys(r, &REPORT_KEYS, "report")?;
        for m in r["methods"].as_array().ok_or_else(|| parse_err("methods is not an array"))? {
            check_keys(m, &METHOD_KEYS, "method")?;
            for k in &METHOD_KEYS[1..6] {
                let v = &m[*k];
                if !(v.is_null() || v.as_f64().is_some_and(f64::is_finite)) {
                    return Err(parse_err(format!("method value `{k}` is not a finite number or null")));
                }
            }
        }
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<EvalReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
    validate_report(&value)?;
    serde_json::from_value(value).map_err(parse_err)
}
