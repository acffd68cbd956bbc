use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
demo_episodes = 2

[train]
iterations = 2
pi_updates = 2
d_updates = 2
batch = 16

[train.env]
kind = "grid-park"
width = 6
height = 6
facilities = [{ loc_id = 35, service_rate = 0.25, checkinable = true }]
walk_steps = 1
max_start_delay = 5
n_agents = 4
max_steps = 30

[train.arch]
embed_dim = 4
feature_width = 4
recurrent_units = 4
head_hidden = [8]
window = 4

[train.trpo]
value_hidden = [8]

[train.pretrain]
hidden = [8]
epochs = 3

[eval]
test_episodes = 1
"#;

fn movesd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_movesd"))
        .args(args)
        .env("MOVESD_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = movesd(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_demos_writes_demos_and_manifest() {
    let f = Fixture::new();
    ok(&["gen-demos", "--config", &f.s("tiny.toml"), "--out", &f.s("demos"), "--seed", "3"]);
    let demos = fs::read_to_string(f.path("demos/demos.jsonl")).unwrap();
    assert!(demos.lines().count() > 0);
    let m = json(&f.path("demos/manifest.json"));
    assert_eq!(m["command"], "gen-demos");
    assert_eq!(m["seed"], 3);
    assert!(m["config"].as_str().unwrap().contains("demo_episodes = 2"));
    let manifests = fs::read_dir(f.path("demos"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() == "manifest.json")
        .count();
    assert_eq!(manifests, 1);
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let f = Fixture::new();
    let cfg = f.s("tiny.toml");
    ok(&["gen-demos", "--config", &cfg, "--out", &f.s("demos")]);
    let demos = f.s("demos/demos.jsonl");
    ok(&["pretrain-dynamics", "--config", &cfg, "--demos", &demos, "--out", &f.s("dyn")]);
    assert!(f.path("dyn/dynamics.json").exists());
    ok(&[
        "train",
        "--config",
        &cfg,
        "--option",
        "1",
        "--demos",
        &demos,
        "--dynamics",
        &f.s("dyn/dynamics.json"),
        "--out",
        &f.s("run"),
        "--workers",
        "2",
    ]);
    assert_eq!(fs::read_to_string(f.path("run/train_log.jsonl")).unwrap().lines().count(), 2);
    ok(&["rollout", "--config", &cfg, "--checkpoint", &f.s("run"), "--out", &f.s("roll"), "--horizon", "10"]);
    let audit = json(&f.path("roll/audit.json"));
    assert!(audit["violations"].as_array().unwrap().is_empty());
    // Ten records and a closing state line per agent.
    assert_eq!(fs::read_to_string(f.path("roll/generated.jsonl")).unwrap().lines().count(), 4 * 11);
    let out = ok(&[
        "evaluate",
        "--config",
        &cfg,
        "--checkpoint",
        &f.s("run"),
        "--task",
        "gen-1000",
        "--demos",
        &demos,
        "--out",
        &f.s("eval"),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("| MoveSD |"));
    let report = json(&f.path("eval/report.json"));
    assert_eq!(report[0]["horizon_requested"], 1000);
    assert_eq!(report[0]["horizon_used"], 30 - 3);
    for m in report[0]["methods"].as_array().unwrap() {
        assert!(m["ade"].is_f64() && m["fde"].is_f64());
    }
    assert!(f.path("eval/curves.csv").exists());
    ok(&["evaluate", "--config", &cfg, "--checkpoint", &f.s("run"), "--task", "next-loc", "--out", &f.s("eval2")]);
    let next = json(&f.path("eval2/report.json"));
    assert!(next[0]["methods"][0]["acc_at_1"].is_f64());
    ok(&[
        "report",
        "--config",
        &cfg,
        "--reports",
        &f.s("eval/report.json"),
        &f.s("eval2/report.json"),
        "--log",
        &f.s("run/train_log.jsonl"),
        "--out",
        &f.s("rep"),
    ]);
    assert_eq!(json(&f.path("rep/report.json")).as_array().unwrap().len(), 2);
    let csv = fs::read_to_string(f.path("rep/curves.csv")).unwrap();
    assert!(csv.starts_with("iteration,"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn same_config_and_seed_reproduce_artifacts() {
    let f = Fixture::new();
    let cfg = f.s("tiny.toml");
    for out in ["a", "b"] {
        ok(&["train", "--config", &cfg, "--seed", "5", "--option", "2", "--out", &f.s(out)]);
    }
    for file in ["train_log.jsonl", "checkpoints/policy.json", "checkpoints/dynamics.json", "checkpoints/state.json"] {
        assert_eq!(fs::read(f.path("a").join(file)).unwrap(), fs::read(f.path("b").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn train_resumes_from_checkpoint() {
    let f = Fixture::new();
    let one = TINY.replace("iterations = 2", "iterations = 1");
    fs::write(f.path("one.toml"), one).unwrap();
    ok(&["train", "--config", &f.s("one.toml"), "--out", &f.s("part")]);
    ok(&["train", "--config", &f.s("tiny.toml"), "--out", &f.s("part"), "--resume"]);
    ok(&["train", "--config", &f.s("tiny.toml"), "--out", &f.s("full")]);
    assert_eq!(
        fs::read(f.path("part/train_log.jsonl")).unwrap(),
        fs::read(f.path("full/train_log.jsonl")).unwrap()
    );
}

#[test]
fn errors_exit_nonzero_with_useful_messages() {
    let f = Fixture::new();
    assert!(!movesd(&["frobnicate"]).status.success());
    assert!(!movesd(&[]).status.success());
    fs::write(f.path("bad.toml"), "[train]\nbogus_knob = 3\n").unwrap();
    let out = movesd(&["gen-demos", "--config", &f.s("bad.toml"), "--out", &f.s("x")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_knob"));
    let out = movesd(&["gen-demos", "--config", &f.s("missing.toml"), "--out", &f.s("x")]);
    assert!(!out.status.success());
    let out = movesd(&["train", "--out", &f.s("x"), "--resume", "--dynamics", "d.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = movesd(&["evaluate", "--out", &f.s("x"), "--checkpoint", "c", "--task", "gen-abc"]);
    assert_eq!(out.status.code(), Some(2));
    let out = movesd(&["train", "--out", &f.s("x"), "--option", "4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            movesd::experiment::ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n > 0);
}
