use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::agentnets::{ArchConfig, NetDims, PolicyNet};
use crate::dynamics::DynamicsModel;
use crate::envsim::{generate_demonstrations, GridParkConfig, RoadNetConfig};
use crate::gailtrain::{Constraints, GSampling};
use crate::types::{Action, AgentState, StepRecord};

fn state(loc_id: usize) -> AgentState {
    AgentState {
        loc_id,
        ..Default::default()
    }
}

fn record(from: usize, to: usize) -> StepRecord {
    StepRecord {
        state: state(from),
        action: Action(0),
        constraint: 0.0,
        next_state: state(to),
    }
}

#[test]
fn acc_at_k_example() {
    let dist = vec![(10, 0.5), (11, 0.3), (12, 0.2)];
    assert_eq!(acc_at_k(&dist, 11, 1).unwrap(), Some(false));
    assert_eq!(acc_at_k(&dist, 11, 3).unwrap(), Some(true));
    assert_eq!(acc_at_k(&dist, 99, 3).unwrap(), None);
    assert!(acc_at_k(&dist, 11, 0).is_err());
    let mut acc = AccAccumulator::new(&[1, 3]).unwrap();
    acc.add(&dist, 11);
    acc.add(&dist, 10);
    acc.add(&dist, 99);
    assert_eq!(acc.rates(), vec![(1, 1.0 / 3.0), (3, 2.0 / 3.0)]);
    assert_eq!(acc.missing, 1);
}

#[test]
fn ties_rank_lower_id_first() {
    let dist = vec![(4, 0.25), (2, 0.25), (7, 0.5)];
    assert_eq!(rank_of(&dist, 7), Some(0));
    assert_eq!(rank_of(&dist, 2), Some(1));
    assert_eq!(rank_of(&dist, 4), Some(2));
}

#[test]
fn acc_at_k_matches_sorting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.random_range(1..9);
        let mut ids: Vec<usize> = (0..20).collect();
        for i in 0..n {
            let j = rng.random_range(i..ids.len());
            ids.swap(i, j);
        }
        // Coarse values so ties occur.
        let dist: LocDist = ids[..n].iter().map(|&l| (l, rng.random_range(0..4) as f64 / 4.0)).collect();
        let truth = dist[rng.random_range(0..n)].0;
        let mut sorted = dist.clone();
        sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let pos = sorted.iter().position(|(l, _)| *l == truth).unwrap();
        for k in 1..=6 {
            assert_eq!(acc_at_k(&dist, truth, k).unwrap(), Some(pos < k));
        }
        if n <= 5 {
            assert_eq!(acc_at_k(&dist, truth, 5).unwrap(), Some(true));
        }
    }
}

#[test]
fn ade_fde_examples() {
    let truth = vec![vec![(0.0, 0.0), (1.0, 1.0), (2.0, 5.0)]];
    let shifted = vec![truth[0].iter().map(|(x, y)| (x + 3.0, y + 4.0)).collect()];
    assert!((ade(&shifted, &truth).unwrap() - 5.0).abs() < 1e-12);
    assert!((fde(&shifted, &truth).unwrap() - 5.0).abs() < 1e-12);
    let mut last = truth.clone();
    last[0][2].0 += 6.0;
    assert!((ade(&last, &truth).unwrap() - 2.0).abs() < 1e-12);
    assert!((fde(&last, &truth).unwrap() - 6.0).abs() < 1e-12);
    assert!(ade(&truth, &[]).is_err());
    assert!(fde(&[vec![(0.0, 0.0)]], &truth).is_err());
    assert!(ade(&[vec![]], &[vec![]]).is_err());
}

#[test]
fn ade_fde_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let agents = rng.random_range(1..4);
        let t = rng.random_range(1..7);
        let mut pt = || (rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0));
        let a: Vec<Vec<(f64, f64)>> = (0..agents).map(|_| (0..t).map(|_| pt()).collect()).collect();
        let b: Vec<Vec<(f64, f64)>> = (0..agents).map(|_| (0..t).map(|_| pt()).collect()).collect();
        let d = |p: (f64, f64), q: (f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        let mut total = 0.0;
        for i in 0..agents {
            for j in 0..t {
                total += d(a[i][j], b[i][j]);
            }
        }
        let finals: f64 = (0..agents).map(|i| d(a[i][t - 1], b[i][t - 1])).sum();
        assert!((ade(&a, &b).unwrap() - total / (agents * t) as f64).abs() < 1e-12);
        assert!((fde(&a, &b).unwrap() - finals / agents as f64).abs() < 1e-12);
    }
}

#[test]
fn markov_example_and_fallback() {
    let t = Trajectory {
        agent_id: 0,
        records: vec![record(0, 1), record(0, 1), record(0, 2)],
    };
    let m = markov_fit(&[t]).unwrap();
    assert!((m.prob(0, 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.prob(0, 2).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(m.prob(0, 5), Some(0.0));
    assert_eq!(m.prob(3, 0), None);
    assert!(markov_fit(&[]).is_err());
    let cfg = EnvConfig::GridPark(GridParkConfig::smoke());
    let far = cfg.n_locations() - 1;
    let p = markov_predict(&m, &cfg, far).unwrap();
    assert_eq!(p, uniform_over(&cfg, far).unwrap());
    let p = markov_predict(&m, &cfg, 0).unwrap();
    assert!((p.iter().map(|(_, q)| q).sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p.iter().all(|(l, _)| cfg.candidates(0).unwrap().contains(l)));
}

#[test]
fn markov_counts_match_brute_force() {
    let cfg = EnvConfig::GridPark(GridParkConfig::smoke());
    let demos = generate_demonstrations(&cfg, 2).unwrap();
    let m = markov_fit(&demos).unwrap();
    let pairs: Vec<(usize, usize)> = demos
        .iter()
        .flat_map(|t| t.records.iter().map(|r| (r.state.loc_id, r.next_state.loc_id)))
        .collect();
    for (&from, row) in &m.counts {
        let n_from = pairs.iter().filter(|p| p.0 == from).count();
        for &to in row.keys() {
            let n = pairs.iter().filter(|&&p| p == (from, to)).count();
            assert!((m.prob(from, to).unwrap() - n as f64 / n_from as f64).abs() < 1e-12);
        }
    }
}

fn tiny_policy(cfg: &EnvConfig, joint: bool) -> PolicyNet {
    let arch = ArchConfig {
        embed_dim: 4,
        feature_width: 4,
        recurrent_units: 4,
        head_hidden: vec![8],
        window: 3,
    };
    PolicyNet::new(NetDims::new(&cfg.schema(), arch), joint, &mut ChaCha8Rng::seed_from_u64(5))
}

fn small_grid() -> EnvConfig {
    let mut g = GridParkConfig::smoke();
    g.max_steps = 25;
    g.max_start_delay = 3;
    EnvConfig::GridPark(g)
}

#[test]
fn policy_next_loc_pools_actions_over_candidates() {
    for cfg in [small_grid(), EnvConfig::RoadNet(RoadNetConfig::smoke())] {
        let policy = tiny_policy(&cfg, false);
        let dynamics = DynamicsModel::new(Default::default(), &[8], &mut ChaCha8Rng::seed_from_u64(6));
        let p = Predictor {
            policy: &policy,
            constraints: Constraints::Model(&dynamics),
            g_sampling: GSampling::PerStay,
        };
        let demos = generate_demonstrations(&cfg, 1).unwrap();
        let states: Vec<AgentState> = demos[0].records.iter().map(|r| r.state.clone()).collect();
        let hist: Vec<&[AgentState]> = (0..states.len()).map(|i| &states[..=i]).collect();
        let dists = policy_next_loc(&cfg, &p, &hist).unwrap();
        for (h, d) in hist.iter().zip(&dists) {
            let loc = h.last().unwrap().loc_id;
            assert_eq!(d.iter().map(|(l, _)| *l).collect::<Vec<_>>(), cfg.candidates(loc).unwrap());
            let total: f64 = d.iter().map(|(_, q)| q).sum();
            assert!(total > 0.0 && total <= 1.0 + 1e-12);
        }
        assert!(policy_next_loc(&cfg, &p, &[]).unwrap().is_empty());
    }
}

#[test]
fn evaluation_runs_every_method_and_round_trips() {
    let cfg = small_grid();
    let demos = generate_demonstrations(&cfg, 2).unwrap();
    let markov = markov_fit(&demos).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut baselines = Vec::new();
    for joint in [false, true] {
        let policy = tiny_policy(&cfg, joint);
        let dynamics = DynamicsModel::new(Default::default(), &[8], &mut ChaCha8Rng::seed_from_u64(6));
        let p = Predictor {
            policy: &policy,
            constraints: if joint { Constraints::Joint } else { Constraints::Model(&dynamics) },
            g_sampling: GSampling::PerStay,
        };
        let eval = EvalConfig {
            test_episodes: 2,
            horizon: 1000,
            gen_samples: 2,
            ..Default::default()
        };
        let report = evaluate(&cfg, &p, &markov, &eval, EvalTask::Both).unwrap();
        assert_eq!(report.horizon_used, cfg.max_steps() - 2);
        assert_eq!(report.t0, 2);
        assert_eq!(report, evaluate(&cfg, &p, &markov, &eval, EvalTask::Both).unwrap());
        assert_eq!(report.methods.len(), 3);
        for m in &report.methods {
            for v in [m.acc_at_1, m.acc_at_3, m.acc_at_5] {
                assert!(v.is_some_and(|x| (0.0..=1.0).contains(&x)));
            }
            assert!(m.acc_at_1 <= m.acc_at_3 && m.acc_at_3 <= m.acc_at_5);
            assert!(m.ade.is_some_and(|x| x.is_finite() && x >= 0.0));
            assert_eq!(m.n_predictions, 2 * cfg.n_agents() * (cfg.max_steps() - 2));
            assert_eq!(m.n_trajectories, 2 * 2 * cfg.n_agents());
        }
        let files = write_report(dir.path(), std::slice::from_ref(&report), None).unwrap();
        assert_eq!(read_report(&files.json).unwrap(), vec![report.clone()]);
        let table = render_table(std::slice::from_ref(&report));
        assert!(table.contains(&report.methods[0].ade.unwrap().to_string()));
        baselines.push(report.methods[1..].to_vec());
    }
    // Baseline generation does not depend on the policy being evaluated.
    assert_eq!(baselines[0], baselines[1]);
    let bad = EvalConfig {
        t0: Some(cfg.max_steps()),
        ..Default::default()
    };
    let policy = tiny_policy(&cfg, true);
    let p = Predictor {
        policy: &policy,
        constraints: Constraints::Joint,
        g_sampling: GSampling::PerStay,
    };
    assert!(evaluate_generation(&cfg, &p, &markov, &bad).is_err());
}

#[test]
fn report_schema_is_enforced() {
    let m = MethodResult {
        method: "Markov".into(),
        ade: Some(1.5),
        ..Default::default()
    };
    let r = EvalReport {
        task: EvalTask::Gen,
        env: "GridPark".into(),
        test_episodes: 1,
        t0: 0,
        horizon_requested: 10,
        horizon_used: 10,
        seed: 0,
        methods: vec![m],
    };
    let mut v = serde_json::to_value(vec![r]).unwrap();
    validate_report(&v).unwrap();
    v[0]["extra"] = 1.into();
    assert!(validate_report(&v).is_err());
    let mut v2 = v.clone();
    v2[0].as_object_mut().unwrap().remove("extra");
    v2[0]["methods"][0].as_object_mut().unwrap().remove("fde");
    assert!(validate_report(&v2).is_err());
}

#[test]
fn test_seeds_avoid_demonstration_seeds() {
    let cfg = small_grid();
    let test = test_seeds(&cfg, 5);
    let demo: Vec<u64> = (0..1000).map(|i| cfg.episode_seed(i)).collect();
    assert!(test.iter().all(|s| !demo.contains(s)));
}
