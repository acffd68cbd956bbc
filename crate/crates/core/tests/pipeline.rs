use std::path::Path;
use std::sync::Arc;

use proptest::prelude::*;

use movesd::envsim::{audit_demonstrations, generate_demonstrations, Env, EnvConfig, GridParkConfig, RoadNetConfig};
use movesd::evalbench::{acc_at_k, ade, fde, EvalTask};
use movesd::experiment::{run_experiment, ExperimentConfig};
use movesd::gailtrain::TrainOptions;
use movesd::io::{read_trajectories_from, write_trajectories_to};
use movesd::types::Action;

fn tiny() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml");
    ExperimentConfig::load(&path).unwrap()
}

fn worlds() -> Vec<EnvConfig> {
    let mut grid = GridParkConfig::smoke();
    grid.max_steps = 40;
    let mut road = RoadNetConfig::smoke();
    road.max_steps = 40;
    vec![EnvConfig::GridPark(grid), EnvConfig::RoadNet(road)]
}

#[test]
fn tiny_experiment_is_reproducible() {
    let cfg = tiny().with_seed(4);
    let a = run_experiment(&cfg, TrainOptions::default(), EvalTask::Both).unwrap();
    let b = run_experiment(&cfg, TrainOptions::default(), EvalTask::Both).unwrap();
    assert_eq!(a.trained.log, b.trained.log);
    assert_eq!(a.report, b.report);
    assert_eq!(a.trained.log.len(), cfg.train.iterations);
    let other = run_experiment(&tiny().with_seed(5), TrainOptions::default(), EvalTask::Both).unwrap();
    assert_ne!(a.trained.log, other.trained.log);
}

#[test]
fn demonstrations_replay_and_round_trip() {
    for cfg in worlds() {
        let demos = generate_demonstrations(&cfg, 2).unwrap();
        assert_eq!(demos.len(), 2 * cfg.n_agents());
        assert!(audit_demonstrations(&cfg, &demos).unwrap().is_clean());
        let mut buf = Vec::new();
        write_trajectories_to(&mut buf, &demos).unwrap();
        assert_eq!(read_trajectories_from(buf.as_slice()).unwrap(), demos);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_actions_keep_agents_on_the_map(seed in any::<u64>(), picks in prop::collection::vec(0usize..11, 40 * 4)) {
        for cfg in worlds() {
            let n_actions = cfg.n_actions();
            let mut env = Env::reset_with_seed(Arc::new(cfg.clone()), seed).unwrap();
            let mut t = 0;
            while !env.is_done() {
                let before = env.observe_all();
                let actions: Vec<Action> =
                    (0..env.n_agents()).map(|i| Action(picks[(t * 4 + i) % picks.len()] % n_actions)).collect();
                env.step(&actions).unwrap();
                for (b, a) in before.iter().zip(env.observe_all()) {
                    prop_assert!(a.loc_id < cfg.n_locations());
                    prop_assert!(cfg.candidates(b.loc_id).unwrap().contains(&a.loc_id));
                    prop_assert_eq!(a.clock, b.clock + 1);
                }
                t += 1;
            }
            prop_assert_eq!(env.clock(), cfg.max_steps());
        }
    }

    #[test]
    fn acc_at_k_is_monotone_in_k(probs in prop::collection::vec(0.0f64..1.0, 1..8), pick in any::<prop::sample::Index>()) {
        let dist: Vec<(usize, f64)> = probs.iter().copied().enumerate().collect();
        let truth = pick.index(dist.len());
        let hits: Vec<bool> = (1..=dist.len()).map(|k| acc_at_k(&dist, truth, k).unwrap().unwrap()).collect();
        prop_assert!(hits.windows(2).all(|w| !w[0] || w[1]));
        prop_assert!(hits[dist.len() - 1]);
    }

    #[test]
    fn displacement_errors_vanish_on_identity(pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..10)) {
        let t = vec![pts.clone(), pts];
        prop_assert_eq!(ade(&t, &t).unwrap(), 0.0);
        prop_assert_eq!(fde(&t, &t).unwrap(), 0.0);
    }
}
