use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::grad_check;
use crate::types::EnvKind;

fn schema() -> FeatureSchema {
    FeatureSchema {
        kind: EnvKind::GridPark,
        n_locations: 36,
        n_agents: 4,
        max_steps: 100,
        grid_width: 6,
        grid_height: 6,
        n_actions: 11,
    }
}

fn small_arch() -> ArchConfig {
    ArchConfig {
        embed_dim: 4,
        feature_width: 3,
        recurrent_units: 3,
        head_hidden: vec![5],
        window: 3,
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn state(loc: usize, t: usize, pop: usize) -> AgentState {
    AgentState {
        loc_id: loc,
        time_in_loc: t,
        population: pop,
        clock: t,
        ..Default::default()
    }
}

fn windows() -> Vec<Vec<AgentState>> {
    vec![
        vec![state(0, 0, 1), state(0, 1, 2), state(7, 0, 1)],
        vec![state(14, 3, 4), state(14, 4, 4)],
        vec![state(35, 9, 2)],
    ]
}

fn batch(dims: &NetDims) -> WindowBatch {
    let w = windows();
    let refs: Vec<&[AgentState]> = w.iter().map(|v| v.as_slice()).collect();
    dims.batch(&schema(), &refs).unwrap()
}

fn to_autodiff(e: Error) -> crate::autodiff::AutodiffError {
    match e {
        Error::Autodiff(a) => a,
        other => panic!("{other}"),
    }
}

fn road_schema() -> FeatureSchema {
    FeatureSchema {
        kind: EnvKind::RoadNet,
        n_locations: 10,
        n_agents: 1,
        max_steps: 10,
        grid_width: 0,
        grid_height: 0,
        n_actions: 5,
    }
}

#[test]
fn embedding_blocks() {
    let dims = NetDims::new(&schema(), ArchConfig::default());
    let net = PolicyNet::new(dims, false, &mut rng(0));
    assert_eq!(net.embed_observation(&schema(), &state(3, 0, 0)).unwrap().len(), 100);
    assert!(matches!(net.embed_observation(&schema(), &state(36, 0, 0)), Err(Error::UnknownLocation(36))));
    // road features do not depend on loc_id away from the destination
    let road = PolicyNet::new(NetDims::new(&road_schema(), ArchConfig::default()), false, &mut rng(0));
    let at = |loc| AgentState {
        loc_id: loc,
        dest_loc: 9,
        time_in_loc: 2,
        ..Default::default()
    };
    let a = road.embed_observation(&road_schema(), &at(3)).unwrap();
    let b = road.embed_observation(&road_schema(), &at(4)).unwrap();
    assert_ne!(a[..50], b[..50]);
    assert_eq!(a[50..], b[50..]);
}

#[test]
fn zero_features_give_relu_of_bias() {
    let schema = road_schema();
    let dims = NetDims::new(&schema, small_arch());
    let net = PolicyNet::new(dims, false, &mut rng(1));
    // road state at a non-destination with last_action outside the one-hot range
    let s = AgentState {
        loc_id: 2,
        dest_loc: 0,
        last_action: 99,
        ..Default::default()
    };
    assert!(schema.encode(&s).iter().all(|&v| v == 0.0));
    let e = net.embed_observation(&schema, &s).unwrap();
    let bias = net.params.get(net.trunk.feat.bias);
    let expected: Vec<f64> = bias.data().iter().map(|b| b.max(0.0)).collect();
    assert_eq!(&e[4..], &expected[..]);
}

#[test]
fn encoding_is_deterministic_and_order_sensitive() {
    let dims = NetDims::new(&schema(), ArchConfig::default());
    let net = PolicyNet::new(dims.clone(), false, &mut rng(2));
    let b = batch(&dims);
    let h1 = net.encode(&b).unwrap();
    assert_eq!(h1, net.encode(&b).unwrap());
    assert_eq!(h1.shape(), (3, 10));
    let w = vec![state(0, 0, 1), state(1, 0, 2), state(7, 0, 3)];
    let mut r = w.clone();
    r.reverse();
    let fwd = net.encode(&dims.batch(&schema(), &[&w]).unwrap()).unwrap();
    let rev = net.encode(&dims.batch(&schema(), &[&r]).unwrap()).unwrap();
    assert_ne!(fwd, rev);
    assert!(net.encode(&dims.empty_batch()).is_err());
}

#[test]
fn full_windows_ignore_padding() {
    let dims = NetDims::new(&schema(), small_arch());
    let net = PolicyNet::new(dims.clone(), false, &mut rng(3));
    let w = vec![state(1, 0, 1), state(2, 0, 1), state(3, 0, 1)];
    let longer = [vec![state(20, 5, 3)], w.clone()].concat();
    let a = net.encode(&dims.batch(&schema(), &[&w]).unwrap()).unwrap();
    let b = net.encode(&dims.batch(&schema(), &[&longer]).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_head_is_uniform_and_log_probs_agree() {
    let dims = NetDims::new(&schema(), ArchConfig::default());
    let mut net = PolicyNet::new(dims.clone(), false, &mut rng(4));
    let b = batch(&dims);
    let g = [0.1, 0.5, 0.9];
    let p = net.action_probs(&b, &g).unwrap();
    for i in 0..3 {
        assert!((p.row_slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.row_slice(i).iter().all(|&x| x > 0.0));
    }
    let acts: Vec<Action> = (0..3).map(|i| Action(i * 4)).collect();
    let lp = net.log_probs(&b, &g, &acts).unwrap();
    for i in 0..3 {
        assert!((lp[i].exp() - p.get(i, acts[i].0)).abs() < 1e-12);
    }
    net.zero_head();
    let lp = net.log_probs(&b, &g, &acts).unwrap();
    assert!(lp.iter().all(|&l| (l + 11f64.ln()).abs() < 1e-12));
    assert!(net.log_probs(&b, &g, &[Action(11), Action(0), Action(0)]).is_err());
}

#[test]
fn g_changes_the_action_distribution() {
    let dims = NetDims::new(&schema(), ArchConfig::default());
    let mut changed = 0;
    for seed in 0..100 {
        let net = PolicyNet::new(dims.clone(), false, &mut rng(seed));
        let b = batch(&dims).select(&[0]);
        let p1 = net.action_probs(&b, &[0.1]).unwrap();
        let p2 = net.action_probs(&b, &[0.9]).unwrap();
        if p1.data().iter().zip(p2.data()).any(|(a, b)| a != b) {
            changed += 1;
        }
    }
    assert!(changed >= 99);
}

#[test]
fn sampling_follows_probabilities() {
    let p = [0.1, 0.6, 0.3];
    let mut r = rng(5);
    let n = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        counts[sample_action(&p, &mut r).unwrap().0] += 1;
    }
    for (c, q) in counts.iter().zip(p) {
        assert!((*c as f64 / n as f64 - q).abs() < 0.01);
    }
    assert!(sample_action(&[f64::NAN, 1.0], &mut r).is_err());
}

#[test]
fn policy_log_prob_gradient_check() {
    let dims = NetDims::new(&schema(), small_arch());
    let net = PolicyNet::new(dims.clone(), true, &mut rng(6));
    let b = batch(&dims);
    let g = [0.2, 0.4, 0.7];
    let err = grad_check(&net.params, 1e-6, |tape, bound| {
        let out = net.forward(tape, bound, &b, &g).map_err(to_autodiff)?;
        let picked = tape.gather(out.log_probs, &[1, 8, 3])?;
        let (a, bb) = net.beta_node(tape, bound, out.h_r).map_err(to_autodiff)?;
        let ab = tape.add(a, bb)?;
        let t = tape.add(picked, ab)?;
        Ok(tape.sum(t))
    })
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

fn disc_batch(dims: &NetDims, actions: &[usize], g: &[f64]) -> DiscBatch {
    DiscBatch {
        windows: batch(dims),
        actions: actions.iter().map(|&a| Action(a)).collect(),
        g: g.to_vec(),
    }
}

#[test]
fn zeroed_discriminator_scores_half() {
    let dims = NetDims::new(&schema(), ArchConfig::default());
    let mut d = DiscriminatorNet::new(dims.clone(), &mut rng(7));
    let e = disc_batch(&dims, &[0, 1, 2], &[0.1, 0.2, 0.3]);
    let s = d.scores(&e).unwrap();
    assert!(s.iter().all(|&x| x > 0.0 && x < 1.0));
    d.zero_head();
    assert!(d.scores(&e).unwrap().iter().all(|&x| x == 0.5));
    assert!((d.loss(&e, &e).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    assert!(d.loss(&e, &DiscBatch::default()).is_err());
}

#[test]
fn discriminator_loss_gradient_check() {
    let dims = NetDims::new(&schema(), small_arch());
    let d = DiscriminatorNet::new(dims.clone(), &mut rng(8));
    let e = disc_batch(&dims, &[0, 1, 2], &[0.1, 0.2, 0.3]);
    let g = disc_batch(&dims, &[8, 9, 10], &[0.6, 0.5, 0.4]);
    let err = grad_check(&d.params, 1e-6, |tape, bound| d.loss_node(tape, bound, &e, &g).map_err(to_autodiff)).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn discriminator_learns_to_separate() {
    let dims = NetDims::new(&schema(), ArchConfig::default());
    let mut d = DiscriminatorNet::new(dims.clone(), &mut rng(9));
    let e = disc_batch(&dims, &[0, 0, 0], &[0.1, 0.1, 0.1]);
    let g = disc_batch(&dims, &[10, 10, 10], &[0.9, 0.9, 0.9]);
    let mut adam = Adam::new(1e-2, d.params.numel());
    let first = d.loss(&e, &g).unwrap();
    for _ in 0..5 {
        d.update(&mut adam, &e, &g).unwrap();
    }
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(d.scores(&e).unwrap()) > mean(d.scores(&g).unwrap()));
    for _ in 0..200 {
        d.update(&mut adam, &e, &g).unwrap();
    }
    let last = d.loss(&e, &g).unwrap();
    assert!(last > first && last < 0.0 && last > -0.05, "{first} -> {last}");
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dims = NetDims::new(&schema(), small_arch());
    let p = PolicyNet::new(dims.clone(), true, &mut rng(10));
    p.save(&dir.path().join("p.json")).unwrap();
    let back = PolicyNet::load(&dir.path().join("p.json")).unwrap();
    assert!(back.is_joint());
    assert_eq!(back.dims, dims);
    let b = batch(&dims);
    assert_eq!(back.action_probs(&b, &[0.1; 3]).unwrap(), p.action_probs(&b, &[0.1; 3]).unwrap());
    let d = DiscriminatorNet::new(dims, &mut rng(11));
    d.save(&dir.path().join("d.json")).unwrap();
    assert!(PolicyNet::load(&dir.path().join("d.json")).is_err());
    let dback = DiscriminatorNet::load(&dir.path().join("d.json")).unwrap();
    assert_eq!(dback.params.fingerprint(), d.params.fingerprint());
}
