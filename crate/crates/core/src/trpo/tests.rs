use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::agentnets::{sample_action, ArchConfig, NetDims};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn gae_examples() {
    let (a, r) = compute_gae(&[1.0], &[0.0], 0.8, 0.98).unwrap();
    assert_eq!((a[0], r[0]), (1.0, 1.0));
    let (a, _) = compute_gae(&[1.0, 1.0], &[0.0, 0.0], 0.8, 0.98).unwrap();
    assert!((a[0] - 1.784).abs() < 1e-12 && a[1] == 1.0);
    let rewards = [0.3, -1.0, 2.0, 0.5];
    let values = [0.1, 0.7, -0.2, 0.4];
    let (a, r) = compute_gae(&rewards, &values, 0.9, 0.0).unwrap();
    for t in 0..4 {
        let next = values.get(t + 1).copied().unwrap_or(0.0);
        assert!((a[t] - (rewards[t] + 0.9 * next - values[t])).abs() < 1e-12);
        assert!((r[t] - a[t] - values[t]).abs() < 1e-12);
    }
    let (a, _) = compute_gae(&rewards, &[0.0; 4], 1.0, 1.0).unwrap();
    for t in 0..4 {
        assert!((a[t] - rewards[t..].iter().sum::<f64>()).abs() < 1e-12);
    }
    assert!(compute_gae(&[1.0], &[0.0, 0.0], 0.8, 0.98).is_err());
}

#[test]
fn kl_examples() {
    let kl = categorical_kl(&[0.5, 0.5], &[0.9, 0.1]);
    let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
    assert!((kl - expected).abs() < 1e-12 && (kl - 0.5108).abs() < 1e-4);
    let mut r = rng(0);
    for _ in 0..1000 {
        let mut draw = || {
            let v: Vec<f64> = (0..4).map(|_| r.random_range(0.01..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let (p, q) = (draw(), draw());
        assert!(categorical_kl(&p, &q) >= 0.0);
        assert_eq!(categorical_kl(&p, &p), 0.0);
    }
}

#[allow(clippy::needless_range_loop)]
fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &bi)| [row.clone(), vec![bi]].concat()).collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

#[test]
fn conjugate_gradient_examples() {
    let b = vec![1.0, -2.0, 3.0];
    let mut calls = 0;
    let x = conjugate_gradient(
        |v| {
            calls += 1;
            Ok(v.to_vec())
        },
        &b,
        10,
        1e-12,
    )
    .unwrap();
    assert_eq!(x, b);
    assert_eq!(calls, 1);
    assert_eq!(conjugate_gradient(|v| Ok(v.to_vec()), &[0.0; 3], 10, 1e-10).unwrap(), vec![0.0; 3]);

    let mut r = rng(1);
    let n = 20;
    let q: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| q[k][i] * q[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let b: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let avp = |v: &[f64]| Ok(a.iter().map(|row| dot(row, v)).collect());
    let x = conjugate_gradient(avp, &b, 200, 1e-14).unwrap();
    let exact = solve_dense(&a, &b);
    for (xi, ei) in x.iter().zip(&exact) {
        assert!((xi - ei).abs() < 1e-6, "{xi} vs {ei}");
    }
    assert!(conjugate_gradient(|v| Ok(v.iter().map(|_| f64::NAN).collect()), &b, 5, 1e-10).is_err());
}

/// Two-action policy whose windows carry no information.
fn bandit(seed: u64) -> (PolicyNet, ValueNet, TrpoConfig) {
    let arch = ArchConfig {
        embed_dim: 2,
        feature_width: 2,
        recurrent_units: 3,
        head_hidden: vec![8],
        window: 2,
    };
    let dims = NetDims {
        arch,
        n_locations: 1,
        feature_dim: 1,
        n_actions: 2,
    };
    let cfg = TrpoConfig {
        entropy_coef: 0.0,
        value_hidden: vec![8],
        ..Default::default()
    };
    let mut r = rng(seed);
    let policy = PolicyNet::new(dims, false, &mut r);
    let value = ValueNet::new(3, &cfg, &mut r);
    (policy, value, cfg)
}

fn blank_windows(n: usize) -> WindowBatch {
    WindowBatch {
        len: 2,
        k: 1,
        locs: vec![0; 2 * n],
        feats: vec![0.0; 2 * n],
    }
}

/// A prepared buffer of `n` sampled pulls with advantage `adv(arm)`.
fn bandit_buffer(policy: &PolicyNet, n: usize, adv: impl Fn(usize) -> f64, r: &mut ChaCha8Rng) -> RolloutBuffer {
    let windows = blank_windows(n);
    let g = vec![0.5; n];
    let p = policy.action_probs(&windows, &g).unwrap();
    let actions: Vec<Action> = (0..n).map(|i| sample_action(p.row_slice(i), r).unwrap()).collect();
    let lp: Vec<f64> = actions.iter().enumerate().map(|(i, a)| p.get(i, a.0).ln()).collect();
    let mut buf = RolloutBuffer::new(2, 1);
    let rewards: Vec<f64> = actions.iter().map(|a| adv(a.0)).collect();
    buf.add_episode(&windows, &g, &actions, &lp, &rewards).unwrap();
    let mut a = rewards.clone();
    normalize(&mut a);
    buf.advantages = a;
    buf.returns = rewards;
    buf.encodings = Some(policy.encode(&buf.windows).unwrap());
    buf
}

#[test]
fn bandit_converges_within_trust_region() {
    let (mut policy, mut value, cfg) = bandit(2);
    let mut r = rng(3);
    let probe = blank_windows(1);
    let mut p0 = 0.0;
    for _ in 0..50 {
        let buf = bandit_buffer(&policy, 64, |a| if a == 0 { 1.0 } else { 0.0 }, &mut r);
        let before = policy.clone();
        let rep = trpo_step(&mut policy, &mut value, &buf, &cfg).unwrap();
        if rep.accepted {
            assert!(rep.kl <= cfg.max_kl);
            assert!(rep.surrogate_after >= rep.surrogate_before);
            assert!((mean_kl(&before, &policy, &buf).unwrap() - rep.kl).abs() < 1e-12);
        } else {
            assert_eq!(before.params.fingerprint(), policy.params.fingerprint());
        }
        assert!(rep.entropy > 0.0 && rep.entropy.is_finite());
        p0 = policy.action_probs(&probe, &[0.5]).unwrap().get(0, 0);
    }
    assert!(p0 > 0.9, "{p0}");
}

#[test]
fn zero_advantage_without_entropy_is_identity() {
    let (mut policy, mut value, cfg) = bandit(4);
    let buf = bandit_buffer(&policy, 16, |_| 0.0, &mut rng(5));
    let before = policy.params.fingerprint();
    let rep = trpo_step(&mut policy, &mut value, &buf, &cfg).unwrap();
    assert!(!rep.accepted);
    assert_eq!(policy.params.fingerprint(), before);
}

#[test]
fn unprepared_buffer_is_rejected() {
    let (mut policy, mut value, cfg) = bandit(6);
    let mut buf = bandit_buffer(&policy, 4, |a| a as f64, &mut rng(7));
    buf.encodings = None;
    assert!(trpo_step(&mut policy, &mut value, &buf, &cfg).is_err());
    let w = blank_windows(2);
    let mut fresh = RolloutBuffer::new(2, 1);
    assert!(fresh.add_episode(&w, &[0.5], &[Action(0); 2], &[0.0; 2], &[0.0; 2]).is_err());
}

#[test]
fn prepare_runs_gae_per_episode() {
    let (policy, value, cfg) = bandit(8);
    let mut buf = RolloutBuffer::new(2, 1);
    let w = blank_windows(2);
    buf.add_episode(&w, &[0.5; 2], &[Action(0); 2], &[0.0; 2], &[1.0, 0.0]).unwrap();
    buf.add_episode(&w, &[0.5; 2], &[Action(1); 2], &[0.0; 2], &[0.0, 1.0]).unwrap();
    buf.prepare(&policy, &value, &cfg).unwrap();
    assert_eq!(buf.episode_ends, vec![2, 4]);
    let v = buf.values[0];
    // identical inputs share a value, so episodes differ only through rewards
    let (a1, _) = compute_gae(&[1.0, 0.0], &[v, v], cfg.gamma, cfg.lambda).unwrap();
    let (a2, _) = compute_gae(&[0.0, 1.0], &[v, v], cfg.gamma, cfg.lambda).unwrap();
    let mut raw = [a1, a2].concat();
    normalize(&mut raw);
    for (x, y) in raw.iter().zip(&buf.advantages) {
        assert!((x - y).abs() < 1e-12);
    }
    let mean: f64 = buf.advantages.iter().sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12);
}

#[test]
fn value_net_fits_and_round_trips() {
    let cfg = TrpoConfig {
        value_epochs: 200,
        value_lr: 1e-2,
        ..Default::default()
    };
    let mut r = rng(9);
    let mut v = ValueNet::new(2, &cfg, &mut r);
    let h = Matrix::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.5], vec![0.7, -0.1]]);
    let g = [0.2, 0.5, 0.9];
    let targets = [1.0, -1.0, 0.5];
    let before: f64 = v.predict(&h, &g).unwrap().iter().zip(&targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 3.0;
    let after = v.fit(&h, &g, &targets).unwrap();
    assert!(after < before * 0.1, "{before} -> {after}");
    let dir = tempfile::tempdir().unwrap();
    v.save(&dir.path().join("v.json")).unwrap();
    let back = ValueNet::load(&dir.path().join("v.json")).unwrap();
    assert_eq!(back.predict(&h, &g).unwrap(), v.predict(&h, &g).unwrap());
    assert!(v.predict(&h, &g[..2]).is_err());
}

#[test]
fn clipped_fallback_improves_the_bandit() {
    let (mut policy, mut value, mut cfg) = bandit(10);
    cfg.optimizer = Optimizer::Clipped;
    cfg.clipped_lr = 1e-2;
    let mut r = rng(11);
    let probe = blank_windows(1);
    let start = policy.action_probs(&probe, &[0.5]).unwrap().get(0, 0);
    for _ in 0..30 {
        let buf = bandit_buffer(&policy, 64, |a| if a == 0 { 1.0 } else { 0.0 }, &mut r);
        trpo_step(&mut policy, &mut value, &buf, &cfg).unwrap();
    }
    let end = policy.action_probs(&probe, &[0.5]).unwrap().get(0, 0);
    assert!(end > start && end > 0.8, "{start} -> {end}");
}

#[test]
fn config_validation() {
    assert!(TrpoConfig::default().validate().is_ok());
    assert!(TrpoConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
    assert!(TrpoConfig { lambda: 1.5, ..Default::default() }.validate().is_err());
    assert!(TrpoConfig { max_kl: 0.0, ..Default::default() }.validate().is_err());
}
