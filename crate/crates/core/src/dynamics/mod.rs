//! The learned temporal-constraint model: an MLP mapping `o_g` (location,
//! clock, local population) to the shape parameters of a Beta distribution
//! over the rescaled dwell time.

mod beta;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use beta::{beta_ll_grad, beta_log_pdf, beta_mean, beta_variance, sample_constraint};

use crate::autodiff::{load_checkpoint, save_checkpoint, Activation, Adam, Bound, Matrix, Mlp, NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::types::{rescale_duration, FeatureSchema, Trajectory, DURATION_EPS};

/// Width of `o_g`.
pub const DYNAMICS_INPUTS: usize = 3;
/// Added after the softplus so shape parameters stay strictly positive.
pub const SHAPE_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsMode {
    /// Beta head trained by maximum likelihood.
    #[default]
    Beta,
    /// Single sigmoid output trained by squared error.
    Deterministic,
}

/// Predicted distribution of the constraint for one input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConstraintDist {
    Beta { alpha: f64, beta: f64 },
    Point(f64),
}

impl ConstraintDist {
    pub fn mean(&self) -> f64 {
        match *self {
            ConstraintDist::Beta { alpha, beta } => beta_mean(alpha, beta),
            ConstraintDist::Point(g) => g,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<f64> {
        match *self {
            ConstraintDist::Beta { alpha, beta } => sample_constraint(alpha, beta, rng),
            ConstraintDist::Point(g) => Ok(g),
        }
    }
}

/// Turns raw `[n, 2]` outputs into `(α, β)` nodes of shape `[n, 1]`.
pub fn beta_head(tape: &mut Tape, raw: NodeId) -> Result<(NodeId, NodeId)> {
    let a = tape.slice_cols(raw, 0, 1)?;
    let b = tape.slice_cols(raw, 1, 2)?;
    let a = tape.softplus(a);
    let b = tape.softplus(b);
    Ok((tape.add_scalar(a, SHAPE_FLOOR), tape.add_scalar(b, SHAPE_FLOOR)))
}

/// Per-row Beta log-likelihood `[n, 1]` of the labels `g` under `(α, β)`.
pub fn beta_log_likelihood(tape: &mut Tape, alpha: NodeId, beta: NodeId, g: &[f64]) -> Result<NodeId> {
    if let Some(&bad) = g.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::OutOfRange {
            what: "g",
            detail: format!("{bad} is outside (0, 1)"),
        });
    }
    let ln_g = tape.constant(Matrix::column(&g.iter().map(|x| x.ln()).collect::<Vec<_>>()));
    let ln_1mg = tape.constant(Matrix::column(&g.iter().map(|x| (-x).ln_1p()).collect::<Vec<_>>()));
    let sum = tape.add(alpha, beta)?;
    let norm = tape.lgamma(sum)?;
    let la = tape.lgamma(alpha)?;
    let lb = tape.lgamma(beta)?;
    let am1 = tape.add_scalar(alpha, -1.0);
    let bm1 = tape.add_scalar(beta, -1.0);
    let t1 = tape.mul(am1, ln_g)?;
    let t2 = tape.mul(bm1, ln_1mg)?;
    let ll = tape.add(t1, t2)?;
    let ll = tape.add(ll, norm)?;
    let ll = tape.sub(ll, la)?;
    Ok(tape.sub(ll, lb)?)
}

#[derive(Clone, Debug)]
pub struct DynamicsModel {
    pub mode: DynamicsMode,
    pub params: ParamStore,
    mlp: Mlp,
}

#[derive(Serialize, Deserialize)]
struct Dims {
    mode: DynamicsMode,
    hidden: Vec<usize>,
}

impl DynamicsModel {
    /// `3 → hidden… → 2` (or `→ 1` in deterministic mode) with relu hidden layers.
    pub fn new(mode: DynamicsMode, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut widths = vec![DYNAMICS_INPUTS];
        widths.extend_from_slice(hidden);
        widths.push(Self::outputs(mode));
        let mut params = ParamStore::new();
        let mlp = Mlp::new(&mut params, "dynamics", &widths, Activation::Relu, rng);
        Self { mode, params, mlp }
    }

    fn outputs(mode: DynamicsMode) -> usize {
        match mode {
            DynamicsMode::Beta => 2,
            DynamicsMode::Deterministic => 1,
        }
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.mlp.layers[..self.mlp.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    /// Zeroes the output layer so every input maps to the same prediction.
    pub fn zero_output(&mut self) {
        let out = *self.mlp.output();
        out.zero(&mut self.params);
    }

    fn input_node(tape: &mut Tape, inputs: &[[f64; DYNAMICS_INPUTS]]) -> NodeId {
        let data = inputs.iter().flatten().copied().collect();
        tape.constant(Matrix::from_vec(inputs.len(), DYNAMICS_INPUTS, data))
    }

    /// Mean training objective over `examples`, recorded on `tape`:
    /// Beta log-likelihood, or negated squared error in deterministic mode.
    pub fn objective_node(&self, tape: &mut Tape, bound: &Bound, examples: &[DynamicsExample]) -> Result<NodeId> {
        if examples.is_empty() {
            return Err(Error::Empty("dynamics batch"));
        }
        let inputs: Vec<_> = examples.iter().map(|e| e.o_g).collect();
        let labels: Vec<f64> = examples.iter().map(|e| e.g).collect();
        let x = Self::input_node(tape, &inputs);
        let raw = self.mlp.forward(tape, bound, x)?;
        match self.mode {
            DynamicsMode::Beta => {
                let (a, b) = beta_head(tape, raw)?;
                let ll = beta_log_likelihood(tape, a, b, &labels)?;
                Ok(tape.mean(ll))
            }
            DynamicsMode::Deterministic => {
                let pred = tape.sigmoid(raw);
                let y = tape.constant(Matrix::column(&labels));
                let d = tape.sub(pred, y)?;
                let sq = tape.mul(d, d)?;
                let m = tape.mean(sq);
                Ok(tape.scale(m, -1.0))
            }
        }
    }

    pub fn predict_batch(&self, inputs: &[[f64; DYNAMICS_INPUTS]]) -> Result<Vec<ConstraintDist>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let x = Self::input_node(&mut tape, inputs);
        let raw = self.mlp.forward(&mut tape, &bound, x)?;
        let out = match self.mode {
            DynamicsMode::Beta => {
                let (a, b) = beta_head(&mut tape, raw)?;
                let (a, b) = (tape.value(a), tape.value(b));
                (0..inputs.len())
                    .map(|i| ConstraintDist::Beta {
                        alpha: a.get(i, 0),
                        beta: b.get(i, 0),
                    })
                    .collect::<Vec<_>>()
            }
            DynamicsMode::Deterministic => {
                let p = tape.sigmoid(raw);
                let p = tape.value(p);
                (0..inputs.len())
                    .map(|i| ConstraintDist::Point(p.get(i, 0).clamp(DURATION_EPS, 1.0 - DURATION_EPS)))
                    .collect()
            }
        };
        let finite = out.iter().all(|d| match *d {
            ConstraintDist::Beta { alpha, beta } => alpha.is_finite() && beta.is_finite(),
            ConstraintDist::Point(g) => g.is_finite(),
        });
        if !finite {
            return Err(Error::NonFinite("dynamics output".into()));
        }
        Ok(out)
    }

    pub fn predict(&self, o_g: &[f64]) -> Result<ConstraintDist> {
        let input: [f64; DYNAMICS_INPUTS] = o_g.try_into().map_err(|_| Error::OutOfRange {
            what: "o_g",
            detail: format!("expected {DYNAMICS_INPUTS} values, got {}", o_g.len()),
        })?;
        Ok(self.predict_batch(&[input])?[0])
    }

    /// `(α, β)` for one input; only defined in Beta mode.
    pub fn predict_constraint_params(&self, o_g: &[f64]) -> Result<(f64, f64)> {
        match self.predict(o_g)? {
            ConstraintDist::Beta { alpha, beta } => Ok((alpha, beta)),
            ConstraintDist::Point(_) => Err(Error::OutOfRange {
                what: "dynamics mode",
                detail: "the deterministic model has no shape parameters".into(),
            }),
        }
    }

    /// Mean objective over the whole dataset.
    pub fn objective(&self, examples: &[DynamicsExample]) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let out = self.objective_node(&mut tape, &bound, examples)?;
        Ok(tape.scalar(out)?)
    }

    fn objective_grad(&self, examples: &[DynamicsExample]) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let out = self.objective_node(&mut tape, &bound, examples)?;
        let value = tape.scalar(out)?;
        let grads = tape.backward(out)?;
        Ok((value, self.params.gather_grad(&bound, &grads)))
    }

    /// Gradient-ascent epochs over shuffled minibatches; returns the mean
    /// minibatch objective of each epoch.
    pub fn fit_epochs(
        &mut self,
        examples: &[DynamicsExample],
        epochs: usize,
        batch: usize,
        adam: &mut Adam,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        if examples.is_empty() {
            return Err(Error::Empty("dynamics dataset"));
        }
        let batch = if batch == 0 { examples.len() } else { batch.min(examples.len()) };
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            if batch < examples.len() {
                order.shuffle(rng);
            }
            let mut total = 0.0;
            let mut count = 0;
            for chunk in order.chunks(batch) {
                let mb: Vec<DynamicsExample> = chunk.iter().map(|&i| examples[i]).collect();
                let (value, grad) = self.objective_grad(&mb)?;
                if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFinite("dynamics objective".into()));
                }
                adam.ascend(&mut self.params, &grad);
                total += value * mb.len() as f64;
                count += mb.len();
            }
            history.push(total / count as f64);
        }
        Ok(history)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let dims = serde_json::to_value(Dims {
            mode: self.mode,
            hidden: self.hidden(),
        })
        .map_err(|e| Error::NonFinite(e.to_string()))?;
        Ok(save_checkpoint(path, "dynamics", dims, &self.params)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (network, dims, params) = load_checkpoint(path)?;
        if network != "dynamics" {
            return Err(Error::config("network", format!("expected dynamics checkpoint, found {network}")));
        }
        let dims: Dims = serde_json::from_value(dims).map_err(|e| Error::config("dims", e.to_string()))?;
        let mlp = Mlp::find(&params, "dynamics", dims.hidden.len() + 1, Activation::Relu)?;
        if mlp.layers[0].inputs != DYNAMICS_INPUTS || mlp.output().outputs != Self::outputs(dims.mode) {
            return Err(Error::config("dims", "dynamics checkpoint has unexpected layer sizes"));
        }
        Ok(Self {
            mode: dims.mode,
            params,
            mlp,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsExample {
    pub o_g: [f64; DYNAMICS_INPUTS],
    pub g: f64,
}

/// A maximal run of records at one location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stay {
    /// Index of the first record of the run.
    pub start: usize,
    pub len: usize,
    pub loc_id: usize,
}

pub fn stays(traj: &Trajectory) -> Vec<Stay> {
    let mut out: Vec<Stay> = Vec::new();
    for (i, r) in traj.records.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.loc_id == r.state.loc_id => s.len += 1,
            _ => out.push(Stay {
                start: i,
                len: 1,
                loc_id: r.state.loc_id,
            }),
        }
    }
    out
}

/// One example per stay: `o_g` at stay entry, `g` the rescaled run length.
/// A run cut off by the end of the episode is kept at its observed length.
pub fn build_dynamics_dataset(schema: &FeatureSchema, trajectories: &[Trajectory]) -> Result<Vec<DynamicsExample>> {
    let mut out = Vec::new();
    for t in trajectories {
        for s in stays(t) {
            let entry = &t.records[s.start].state;
            out.push(DynamicsExample {
                o_g: schema.dynamics_input(entry.loc_id, entry.clock, entry.population),
                g: rescale_duration(s.len.min(schema.max_steps), schema.max_steps)?,
            });
        }
    }
    Ok(out)
}

pub fn write_dynamics_dataset(path: &Path, examples: &[DynamicsExample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in examples {
        serde_json::to_writer(&mut w, e).map_err(|err| Error::io(path, err.into()))?;
        w.write_all(b"\n").map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dynamics_dataset(path: &Path) -> Result<Vec<DynamicsExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let parse = |message: String| Error::Parse { line: i + 1, message };
        let line = line.map_err(|e| parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub mode: DynamicsMode,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    /// Minibatch size; 0 trains full-batch.
    pub batch: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            mode: DynamicsMode::Beta,
            hidden: vec![50, 50],
            epochs: 50,
            lr: 3e-4,
            batch: 128,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PretrainReport {
    pub epoch_objective: Vec<f64>,
    /// Mean objective of the returned model over the full dataset.
    pub final_objective: f64,
}

pub fn pretrain_dynamics(examples: &[DynamicsExample], cfg: &PretrainConfig) -> Result<(DynamicsModel, PretrainReport)> {
    if examples.is_empty() {
        return Err(Error::Empty("dynamics dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DynamicsModel::new(cfg.mode, &cfg.hidden, &mut rng);
    let mut adam = Adam::new(cfg.lr, model.params.numel());
    let epoch_objective = model.fit_epochs(examples, cfg.epochs, cfg.batch, &mut adam, &mut rng)?;
    let final_objective = model.objective(examples)?;
    Ok((
        model,
        PretrainReport {
            epoch_objective,
            final_objective,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::types::{Action, AgentState, EnvKind, StepRecord};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_output_gives_softplus_zero() {
        let mut m = DynamicsModel::new(DynamicsMode::Beta, &[50, 50], &mut rng(0));
        m.zero_output();
        let expected = 2f64.ln() + SHAPE_FLOOR;
        for o in [[0.0, 0.0, 0.0], [0.3, 0.9, 0.1]] {
            let (a, b) = m.predict_constraint_params(&o).unwrap();
            assert!((a - expected).abs() < 1e-12 && (b - expected).abs() < 1e-12);
            assert!((a - 0.6933).abs() < 1e-4);
        }
        assert!(m.predict(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn outputs_are_positive_for_random_inputs() {
        let m = DynamicsModel::new(DynamicsMode::Beta, &[50, 50], &mut rng(1));
        let mut r = rng(2);
        let inputs: Vec<[f64; 3]> = (0..1000)
            .map(|_| [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)])
            .collect();
        for d in m.predict_batch(&inputs).unwrap() {
            let ConstraintDist::Beta { alpha, beta } = d else { panic!() };
            assert!(alpha > 0.0 && beta > 0.0);
        }
    }

    #[test]
    fn tape_likelihood_matches_closed_form_gradient() {
        let mut tape = Tape::new();
        let a = tape.variable(Matrix::column(&[0.7, 2.5, 4.0]));
        let b = tape.variable(Matrix::column(&[1.3, 0.6, 9.0]));
        let g = [0.2, 0.55, 0.91];
        let ll = beta_log_likelihood(&mut tape, a, b, &g).unwrap();
        let s = tape.sum(ll);
        let grads = tape.backward(s).unwrap();
        for (i, &gi) in g.iter().enumerate() {
            let (av, bv) = (tape.value(a).get(i, 0), tape.value(b).get(i, 0));
            assert!((tape.value(ll).get(i, 0) - beta_log_pdf(gi, av, bv).unwrap()).abs() < 1e-12);
            let (da, db) = beta_ll_grad(gi, av, bv).unwrap();
            assert!((grads.get(a).unwrap().get(i, 0) - da).abs() < 1e-8);
            assert!((grads.get(b).unwrap().get(i, 0) - db).abs() < 1e-8);
        }
    }

    #[test]
    fn objective_gradient_check() {
        let m = DynamicsModel::new(DynamicsMode::Beta, &[8, 8], &mut rng(3));
        let data: Vec<DynamicsExample> = (0..6)
            .map(|i| DynamicsExample {
                o_g: [0.1 * i as f64, 0.5, 0.2 + 0.05 * i as f64],
                g: 0.1 + 0.12 * i as f64,
            })
            .collect();
        let err = grad_check(&m.params, 1e-6, |tape, bound| {
            m.objective_node(tape, bound, &data).map_err(|e| match e {
                Error::Autodiff(a) => a,
                other => panic!("{other}"),
            })
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    fn constant_beta_data(n: usize, alpha: f64, beta: f64, seed: u64) -> Vec<DynamicsExample> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| DynamicsExample {
                o_g: [0.5, 0.5, 0.5],
                g: sample_constraint(alpha, beta, &mut r).unwrap(),
            })
            .collect()
    }

    #[test]
    fn pretraining_fits_constant_duration() {
        let data = vec![
            DynamicsExample {
                o_g: [0.2, 0.4, 0.25],
                g: 0.3,
            };
            256
        ];
        let cfg = PretrainConfig {
            epochs: 150,
            lr: 3e-3,
            batch: 64,
            ..Default::default()
        };
        let (m, report) = pretrain_dynamics(&data, &cfg).unwrap();
        let d = m.predict(&[0.2, 0.4, 0.25]).unwrap();
        assert!((d.mean() - 0.3).abs() < 0.05, "mean {}", d.mean());
        let ConstraintDist::Beta { alpha, beta } = d else { panic!() };
        assert!(beta_variance(alpha, beta) < 0.01);
        assert!(report.final_objective > 0.0);
    }

    #[test]
    fn full_batch_objective_is_monotone_and_deterministic() {
        let data = constant_beta_data(500, 2.0, 5.0, 4);
        let cfg = PretrainConfig {
            epochs: 40,
            lr: 1e-3,
            batch: 0,
            ..Default::default()
        };
        let (m1, r1) = pretrain_dynamics(&data, &cfg).unwrap();
        assert!(r1.epoch_objective.windows(2).all(|w| w[1] >= w[0]), "{:?}", r1.epoch_objective);
        let (m2, _) = pretrain_dynamics(&data, &cfg).unwrap();
        assert_eq!(m1.params.fingerprint(), m2.params.fingerprint());
        assert!(pretrain_dynamics(&[], &cfg).is_err());
    }

    #[test]
    fn deterministic_mode_regresses_the_mean() {
        let data: Vec<DynamicsExample> = (0..200)
            .map(|i| DynamicsExample {
                o_g: [0.5, 0.5, 0.5],
                g: if i % 2 == 0 { 0.2 } else { 0.4 },
            })
            .collect();
        let cfg = PretrainConfig {
            mode: DynamicsMode::Deterministic,
            epochs: 100,
            lr: 3e-3,
            batch: 50,
            ..Default::default()
        };
        let (m, _) = pretrain_dynamics(&data, &cfg).unwrap();
        let d = m.predict(&[0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(d, ConstraintDist::Point(_)));
        assert!((d.mean() - 0.3).abs() < 0.02, "{}", d.mean());
        assert!(m.predict_constraint_params(&[0.5, 0.5, 0.5]).is_err());
    }

    fn walk(locs: &[usize]) -> Trajectory {
        let state = |i: usize| AgentState {
            loc_id: locs[i],
            clock: i,
            population: 1,
            ..Default::default()
        };
        let n = locs.len() - 1;
        Trajectory {
            agent_id: 0,
            records: (0..n)
                .map(|i| StepRecord {
                    state: state(i),
                    action: Action(8),
                    constraint: 0.5,
                    next_state: state(i + 1),
                })
                .collect(),
        }
    }

    fn schema(max_steps: usize) -> FeatureSchema {
        FeatureSchema {
            kind: EnvKind::GridPark,
            n_locations: 10,
            n_agents: 2,
            max_steps,
            grid_width: 5,
            grid_height: 2,
            n_actions: 11,
        }
    }

    #[test]
    fn dataset_run_lengths() {
        assert!(build_dynamics_dataset(&schema(10), &[]).unwrap().is_empty());
        let still = walk(&[3; 11]);
        let d = build_dynamics_dataset(&schema(10), &[still]).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].g, 1.0 - DURATION_EPS);
        let t = walk(&[1, 1, 2, 2, 2, 3, 3, 3, 3, 3, 4]);
        let d = build_dynamics_dataset(&schema(10), &[t]).unwrap();
        assert_eq!(d.len(), 3);
        let g: Vec<f64> = d.iter().map(|e| e.g).collect();
        assert_eq!(g, vec![0.2, 0.3, 0.5]);
        assert_eq!(d[1].o_g, [0.2, 0.2, 0.5]);
    }

    #[test]
    fn checkpoint_and_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DynamicsModel::new(DynamicsMode::Beta, &[4, 6], &mut rng(8));
        m.save(&dir.path().join("dyn.json")).unwrap();
        let back = DynamicsModel::load(&dir.path().join("dyn.json")).unwrap();
        assert_eq!(back.hidden(), vec![4, 6]);
        assert_eq!(back.params.fingerprint(), m.params.fingerprint());
        let data = constant_beta_data(5, 2.0, 3.0, 1);
        write_dynamics_dataset(&dir.path().join("d.jsonl"), &data).unwrap();
        assert_eq!(read_dynamics_dataset(&dir.path().join("d.jsonl")).unwrap(), data);
    }

    #[test]
    fn recovers_beta_2_5() {
        let data = constant_beta_data(10_000, 2.0, 5.0, 0);
        let (m, _) = pretrain_dynamics(&data, &PretrainConfig::default()).unwrap();
        let (a, b) = m.predict_constraint_params(&[0.5, 0.5, 0.5]).unwrap();
        assert!((a - 2.0).abs() / 2.0 < 0.1 && (b - 5.0).abs() / 5.0 < 0.1, "({a}, {b})");
    }
}
