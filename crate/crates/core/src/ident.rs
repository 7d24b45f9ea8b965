//! Training by simulation-error minimization.
//!
//! The loss of a batch is the mean of `‖ỹ_t − y_t‖²` over trajectories and
//! over `t ∈ [skip, T)`. Each trajectory is recorded on its own tape, so
//! forward/backward passes can run in parallel; the per-trajectory
//! gradients are combined by a fixed pairwise reduction and the result is
//! identical with or without threads.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::autodiff::{pairwise_sum, Tape, Var};
use crate::linalg::DenseMatrix;
use crate::lpvmodel::{LpvModel, ModelError};
use crate::seeds;

const STREAM_X0_TRAIN: u64 = 1;
const STREAM_X0_VAL: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

#[derive(Debug, Error)]
pub enum IdentError {
    #[error("burn-in skip {skip} must be shorter than the trajectory length {len}")]
    SkipTooLong { skip: usize, len: usize },
    #[error("trajectories in one batch must share their length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state blew up at step {step} of trajectory {trajectory} in epoch {epoch}")]
    NonFiniteState { epoch: usize, trajectory: usize, step: usize },
    #[error("reference output channel {channel} has zero spread")]
    DegenerateReference { channel: usize },
    #[error("empty data set")]
    EmptyData,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One measured trajectory: `u` is `T × n_u`, `p` is `T × n_p`, `y` is `T × n_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub u: DenseMatrix,
    pub p: DenseMatrix,
    pub y: DenseMatrix,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.u.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.rows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    Zero,
    /// Uniform on `[−1, 1]^n_x`, redrawn per trajectory and epoch.
    RandomUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Trajectories per optimizer step; `None` means the whole set.
    pub batch_size: Option<usize>,
    pub skip: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub initial_state: InitialState,
    /// Run per-trajectory passes on the rayon pool. Results are identical
    /// either way.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 20,
            batch_size: None,
            skip: 10,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            initial_state: InitialState::RandomUniform,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> Adam {
        Adam {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<DenseMatrix>,
    pub v: Vec<DenseMatrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[DenseMatrix]) -> Self {
        let zeros: Vec<DenseMatrix> = params.iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [DenseMatrix], grads: &[DenseMatrix], state: &mut AdamState, adam: &Adam) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    assert_eq!(params.len(), state.m.len(), "optimizer state does not match the parameters");
    state.step += 1;
    let c1 = 1.0 - adam.beta1.powi(state.step as i32);
    let c2 = 1.0 - adam.beta2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        assert_eq!(p.shape(), g.shape(), "gradient shape mismatch");
        let p = p.as_mut_slice();
        let m = m.as_mut_slice();
        let v = v.as_mut_slice();
        for (i, &gi) in g.as_slice().iter().enumerate() {
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * gi;
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= adam.lr * mh / (vh.sqrt() + adam.eps);
        }
    }
}

fn check_batch<M: LpvModel>(model: &M, batch: &[&Trajectory], x0: &[Vec<f64>], skip: usize) -> Result<usize, IdentError> {
    let first = batch.first().ok_or(IdentError::EmptyData)?;
    let len = first.len();
    if skip >= len {
        return Err(IdentError::SkipTooLong { skip, len });
    }
    let dims = model.dims();
    for tr in batch {
        if tr.len() != len {
            return Err(IdentError::LengthMismatch(len, tr.len()));
        }
        if tr.y.rows() != len || tr.p.rows() != len || tr.y.cols() != dims.n_y {
            return Err(IdentError::DimensionMismatch(format!(
                "trajectory has y {}x{}, p {} rows; model has n_y = {}",
                tr.y.rows(),
                tr.y.cols(),
                tr.p.rows(),
                dims.n_y
            )));
        }
    }
    if x0.len() != batch.len() {
        return Err(IdentError::DimensionMismatch("one initial state per trajectory".into()));
    }
    Ok(len)
}

/// `Σ_{t≥skip} ‖ỹ_t − y_t‖²` for one recorded trajectory, or the blow-up step.
fn residual_energy<'t>(
    model: &impl LpvModel,
    tape: &'t Tape,
    tr: &Trajectory,
    x0: &[f64],
    skip: usize,
) -> Result<(Var<'t>, Vec<Var<'t>>), (Option<usize>, IdentError)> {
    let rec = model.record(tape, x0, &tr.u, &tr.p).map_err(|e| (None, e.into()))?;
    if let Some(step) = rec.blowup {
        return Err((Some(step), ModelError::NonFiniteState { step }.into()));
    }
    let pred = Var::vcat(&rec.y[skip..]);
    let n_y = tr.y.cols();
    // Row-major order of the data block matches the time-major stacking of `pred`.
    let target = DenseMatrix::column_vector(tr.y.block(skip, 0, tr.len() - skip, n_y).as_slice());
    let r = pred - tape.leaf(target);
    Ok((r.square_sum(), rec.params))
}

/// The batch loss recorded on a single tape, with the parameter leaves.
pub fn sim_loss<'t, M: LpvModel>(
    tape: &'t Tape,
    model: &M,
    batch: &[&Trajectory],
    x0: &[Vec<f64>],
    skip: usize,
) -> Result<(Var<'t>, Vec<Vec<Var<'t>>>), IdentError> {
    let len = check_batch(model, batch, x0, skip)?;
    let scale = 1.0 / (batch.len() * (len - skip)) as f64;
    let mut total: Option<Var<'t>> = None;
    let mut params = Vec::new();
    for (i, (tr, x)) in batch.iter().zip(x0).enumerate() {
        let (e, p) = residual_energy(model, tape, tr, x, skip).map_err(|(step, err)| match step {
            Some(step) => IdentError::NonFiniteState {
                epoch: 0,
                trajectory: i,
                step,
            },
            None => err,
        })?;
        total = Some(match total {
            Some(t) => t + e,
            None => e,
        });
        params.push(p);
    }
    Ok((total.expect("non-empty batch").scale(scale), params))
}

/// Loss value and its gradient for a batch, one tape per trajectory.
pub fn loss_and_gradient<M: LpvModel>(
    model: &M,
    batch: &[&Trajectory],
    x0: &[Vec<f64>],
    skip: usize,
    parallel: bool,
) -> Result<(f64, Vec<DenseMatrix>), IdentError> {
    let len = check_batch(model, batch, x0, skip)?;
    let scale = 1.0 / (batch.len() * (len - skip)) as f64;
    let one = |(i, (tr, x)): (usize, (&&Trajectory, &Vec<f64>))| -> Result<(f64, Vec<DenseMatrix>), IdentError> {
        let tape = Tape::new();
        let (e, params) = residual_energy(model, &tape, tr, x, skip).map_err(|(step, err)| match step {
            Some(step) => IdentError::NonFiniteState {
                epoch: 0,
                trajectory: i,
                step,
            },
            None => err,
        })?;
        let loss = e.scale(scale);
        let value = loss.scalar_value();
        let grads = tape.backward(loss);
        Ok((value, params.iter().map(|p| grads.wrt(*p)).collect()))
    };
    let results: Vec<Result<(f64, Vec<DenseMatrix>), IdentError>> = if parallel {
        par_map(batch.iter().zip(x0).enumerate().collect(), &one)
    } else {
        batch.iter().zip(x0).enumerate().map(one).collect()
    };
    let mut values = Vec::with_capacity(results.len());
    let mut grads = Vec::with_capacity(results.len());
    for r in results {
        let (v, g) = r?;
        values.push(v);
        grads.push(g);
    }
    let loss = pairwise_sum(values.into_iter().map(|v| vec![DenseMatrix::filled(1, 1, v)]).collect())
        .expect("non-empty batch")[0][(0, 0)];
    Ok((loss, pairwise_sum(grads).expect("non-empty batch")))
}

#[cfg(feature = "parallel")]
fn par_map<T: Send, R: Send>(items: Vec<T>, f: &(impl Fn(T) -> R + Sync)) -> Vec<R> {
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Send, R: Send>(items: Vec<T>, f: &(impl Fn(T) -> R + Sync)) -> Vec<R> {
    items.into_iter().map(f).collect()
}

/// Loss only, for validation.
pub fn loss_value<M: LpvModel>(
    model: &M,
    data: &[Trajectory],
    x0: &[Vec<f64>],
    skip: usize,
    parallel: bool,
) -> Result<f64, IdentError> {
    let batch: Vec<&Trajectory> = data.iter().collect();
    let len = check_batch(model, &batch, x0, skip)?;
    let scale = 1.0 / (batch.len() * (len - skip)) as f64;
    let one = |(i, (tr, x)): (usize, (&&Trajectory, &Vec<f64>))| -> Result<f64, IdentError> {
        let tape = Tape::new();
        let (e, _) = residual_energy(model, &tape, tr, x, skip).map_err(|(step, err)| match step {
            Some(step) => IdentError::NonFiniteState {
                epoch: 0,
                trajectory: i,
                step,
            },
            None => err,
        })?;
        Ok(e.scalar_value() * scale)
    };
    let values: Vec<Result<f64, IdentError>> = if parallel {
        par_map(batch.iter().zip(x0).enumerate().collect(), &one)
    } else {
        batch.iter().zip(x0).enumerate().map(one).collect()
    };
    let values = values.into_iter().collect::<Result<Vec<f64>, _>>()?;
    Ok(pairwise_sum(values.into_iter().map(|v| vec![DenseMatrix::filled(1, 1, v)]).collect())
        .expect("non-empty")[0][(0, 0)])
}

/// Initial states for a set of trajectories.
pub fn initial_states(policy: InitialState, n_x: usize, count: usize, seed: u64, stream: u64, epoch: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| match policy {
            InitialState::Zero => vec![0.0; n_x],
            InitialState::RandomUniform => {
                let mut rng = seeds::rng(seeds::derive(seed, stream, epoch), 0, i as u64);
                (0..n_x).map(|_| rng.random_range(-1.0..=1.0)).collect()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the batch losses seen during the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,wall_ms\n");
        for e in &self.epochs {
            writeln!(s, "{},{:e},{:e},{:e}", e.epoch, e.train_loss, e.val_loss, e.wall_ms).unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, IdentError> {
        let bad = |l: &str| IdentError::DimensionMismatch(format!("bad report line `{l}`"));
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("epoch,train_loss,val_loss,wall_ms") {
            return Err(bad("header"));
        }
        let mut epochs = Vec::new();
        for l in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad(l));
            }
            epochs.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad(l))?,
                train_loss: f[1].parse().map_err(|_| bad(l))?,
                val_loss: f[2].parse().map_err(|_| bad(l))?,
                wall_ms: f[3].parse().map_err(|_| bad(l))?,
            });
        }
        let best_epoch = epochs
            .iter()
            .filter(|e| e.val_loss.is_finite())
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .map(|e| e.epoch);
        Ok(Self { epochs, best_epoch })
    }
}

/// Trains `model` in place and leaves it at the best-validation epoch.
///
/// `on_epoch` sees the model after every epoch, before the best checkpoint
/// is restored.
pub fn train<M: LpvModel>(
    model: &mut M,
    train_set: &[Trajectory],
    val_set: &[Trajectory],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &M),
) -> Result<TrainReport, IdentError> {
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(IdentError::EmptyData);
    }
    let n_x = model.dims().n_x;
    let adam = cfg.adam();
    let mut params = model.parameters();
    let mut state = AdamState::new(&params);
    let batch_size = cfg.batch_size.unwrap_or(train_set.len()).clamp(1, train_set.len());
    let val_x0 = initial_states(cfg.initial_state, n_x, val_set.len(), cfg.seed, STREAM_X0_VAL, 0);
    let mut best: Option<(f64, usize, Vec<DenseMatrix>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let x0 = initial_states(cfg.initial_state, n_x, train_set.len(), cfg.seed, STREAM_X0_TRAIN, epoch as u64);
        if batch_size < train_set.len() {
            order.shuffle(&mut seeds::rng(cfg.seed, STREAM_SHUFFLE, epoch as u64));
        }
        let mut losses = Vec::new();
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&Trajectory> = chunk.iter().map(|&i| &train_set[i]).collect();
            let bx0: Vec<Vec<f64>> = chunk.iter().map(|&i| x0[i].clone()).collect();
            let (loss, grads) = loss_and_gradient(model, &batch, &bx0, cfg.skip, cfg.parallel).map_err(|e| match e {
                IdentError::NonFiniteState { trajectory, step, .. } => IdentError::NonFiniteState {
                    epoch,
                    trajectory: chunk[trajectory],
                    step,
                },
                e => e,
            })?;
            losses.push(loss);
            adam_step(&mut params, &grads, &mut state, &adam);
            model.set_parameters(&params);
        }
        let val_loss = match loss_value(model, val_set, &val_x0, cfg.skip, cfg.parallel) {
            Ok(v) => v,
            Err(IdentError::NonFiniteState { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            val_loss,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if val_loss.is_finite() && best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, params.clone()));
        }
        on_epoch(&record, model);
        report.epochs.push(record);
    }
    if let Some((_, epoch, p)) = best {
        model.set_parameters(&p);
        report.best_epoch = Some(epoch);
    }
    Ok(report)
}

/// Mean over channels of `RMS(ỹᵢ − yᵢ) / std(ỹᵢ)`, with the population
/// standard deviation.
pub fn nrmse(ytrue: &DenseMatrix, ypred: &DenseMatrix) -> Result<f64, IdentError> {
    if ytrue.shape() != ypred.shape() {
        return Err(IdentError::DimensionMismatch(format!(
            "ytrue is {:?}, ypred is {:?}",
            ytrue.shape(),
            ypred.shape()
        )));
    }
    if ytrue.rows() == 0 || ytrue.cols() == 0 {
        return Err(IdentError::EmptyData);
    }
    let t = ytrue.rows() as f64;
    let mut total = 0.0;
    for ch in 0..ytrue.cols() {
        let truth = ytrue.column(ch);
        let pred = ypred.column(ch);
        let mean = truth.iter().sum::<f64>() / t;
        let std = (truth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t).sqrt();
        if !(std >= 1e-12) {
            return Err(IdentError::DegenerateReference { channel: ch });
        }
        let rms = (truth.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t).sqrt();
        total += rms / std;
    }
    Ok(total / ytrue.cols() as f64)
}
