//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export is a thin wrapper over a plain Rust function so the numerics
//! can be tested natively.

use lpvss::bench::{excitation, TrueSystem, INPUT_NOISE_VAR, N_SINES, P_BOX};
use lpvss::linalg::DenseMatrix;
use lpvss::lpvmodel::{CoeffSpec, Dims, LpvModel, LpvSsModel, MlpMode, Model};
use lpvss::verify::{empirical_gain, ProbeConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

const EPSILON: f64 = 0.01;

fn small_spec() -> CoeffSpec {
    CoeffSpec::Mlp { mode: MlpMode::PerComponent, hidden: vec![16, 16] }
}

fn random_signals(horizon: usize, n_u: usize, u_amplitude: f64, rng: &mut ChaCha8Rng) -> (DenseMatrix, DenseMatrix) {
    let u = DenseMatrix::random_uniform(horizon, n_u, -u_amplitude, u_amplitude, rng);
    let p = DenseMatrix::from_fn(horizon, P_BOX.len(), |_, j| rng.random_range(P_BOX[j].0..=P_BOX[j].1));
    (u, p)
}

/// Distances `‖x_k(t) − x_0(t)‖_𝒳` for `count` trajectories of a random
/// contracting model that share input and scheduling.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub alpha: f64,
    /// `count − 1` rows of `horizon + 1` distances.
    pub distances: Vec<Vec<f64>>,
}

pub fn convergence(n_x: usize, count: usize, horizon: usize, seed: u64) -> Result<Convergence, String> {
    if n_x == 0 || count < 2 {
        return Err("need n_x >= 1 and at least two trajectories".into());
    }
    let dims = Dims { n_x, ..TrueSystem::paper().dims() };
    let model = LpvSsModel::contracting(dims, EPSILON, &small_spec(), seed);
    let alpha = model.alpha().ok_or("contracting model has no rate")?;
    let metric = model.lyapunov().ok_or("contracting model has no metric")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u, p) = random_signals(horizon, dims.n_u, 1.0, &mut rng);
    let states = (0..count)
        .map(|_| {
            let x0: Vec<f64> = (0..n_x).map(|_| rng.random_range(-5.0..=5.0)).collect();
            model.simulate(&x0, &u, &p).map(|s| s.x).map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let distances = states[1..]
        .iter()
        .map(|x| {
            (0..=horizon)
                .map(|t| {
                    let d: Vec<f64> = x.row(t).iter().zip(states[0].row(t)).map(|(a, b)| a - b).collect();
                    d.iter().zip(metric.matvec(&d)).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
                })
                .collect()
        })
        .collect();
    Ok(Convergence { alpha, distances })
}

/// Largest measured incremental gain of a fresh γ-Lipschitz model for each γ.
pub fn gain_sweep(gammas: &[f64], trials: usize, horizon: usize, seed: u64) -> Result<Vec<f64>, String> {
    let dims = TrueSystem::paper().dims();
    gammas
        .iter()
        .map(|&gamma| {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(format!("gamma must be positive, got {gamma}"));
            }
            let model: Model = LpvSsModel::lipschitz(dims, gamma, EPSILON, &small_spec(), seed).into();
            let cfg = ProbeConfig { trials, horizon, u_amplitude: 1.0, p_box: P_BOX.to_vec(), seed };
            empirical_gain(&model, &cfg).map(|g| g.max_ratio).map_err(|e| e.to_string())
        })
        .collect()
}

/// Benchmark-style excitation on [−1, 1] and its periodogram
/// `|Σ u_t e^{−2πikt/T}|² / T` for `k = 0..T/2`.
pub fn excitation_spectrum(length: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = excitation(length, (-1.0, 1.0), N_SINES, INPUT_NOISE_VAR, &mut rng);
    let n = length as f64;
    let power = (0..=length / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in u.iter().enumerate() {
                let w = -std::f64::consts::TAU * (k * t % length) as f64 / n;
                re += v * w.cos();
                im += v * w.sin();
            }
            (re * re + im * im) / n
        })
        .collect();
    (u, power)
}

/// Flat layout for JavaScript: `[α, d₁(0..=T), d₂(0..=T), …]`.
#[wasm_bindgen(js_name = convergence)]
pub fn convergence_js(n_x: usize, count: usize, horizon: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    let c = convergence(n_x, count, horizon, u64::from(seed)).map_err(|e| JsError::new(&e))?;
    Ok(std::iter::once(c.alpha).chain(c.distances.into_iter().flatten()).collect())
}

#[wasm_bindgen(js_name = gainSweep)]
pub fn gain_sweep_js(gammas: &[f64], trials: usize, horizon: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    gain_sweep(gammas, trials, horizon, u64::from(seed)).map_err(|e| JsError::new(&e))
}

/// Flat layout for JavaScript: `[u(0..T), power(0..=T/2)]`.
#[wasm_bindgen(js_name = excitationSpectrum)]
pub fn excitation_spectrum_js(length: usize, seed: u32) -> Vec<f64> {
    let (u, power) = excitation_spectrum(length, u64::from(seed));
    u.into_iter().chain(power).collect()
}
