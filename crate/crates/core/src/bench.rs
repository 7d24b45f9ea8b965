//! The benchmark LPV system, its data sets and the evaluation protocol.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::ident::{nrmse, IdentError, Trajectory};
use crate::linalg::DenseMatrix;
use crate::lpvmodel::{AffineScheduleMap, Dims, LpvModel, LpvSsModel, ModelError};
use crate::seeds;

/// Scheduling box `𝕡 = [−1, 1] × [0, 4] × [−2, 2]`.
pub const P_BOX: [(f64, f64); 3] = [(-1.0, 1.0), (0.0, 4.0), (-2.0, 2.0)];

/// Output noise standard deviation of the data-generating system. With
/// inputs confined to `[−1, 1]` this gives the stated 12 dB SNR; reading
/// 0.08 as a variance caps the SNR near 8 dB for any admissible input.
pub const NOISE_STD: f64 = 0.08;
pub const NOISE_VAR: f64 = NOISE_STD * NOISE_STD;

pub const N_SINES: usize = 10;
pub const INPUT_NOISE_VAR: f64 = 0.05;

/// CRC-32 of the true-system coefficients (see [`TrueSystem::checksum`]).
pub const TRUE_SYSTEM_CRC32: u32 = 0x3824_821e;

const STREAM_U: u64 = 0;
const STREAM_P: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_EVAL_X0: u64 = 0xe7a1;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed data set: {0}")]
    Format(String),
    #[error("unknown data set `{0}` (expected training, validation, test-a or test-b)")]
    UnknownSet(String),
    #[error(transparent)]
    Ident(#[from] IdentError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// The LPV-SS system `x⁺ = A(p)x + B(p)u`, `y = C(p)x + D(p)u + e` with
/// coefficients affine in `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueSystem {
    /// `A₀..A₃`, 3×3.
    pub a: [DenseMatrix; 4],
    /// `B₀..B₃`, 3×1.
    pub b: [DenseMatrix; 4],
    /// `C₀..C₃`, 1×3.
    pub c: [DenseMatrix; 4],
    pub d: [f64; 4],
}

impl TrueSystem {
    pub fn paper() -> Self {
        let m3 = |r: [[f64; 3]; 3]| DenseMatrix::from_rows(&[&r[0], &r[1], &r[2]]);
        Self {
            a: [
                m3([[-0.3885, -0.1912, 0.1631], [0.3261, -0.2583, -0.9150], [-0.1664, -0.1384, 0.0768]]),
                m3([[0.2650, -0.2214, -0.1866], [0.1747, 0.1687, -0.5876], [-0.0477, -0.1313, 0.2863]]),
                m3([[0.1476, 0.1390, 0.0901], [-0.1242, 0.1903, 0.4027], [0.0403, 0.0845, 0.0971]]),
                m3([[0.1613, -0.0998, -0.1652], [0.0349, 0.0645, -0.1630], [0.0098, -0.0529, 0.0591]]),
            ],
            b: [
                DenseMatrix::column_vector(&[-3.4269, -0.3316, -2.1006]),
                DenseMatrix::column_vector(&[-1.1096, -0.8456, -0.5727]),
                DenseMatrix::column_vector(&[-0.5587, 0.1784, -0.1969]),
                DenseMatrix::zeros(3, 1),
            ],
            c: [
                DenseMatrix::row_vector(&[-0.2097, 0.0607, 0.1421]),
                DenseMatrix::zeros(1, 3),
                DenseMatrix::zeros(1, 3),
                DenseMatrix::zeros(1, 3),
            ],
            d: [0.3, 0.01, 0.0, 0.04],
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n_x: 3,
            n_u: 1,
            n_y: 1,
            n_p: 3,
        }
    }

    /// CRC-32 of the little-endian bytes of `A₀..A₃, B₀..B₃, C₀..C₃, D₀..D₃`,
    /// each matrix row-major.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for m in self.a.iter().chain(&self.b).chain(&self.c) {
            for v in m.as_slice() {
                h.update(&v.to_le_bytes());
            }
        }
        for v in &self.d {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }

    fn affine(mats: &[DenseMatrix; 4], p: &[f64]) -> DenseMatrix {
        let mut out = mats[0].clone();
        for (m, &pi) in mats[1..].iter().zip(p) {
            out.axpy(pi, m);
        }
        out
    }

    pub fn a_at(&self, p: &[f64]) -> DenseMatrix {
        Self::affine(&self.a, p)
    }

    pub fn b_at(&self, p: &[f64]) -> DenseMatrix {
        Self::affine(&self.b, p)
    }

    pub fn c_at(&self, p: &[f64]) -> DenseMatrix {
        Self::affine(&self.c, p)
    }

    pub fn d_at(&self, p: &[f64]) -> f64 {
        self.d[0] + self.d[1] * p[0] + self.d[2] * p[1] + self.d[3] * p[2]
    }

    /// Noise-free output from `x₀ = 0`.
    pub fn simulate(&self, u: &[f64], p: &DenseMatrix) -> Vec<f64> {
        let mut x = vec![0.0; 3];
        let mut y = Vec::with_capacity(u.len());
        for (t, &ut) in u.iter().enumerate() {
            let pt = p.row(t);
            let (a, b, c) = (self.a_at(pt), self.b_at(pt), self.c_at(pt));
            y.push(c.matvec(&x)[0] + self.d_at(pt) * ut);
            let ax = a.matvec(&x);
            x = (0..3).map(|i| ax[i] + b[(i, 0)] * ut).collect();
        }
        y
    }

    /// The same system as an affine [`LpvSsModel`].
    pub fn to_model(&self) -> LpvSsModel {
        let dims = self.dims();
        let mut s1 = DenseMatrix::zeros(20, 3);
        let mut s0 = DenseMatrix::zeros(20, 1);
        for k in 0..4 {
            let w = DenseMatrix::vstack(&[
                &DenseMatrix::hstack(&[&self.a[k], &self.b[k]]),
                &DenseMatrix::hstack(&[&self.c[k], &DenseMatrix::filled(1, 1, self.d[k])]),
            ]);
            for (i, v) in w.vec_col_major().into_iter().enumerate() {
                if k == 0 {
                    s0[(i, 0)] = v;
                } else {
                    s1[(i, k - 1)] = v;
                }
            }
        }
        LpvSsModel::affine(dims, AffineScheduleMap::new(s1, s0))
    }
}

/// The four data sets of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetName {
    Training,
    Validation,
    TestA,
    TestB,
}

impl SetName {
    pub const ALL: [SetName; 4] = [SetName::Training, SetName::Validation, SetName::TestA, SetName::TestB];

    pub fn as_str(&self) -> &'static str {
        match self {
            SetName::Training => "training",
            SetName::Validation => "validation",
            SetName::TestA => "test-a",
            SetName::TestB => "test-b",
        }
    }

    pub fn parse(s: &str) -> Result<Self, BenchError> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| BenchError::UnknownSet(s.to_string()))
    }

    fn stream(&self) -> u64 {
        match self {
            SetName::Training => 0x10,
            SetName::Validation => 0x20,
            SetName::TestA => 0x30,
            SetName::TestB => 0x40,
        }
    }

    pub fn spec(&self) -> DatasetSpec {
        let (t, n_b, u, p_scale) = match self {
            SetName::Training => (200, 3200, 1.0, 0.3),
            SetName::Validation => (200, 1280, 1.0, 0.3),
            SetName::TestA => (200, 30, 1.0, 0.3),
            SetName::TestB => (6000, 1, 20.0, 1.0),
        };
        DatasetSpec {
            name: *self,
            t,
            n_b,
            u_range: (-u, u),
            p_scale,
            noise_var: NOISE_VAR,
        }
    }

    /// Reduced set sizes for quick runs.
    pub fn desk_spec(&self) -> DatasetSpec {
        let mut spec = self.spec();
        match self {
            SetName::Training => spec.n_b = 128,
            SetName::Validation => spec.n_b = 64,
            _ => {}
        }
        spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub name: SetName,
    pub t: usize,
    pub n_b: usize,
    pub u_range: (f64, f64),
    /// Scheduling is drawn from `p_scale · 𝕡` (box scaled about the origin).
    pub p_scale: f64,
    pub noise_var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub name: SetName,
    pub t: usize,
    pub n_b: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub p_scale: f64,
    pub noise_var: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

/// Frequencies `k / (2(n + 1))`, `k = 1..n`, in cycles per sample.
pub fn multisine_frequencies(n_sines: usize) -> Vec<f64> {
    (1..=n_sines).map(|k| k as f64 / (2.0 * (n_sines + 1) as f64)).collect()
}

/// Unit-amplitude multisine `Σ sin(2π f_k t + φ_k)`.
pub fn multisine(t: usize, phases: &[f64]) -> Vec<f64> {
    let freqs = multisine_frequencies(phases.len());
    (0..t)
        .map(|i| {
            freqs
                .iter()
                .zip(phases)
                .map(|(f, ph)| (2.0 * std::f64::consts::PI * f * i as f64 + ph).sin())
                .sum()
        })
        .collect()
}

/// Multisine plus white noise, rescaled so its minimum and maximum hit
/// `range` exactly. A constant signal maps to the midpoint.
pub fn excitation<R: Rng + ?Sized>(t: usize, range: (f64, f64), n_sines: usize, noise_var: f64, rng: &mut R) -> Vec<f64> {
    let phases: Vec<f64> = (0..n_sines).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    let mut u = multisine(t, &phases);
    if noise_var > 0.0 {
        let normal = Normal::new(0.0, noise_var.sqrt()).expect("finite variance");
        for v in &mut u {
            *v += normal.sample(rng);
        }
    }
    rescale(&mut u, range);
    u
}

fn rescale(u: &mut [f64], (lo, hi): (f64, f64)) {
    let (mut imin, mut imax) = (0, 0);
    for (i, &v) in u.iter().enumerate() {
        if v < u[imin] {
            imin = i;
        }
        if v > u[imax] {
            imax = i;
        }
    }
    let (min, max) = (u[imin], u[imax]);
    if !(max - min > 1e-12 * (1.0 + max.abs())) {
        u.iter_mut().for_each(|v| *v = 0.5 * (lo + hi));
        return;
    }
    for v in u.iter_mut() {
        *v = (lo + (*v - min) / (max - min) * (hi - lo)).clamp(lo, hi);
    }
    u[imin] = lo;
    u[imax] = hi;
}

/// `count` i.i.d. uniform samples of `scale · 𝕡`, one per row.
pub fn sample_scheduling<R: Rng + ?Sized>(count: usize, scale: f64, rng: &mut R) -> DenseMatrix {
    DenseMatrix::from_fn(count, 3, |_, j| {
        let (lo, hi) = P_BOX[j];
        rng.random_range(scale * lo..=scale * hi)
    })
}

/// The eight corners of `scale · 𝕡`.
pub fn scheduling_vertices(scale: f64) -> Vec<[f64; 3]> {
    (0..8)
        .map(|m| std::array::from_fn(|j| scale * if m >> j & 1 == 0 { P_BOX[j].0 } else { P_BOX[j].1 }))
        .collect()
}

/// Generates a data set and also returns the output noise of every
/// trajectory. `noise_var` overrides the spec so the same seed can be
/// regenerated noise-free.
pub fn generate_with_noise(spec: &DatasetSpec, seed: u64, noise_var: f64) -> (Dataset, Vec<Vec<f64>>) {
    let sys = TrueSystem::paper();
    let one = |i: usize| {
        let stream = spec.name.stream();
        let mut rng_u = seeds::rng(seed, stream + STREAM_U, i as u64);
        let mut rng_p = seeds::rng(seed, stream + STREAM_P, i as u64);
        let mut rng_e = seeds::rng(seed, stream + STREAM_NOISE, i as u64);
        let u = excitation(spec.t, spec.u_range, N_SINES, INPUT_NOISE_VAR, &mut rng_u);
        let p = sample_scheduling(spec.t, spec.p_scale, &mut rng_p);
        let clean = sys.simulate(&u, &p);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let sd = noise_var.sqrt();
        let e: Vec<f64> = (0..spec.t).map(|_| sd * normal.sample(&mut rng_e)).collect();
        let y: Vec<f64> = clean.iter().zip(&e).map(|(c, n)| c + n).collect();
        (
            Trajectory {
                u: DenseMatrix::column_vector(&u),
                p,
                y: DenseMatrix::column_vector(&y),
            },
            e,
        )
    };
    let items: Vec<(Trajectory, Vec<f64>)> = par_map(spec.n_b, &one);
    let (trajectories, noise) = items.into_iter().unzip();
    (
        Dataset {
            meta: DatasetMeta {
                name: spec.name,
                t: spec.t,
                n_b: spec.n_b,
                u_min: spec.u_range.0,
                u_max: spec.u_range.1,
                p_scale: spec.p_scale,
                noise_var,
                seed,
            },
            trajectories,
        },
        noise,
    )
}

#[cfg(feature = "parallel")]
fn par_map<R: Send>(n: usize, f: &(impl Fn(usize) -> R + Sync)) -> Vec<R> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<R: Send>(n: usize, f: &(impl Fn(usize) -> R + Sync)) -> Vec<R> {
    (0..n).map(f).collect()
}

pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Dataset {
    generate_with_noise(spec, seed, spec.noise_var).0
}

/// `10·log₁₀` of the ratio of noise-free output variance to noise
/// variance, pooled over all samples.
pub fn snr_db(noisy: &Dataset, noise: &[Vec<f64>]) -> f64 {
    let mut clean = Vec::new();
    let mut all_noise = Vec::new();
    for (tr, e) in noisy.trajectories.iter().zip(noise) {
        for (y, n) in tr.y.as_slice().iter().zip(e) {
            clean.push(y - n);
            all_noise.push(*n);
        }
    }
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    10.0 * (var(&clean) / var(&all_noise)).log10()
}

pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<(), BenchError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let m = &dataset.meta;
    let meta = format!(
        "name = {}\nT = {}\nN_b = {}\nu_min = {:?}\nu_max = {:?}\np_scale = {:?}\nnoise_var = {:?}\nseed = {}\n",
        m.name.as_str(),
        m.t,
        m.n_b,
        m.u_min,
        m.u_max,
        m.p_scale,
        m.noise_var,
        m.seed
    );
    let path = dir.join("meta");
    fs::write(&path, meta).map_err(io_err(&path))?;
    for (i, tr) in dataset.trajectories.iter().enumerate() {
        let mut s = String::from("t,u,p1,p2,p3,y\n");
        for t in 0..tr.len() {
            let p = tr.p.row(t);
            writeln!(
                s,
                "{t},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                tr.u[(t, 0)],
                p[0],
                p[1],
                p[2],
                tr.y[(t, 0)]
            )
            .unwrap();
        }
        let path = dir.join(format!("traj_{i:05}.csv"));
        fs::write(&path, s).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset, BenchError> {
    let dir = dir.as_ref();
    let path = dir.join("meta");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut kv = std::collections::HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| BenchError::Format(format!("bad meta line `{line}`")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| BenchError::Format(format!("meta lacks `{k}`")));
    let num = |k: &str| -> Result<f64, BenchError> { get(k)?.parse().map_err(|_| BenchError::Format(format!("bad `{k}`"))) };
    let int = |k: &str| -> Result<u64, BenchError> { get(k)?.parse().map_err(|_| BenchError::Format(format!("bad `{k}`"))) };
    let meta = DatasetMeta {
        name: SetName::parse(get("name")?)?,
        t: int("T")? as usize,
        n_b: int("N_b")? as usize,
        u_min: num("u_min")?,
        u_max: num("u_max")?,
        p_scale: num("p_scale")?,
        noise_var: num("noise_var")?,
        seed: int("seed")?,
    };
    let mut trajectories = Vec::with_capacity(meta.n_b);
    for i in 0..meta.n_b {
        let path = dir.join(format!("traj_{i:05}.csv"));
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        trajectories.push(parse_trajectory(&text, meta.t).map_err(|e| BenchError::Format(format!("{}: {e}", path.display())))?);
    }
    Ok(Dataset { meta, trajectories })
}

fn parse_trajectory(text: &str, t: usize) -> Result<Trajectory, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("t,u,p1,p2,p3,y") {
        return Err("missing header".into());
    }
    let mut u = Vec::with_capacity(t);
    let mut p = Vec::with_capacity(3 * t);
    let mut y = Vec::with_capacity(t);
    for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 || f[0].trim().parse::<usize>().ok() != Some(row) {
            return Err(format!("bad row {row}"));
        }
        let v: Vec<f64> = f[1..]
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|_| format!("bad number in row {row}")))
            .collect::<Result<_, _>>()?;
        u.push(v[0]);
        p.extend_from_slice(&v[1..4]);
        y.push(v[4]);
    }
    if u.len() != t {
        return Err(format!("{} rows, expected {t}", u.len()));
    }
    Ok(Trajectory {
        u: DenseMatrix::column_vector(&u),
        p: DenseMatrix::from_row_major(t, 3, p).map_err(|e| e.to_string())?,
        y: DenseMatrix::column_vector(&y),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// NRMSe per trajectory; `+∞` where the simulation blew up.
    pub nrmse: Vec<f64>,
    pub mean: f64,
}

impl Evaluation {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("trajectory,nrmse\n");
        for (i, v) in self.nrmse.iter().enumerate() {
            writeln!(s, "{i},{v:?}").unwrap();
        }
        writeln!(s, "mean,{:?}", self.mean).unwrap();
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, BenchError> {
        let bad = |l: &str| BenchError::Format(format!("bad evaluation line `{l}`"));
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("trajectory,nrmse") {
            return Err(bad("header"));
        }
        let mut nrmse = Vec::new();
        let mut mean = None;
        for l in lines.filter(|l| !l.trim().is_empty()) {
            let (k, v) = l.split_once(',').ok_or_else(|| bad(l))?;
            let v: f64 = v.trim().parse().map_err(|_| bad(l))?;
            if k == "mean" {
                mean = Some(v);
            } else {
                nrmse.push(v);
            }
        }
        Ok(Self {
            nrmse,
            mean: mean.ok_or_else(|| bad("missing mean"))?,
        })
    }
}

/// Initial state used when evaluating trajectory `index`.
pub fn evaluation_x0(n_x: usize, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = seeds::rng(seed, STREAM_EVAL_X0, index as u64);
    (0..n_x).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// Initial state used by [`evaluate_from`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalInit {
    /// Uniform on `[−1, 1]^n_x`, drawn per trajectory from the seed.
    Random { seed: u64 },
    Zero,
}

/// Simulates every trajectory from a random initial state and scores the
/// full output (no burn-in skip).
pub fn evaluate<M: LpvModel>(model: &M, dataset: &Dataset, seed: u64) -> Result<Evaluation, BenchError> {
    evaluate_from(model, dataset, EvalInit::Random { seed })
}

pub fn evaluate_from<M: LpvModel>(model: &M, dataset: &Dataset, init: EvalInit) -> Result<Evaluation, BenchError> {
    let n_x = model.dims().n_x;
    let scores: Vec<Result<f64, BenchError>> = par_map(dataset.trajectories.len(), &|i| {
        let tr = &dataset.trajectories[i];
        let x0 = match init {
            EvalInit::Random { seed } => evaluation_x0(n_x, seed, i),
            EvalInit::Zero => vec![0.0; n_x],
        };
        match model.simulate(&x0, &tr.u, &tr.p) {
            Ok(sim) => Ok(nrmse(&tr.y, &sim.y)?),
            Err(ModelError::NonFiniteState { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e.into()),
        }
    });
    let nrmse = scores.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let mean = nrmse.iter().sum::<f64>() / nrmse.len() as f64;
    Ok(Evaluation { nrmse, mean })
}

/// Mean NRMSe of the all-zero prediction.
pub fn zero_model_nrmse(dataset: &Dataset) -> Result<f64, BenchError> {
    let mut total = 0.0;
    for tr in &dataset.trajectories {
        total += nrmse(&tr.y, &DenseMatrix::zeros(tr.y.rows(), tr.y.cols()))?;
    }
    Ok(total / dataset.trajectories.len() as f64)
}
