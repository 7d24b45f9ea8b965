//! Numerical certification of trained or freshly drawn models.
//!
//! The LMI checks evaluate the contraction and Lipschitz matrix
//! inequalities at sampled scheduling points. For the constrained model
//! structures the guarantee holds by construction; sampling is a regression
//! check and the report says "sampled certificate", not a proof over 𝕡.
//!
//! The empirical probes simulate the model: pairs of initial states under
//! a common input (contraction) and pairs of inputs from a common initial
//! state (incremental gain).

use std::fmt::{self, Write as _};

use rand::Rng;
use thiserror::Error;

use crate::linalg::{DenseMatrix, LinalgError};
use crate::lpvmodel::{LpvModel, LpvSsModel, Model, ModelError, StepCoeffs};
use crate::seeds;
use crate::ssparam::{contraction_lmi_min_eig, lipschitz_lmi_min_eig};

/// Tolerance on the fitted decay slope above `log α`.
pub const SLOPE_TOLERANCE: f64 = 1e-3;

/// Tolerance on the empirical gain above `γ`.
pub const GAIN_TOLERANCE: f64 = 1e-9;

const STREAM_SAMPLES: u64 = 0x51;
const STREAM_CONTRACTION: u64 = 0x52;
const STREAM_GAIN: u64 = 0x53;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("no certificate candidate: {0}")]
    NoCandidate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    Contraction,
    Lipschitz,
}

impl Property {
    pub fn as_str(&self) -> &'static str {
        match self {
            Property::Contraction => "contraction",
            Property::Lipschitz => "lipschitz",
        }
    }
}

impl std::str::FromStr for Property {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "contraction" => Ok(Property::Contraction),
            "lipschitz" => Ok(Property::Lipschitz),
            other => Err(format!("unknown property `{other}`")),
        }
    }
}

/// Outcome of an LMI check over a set of scheduling samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiCheck {
    pub samples: usize,
    /// Smallest LMI eigenvalue over all samples.
    pub min_eigenvalue: f64,
    /// Row of the sample matrix where the minimum was attained.
    pub worst_sample: usize,
    /// `min_eigenvalue / ‖𝒳‖₂`.
    pub relative_margin: f64,
}

impl LmiCheck {
    pub fn passed(&self) -> bool {
        self.min_eigenvalue > 0.0
    }
}

fn reduce_min(eigs: Vec<f64>, lyap: &DenseMatrix) -> Result<LmiCheck, VerifyError> {
    let (worst, min) = eigs
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, e)| if e < acc.1 || e.is_nan() { (i, e) } else { acc });
    let norm = crate::linalg::sym_eig(lyap)?.max();
    Ok(LmiCheck {
        samples: eigs.len(),
        min_eigenvalue: min,
        worst_sample: worst,
        relative_margin: min / norm,
    })
}

fn candidate_contraction(model: &LpvSsModel, candidate: Option<(&DenseMatrix, f64)>) -> Result<(DenseMatrix, f64), VerifyError> {
    if let Some((lyap, alpha)) = candidate {
        return Ok((lyap.clone(), alpha));
    }
    // A γ-Lipschitz model is contracting with rate 1 in the same metric.
    match (model.lyapunov(), model.alpha()) {
        (Some(l), Some(a)) => Ok((l, a)),
        (Some(l), None) => Ok((l, 1.0)),
        _ => Err(VerifyError::NoCandidate("unconstrained model needs a candidate 𝒳 and α".into())),
    }
}

/// `min_p λ_min(α²𝒳 − A(p)ᵀ𝒳A(p))` over the rows of `p_samples`.
pub fn check_contraction_lmi(
    model: &LpvSsModel,
    p_samples: &DenseMatrix,
    candidate: Option<(&DenseMatrix, f64)>,
) -> Result<LmiCheck, VerifyError> {
    let (lyap, alpha) = candidate_contraction(model, candidate)?;
    let coeffs = model.coefficient_sequence(p_samples)?;
    let eigs = par_map(&coeffs, &|c: &StepCoeffs| contraction_lmi_min_eig(&c.a, &lyap, alpha).unwrap_or(f64::NAN));
    reduce_min(eigs, &lyap)
}

/// `min_p λ_min(diag(𝒳, γ²I) − W(p)ᵀ diag(𝒳, I) W(p))` over the rows of `p_samples`.
pub fn check_lipschitz_lmi(
    model: &LpvSsModel,
    p_samples: &DenseMatrix,
    gamma: f64,
    lyapunov: Option<&DenseMatrix>,
) -> Result<LmiCheck, VerifyError> {
    let lyap = match lyapunov {
        Some(l) => l.clone(),
        None => model
            .lyapunov()
            .ok_or_else(|| VerifyError::NoCandidate("unconstrained model needs a candidate 𝒳".into()))?,
    };
    let coeffs = model.coefficient_sequence(p_samples)?;
    let eigs = par_map(&coeffs, &|c: &StepCoeffs| lipschitz_lmi_min_eig(&c.w(), &lyap, gamma).unwrap_or(f64::NAN));
    reduce_min(eigs, &lyap)
}

#[cfg(feature = "parallel")]
fn par_map<T: Sync, R: Send>(items: &[T], f: &(impl Fn(&T) -> R + Sync)) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Sync, R: Send>(items: &[T], f: &(impl Fn(&T) -> R + Sync)) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Uniform samples of a box, one per row, followed by its vertices.
pub fn box_samples(p_box: &[(f64, f64)], count: usize, seed: u64) -> DenseMatrix {
    let mut rng = seeds::rng(seed, STREAM_SAMPLES, 0);
    let n = p_box.len();
    let vertices = 1usize << n;
    DenseMatrix::from_fn(count + vertices, n, |r, j| {
        let (lo, hi) = p_box[j];
        if r < count {
            rng.random_range(lo..=hi)
        } else if (r - count) >> j & 1 == 0 {
            lo
        } else {
            hi
        }
    })
}

/// Settings shared by the empirical probes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub trials: usize,
    pub horizon: usize,
    /// Inputs are uniform on `[−u_amplitude, u_amplitude]`.
    pub u_amplitude: f64,
    pub p_box: Vec<(f64, f64)>,
    pub seed: u64,
}

fn random_signals(cfg: &ProbeConfig, n_u: usize, rng: &mut impl Rng) -> (DenseMatrix, DenseMatrix) {
    let u = DenseMatrix::random_uniform(cfg.horizon, n_u, -cfg.u_amplitude, cfg.u_amplitude, rng);
    let p = DenseMatrix::from_fn(cfg.horizon, cfg.p_box.len(), |_, j| {
        let (lo, hi) = cfg.p_box[j];
        rng.random_range(lo..=hi)
    });
    (u, p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionProbe {
    /// Largest fitted slope of `log ‖Δx_t‖` over all trials.
    pub max_slope: f64,
    pub slopes: Vec<f64>,
    /// Whether the slopes were measured in the `𝒳`-weighted norm.
    pub weighted: bool,
}

/// Least-squares slope of `values` against their index.
fn ls_slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean_t = (n - 1.0) / 2.0;
    let mean_v = values.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, v) in values.iter().enumerate() {
        let dt = t as f64 - mean_t;
        num += dt * (v - mean_v);
        den += dt * dt;
    }
    num / den
}

/// Fits the decay rate of the distance between two state trajectories that
/// share input and scheduling but start from different states.
///
/// The distance is measured in the certificate norm `‖·‖_𝒳` when the model
/// has one, otherwise in the Euclidean norm. Samples where the distance has
/// reached the rounding floor `1e-9·(1 + ‖x‖)` are dropped, and the slope is
/// fitted over the last three quarters of what remains.
pub fn empirical_contraction<M: LpvModel>(
    model: &M,
    metric: Option<&DenseMatrix>,
    cfg: &ProbeConfig,
) -> Result<ContractionProbe, VerifyError> {
    let dims = model.dims();
    let mut slopes = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let mut rng = seeds::rng(cfg.seed, STREAM_CONTRACTION, trial as u64);
        let (u, p) = random_signals(cfg, dims.n_u, &mut rng);
        let xa: Vec<f64> = (0..dims.n_x).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let xb: Vec<f64> = (0..dims.n_x).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let sa = model.simulate(&xa, &u, &p)?;
        let sb = model.simulate(&xb, &u, &p)?;
        let mut logs = Vec::new();
        for t in 0..sa.x.rows() {
            let d: Vec<f64> = sa.x.row(t).iter().zip(sb.x.row(t)).map(|(a, b)| a - b).collect();
            let dist = match metric {
                Some(m) => d.iter().zip(m.matvec(&d)).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt(),
                None => d.iter().map(|v| v * v).sum::<f64>().sqrt(),
            };
            let scale = 1.0 + sa.x.row(t).iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(dist > 1e-9 * scale) {
                break;
            }
            logs.push(dist.ln());
        }
        let start = logs.len() / 4;
        if logs.len() - start >= 2 {
            slopes.push(ls_slope(&logs[start..]));
        }
    }
    let max_slope = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ContractionProbe {
        max_slope,
        slopes,
        weighted: metric.is_some(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainProbe {
    /// `max √(Σ‖Δy‖² / Σ‖Δu‖²)` over all probes.
    pub max_ratio: f64,
    pub probes: usize,
}

fn pair_ratio<M: LpvModel>(model: &M, x0: &[f64], ua: &DenseMatrix, ub: &DenseMatrix, p: &DenseMatrix) -> Result<f64, VerifyError> {
    let ya = model.simulate(x0, ua, p)?.y;
    let yb = model.simulate(x0, ub, p)?.y;
    let dy = ya.sub(&yb).frobenius_norm();
    let du = ua.sub(ub).frobenius_norm();
    Ok(dy / du)
}

/// `G·v` for the linear increment map `Δu ↦ Δy` of an LPV-SS model along
/// fixed coefficients (zero initial increment).
pub fn increment_forward(coeffs: &[StepCoeffs], v: &DenseMatrix) -> DenseMatrix {
    let n_x = coeffs[0].a.rows();
    let n_y = coeffs[0].c.rows();
    let mut x = vec![0.0; n_x];
    let mut y = DenseMatrix::zeros(coeffs.len(), n_y);
    for (t, c) in coeffs.iter().enumerate() {
        let vt = v.row(t);
        let cy = c.c.matvec(&x);
        let dy = c.d.matvec(vt);
        for i in 0..n_y {
            y[(t, i)] = cy[i] + dy[i];
        }
        let ax = c.a.matvec(&x);
        let bu = c.b.matvec(vt);
        x = ax.iter().zip(&bu).map(|(a, b)| a + b).collect();
    }
    y
}

/// `Gᵀ·w`, the adjoint of [`increment_forward`].
pub fn increment_adjoint(coeffs: &[StepCoeffs], w: &DenseMatrix) -> DenseMatrix {
    let n_x = coeffs[0].a.rows();
    let n_u = coeffs[0].b.cols();
    let mut lam = vec![0.0; n_x];
    let mut g = DenseMatrix::zeros(coeffs.len(), n_u);
    for (t, c) in coeffs.iter().enumerate().rev() {
        let wt = w.row(t);
        let bl = c.b.transpose().matvec(&lam);
        let dw = c.d.transpose().matvec(wt);
        for i in 0..n_u {
            g[(t, i)] = bl[i] + dw[i];
        }
        let al = c.a.transpose().matvec(&lam);
        let cw = c.c.transpose().matvec(wt);
        lam = al.iter().zip(&cw).map(|(a, b)| a + b).collect();
    }
    g
}

const POWER_ITERATIONS: usize = 60;

/// Largest incremental gain found over random input pairs, impulses and,
/// for LPV-SS models, the worst direction of the increment map found by
/// power iteration on `GᵀG`. Every ratio is measured on actual simulations.
pub fn empirical_gain(model: &Model, cfg: &ProbeConfig) -> Result<GainProbe, VerifyError> {
    let dims = model.dims();
    let mut max_ratio: f64 = 0.0;
    let mut probes = 0;
    for trial in 0..cfg.trials {
        let mut rng = seeds::rng(cfg.seed, STREAM_GAIN, trial as u64);
        let (ua, p) = random_signals(cfg, dims.n_u, &mut rng);
        let x0: Vec<f64> = (0..dims.n_x).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let mut directions = Vec::new();
        // Independent second input.
        directions.push(DenseMatrix::random_uniform(cfg.horizon, dims.n_u, -cfg.u_amplitude, cfg.u_amplitude, &mut rng).sub(&ua));
        // Impulse at a random time on a random channel.
        let mut imp = DenseMatrix::zeros(cfg.horizon, dims.n_u);
        imp[(rng.random_range(0..cfg.horizon), rng.random_range(0..dims.n_u))] = cfg.u_amplitude;
        directions.push(imp);
        if let Model::Ss(ss) = model {
            let coeffs = ss.coefficient_sequence(&p)?;
            let mut v = DenseMatrix::random_uniform(cfg.horizon, dims.n_u, -1.0, 1.0, &mut rng);
            for _ in 0..POWER_ITERATIONS {
                let next = increment_adjoint(&coeffs, &increment_forward(&coeffs, &v));
                let norm = next.frobenius_norm();
                if !(norm > 0.0) {
                    break;
                }
                v = next.scale(1.0 / norm);
            }
            let norm = v.frobenius_norm();
            if norm > 0.0 {
                directions.push(v.scale(cfg.u_amplitude / norm * (cfg.horizon as f64).sqrt()));
            }
        }
        for d in directions {
            let ub = ua.add(&d);
            let r = pair_ratio(model, &x0, &ua, &ub, &p)?;
            max_ratio = max_ratio.max(r);
            probes += 1;
        }
    }
    Ok(GainProbe { max_ratio, probes })
}

/// Combined LMI and simulation report.
#[derive(Debug, Clone, PartialEq)]
pub struct CertReport {
    pub property: Property,
    pub samples: usize,
    pub min_lmi_eigenvalue: f64,
    pub relative_margin: f64,
    /// Fitted decay slope (contraction) or worst gain ratio (Lipschitz).
    pub empirical: f64,
    /// `log α` or `γ`.
    pub bound: f64,
    pub pass: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    pub samples: usize,
    pub p_box: Vec<(f64, f64)>,
    pub trials: usize,
    pub horizon: usize,
    pub u_amplitude: f64,
    pub seed: u64,
}

impl CertifyOptions {
    pub fn new(samples: usize, p_box: Vec<(f64, f64)>, seed: u64) -> Self {
        Self {
            samples,
            p_box,
            trials: 100,
            horizon: 200,
            u_amplitude: 1.0,
            seed,
        }
    }

    fn probe(&self) -> ProbeConfig {
        ProbeConfig {
            trials: self.trials,
            horizon: self.horizon,
            u_amplitude: self.u_amplitude,
            p_box: self.p_box.clone(),
            seed: self.seed,
        }
    }
}

/// Runs the LMI check at `opts.samples` random points plus the vertices of
/// the box, then the matching empirical probe.
pub fn certify(model: &Model, property: Property, opts: &CertifyOptions) -> Result<CertReport, VerifyError> {
    let ss = model
        .as_ss()
        .ok_or_else(|| VerifyError::NoCandidate("LFR models have no built-in certificate".into()))?;
    let p = box_samples(&opts.p_box, opts.samples, opts.seed);
    let probe = opts.probe();
    let (lmi, empirical, bound, tol) = match property {
        Property::Contraction => {
            let (lyap, alpha) = candidate_contraction(ss, None)?;
            let lmi = check_contraction_lmi(ss, &p, Some((&lyap, alpha)))?;
            let fit = empirical_contraction(model, Some(&lyap), &probe)?;
            (lmi, fit.max_slope, alpha.ln(), SLOPE_TOLERANCE)
        }
        Property::Lipschitz => {
            let gamma = ss
                .gamma()
                .ok_or_else(|| VerifyError::NoCandidate(format!("{} model has no γ", ss.variant())))?;
            let lmi = check_lipschitz_lmi(ss, &p, gamma, None)?;
            let gain = empirical_gain(model, &probe)?;
            (lmi, gain.max_ratio, gamma, GAIN_TOLERANCE)
        }
    };
    Ok(CertReport {
        property,
        samples: lmi.samples,
        min_lmi_eigenvalue: lmi.min_eigenvalue,
        relative_margin: lmi.relative_margin,
        empirical,
        bound,
        pass: lmi.passed() && empirical <= bound + tol,
        seed: opts.seed,
    })
}

impl CertReport {
    pub const CSV_HEADER: &'static str = "property,samples,min_lmi_eigenvalue,relative_margin,empirical,bound,pass,seed";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        writeln!(
            s,
            "{},{},{:?},{:?},{:?},{:?},{},{}",
            self.property.as_str(),
            self.samples,
            self.min_lmi_eigenvalue,
            self.relative_margin,
            self.empirical,
            self.bound,
            self.pass,
            self.seed
        )
        .unwrap();
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(Self::CSV_HEADER) {
            return Err("missing report header".into());
        }
        let line = lines.next().ok_or("missing report row")?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(format!("bad report row `{line}`"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number `{s}`"));
        Ok(Self {
            property: f[0].parse()?,
            samples: f[1].parse().map_err(|_| "bad sample count")?,
            min_lmi_eigenvalue: num(f[2])?,
            relative_margin: num(f[3])?,
            empirical: num(f[4])?,
            bound: num(f[5])?,
            pass: f[6].parse().map_err(|_| "bad pass flag")?,
            seed: f[7].parse().map_err(|_| "bad seed")?,
        })
    }
}

impl fmt::Display for CertReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (what, bound) = match self.property {
            Property::Contraction => ("fitted decay slope", "log α"),
            Property::Lipschitz => ("worst gain ratio", "γ"),
        };
        writeln!(f, "property:            {}", self.property.as_str())?;
        writeln!(f, "sampled certificate: {} scheduling points", self.samples)?;
        writeln!(f, "min LMI eigenvalue:  {:e} (relative {:e})", self.min_lmi_eigenvalue, self.relative_margin)?;
        writeln!(f, "{:<21}{:.6} ({bound} = {:.6})", format!("{what}:"), self.empirical, self.bound)?;
        writeln!(f, "seed:                {}", self.seed)?;
        write!(f, "result:              {}", if self.pass { "PASS" } else { "FAIL" })
    }
}
