//! Simulatable LPV models.
//!
//! [`LpvSsModel`] is the state-space model
//!
//! ```text
//! [x_{t+1}; y_t] = W(p_t)·[x_t; u_t] + b(p_t)
//! ```
//!
//! in one of three structures: contracting, γ-Lipschitz (both via
//! [`crate::ssparam`]) or an unconstrained affine map `Vec(W), b = S₁p + S₀`.
//! [`LpvLfrModel`] is the unconstrained LFR baseline with a ReLU in the
//! feedback channel.
//!
//! All models are simulated by recording the rollout on a [`Tape`]; the
//! same code path serves training and plain simulation.

mod coeff;
pub mod format;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use coeff::{AffineScheduleMap, BoundCoeffMap, CoeffMap, Component, Mlp, MlpMode, ParamBinder, INIT_RANGE};

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::linalg::{DenseMatrix, LinalgError};
use crate::ssparam::{
    alpha_var, contracting_a_var, lipschitz_w_var, AlphaParam, ContractingParam, LipschitzFrame, LipschitzParam,
    StateBasis, StateFrame,
};

/// State magnitude treated as a blow-up.
pub const STATE_LIMIT: f64 = 1e30;

/// Raw α used when a contracting model is created.
pub const DEFAULT_ALPHA_RAW: f64 = 2.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("state left the finite range at step {step}")]
    NonFiniteState { step: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unsupported model file version {found} (expected {expected})")]
    FormatVersionMismatch { found: String, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_p: usize,
}

/// A rollout recorded on a tape.
pub struct Recorded<'t> {
    /// Parameter leaves, in [`LpvModel::parameters`] order.
    pub params: Vec<Var<'t>>,
    /// `y_t` as `n_y × 1`, one per completed step.
    pub y: Vec<Var<'t>>,
    /// `x_0 .. x_T` as `n_x × 1`.
    pub x: Vec<Var<'t>>,
    /// First step whose successor state left the finite range.
    pub blowup: Option<usize>,
}

/// Plain simulation output.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// `T × n_y`.
    pub y: DenseMatrix,
    /// `(T + 1) × n_x`.
    pub x: DenseMatrix,
}

/// Common interface of the simulatable model classes.
pub trait LpvModel: Clone + Send + Sync {
    fn dims(&self) -> Dims;

    fn parameters(&self) -> Vec<DenseMatrix>;

    fn set_parameters(&mut self, params: &[DenseMatrix]);

    /// Records the response to `u` (`T × n_u`) under scheduling `p`
    /// (`T × n_p`) from `x0`. Recording stops early on a state blow-up.
    fn record<'t>(&self, tape: &'t Tape, x0: &[f64], u: &DenseMatrix, p: &DenseMatrix) -> Result<Recorded<'t>, ModelError>;

    /// Simulation up to the first blow-up, and the blow-up if one happened.
    fn simulate_prefix(
        &self,
        x0: &[f64],
        u: &DenseMatrix,
        p: &DenseMatrix,
    ) -> Result<(Simulation, Option<ModelError>), ModelError> {
        let tape = Tape::new();
        let rec = self.record(&tape, x0, u, p)?;
        let dims = self.dims();
        let mut y = DenseMatrix::zeros(rec.y.len(), dims.n_y);
        for (t, v) in rec.y.iter().enumerate() {
            let val = tape.value(*v);
            for i in 0..dims.n_y {
                y[(t, i)] = val[(i, 0)];
            }
        }
        let mut x = DenseMatrix::zeros(rec.x.len(), dims.n_x);
        for (t, v) in rec.x.iter().enumerate() {
            let val = tape.value(*v);
            for i in 0..dims.n_x {
                x[(t, i)] = val[(i, 0)];
            }
        }
        Ok((Simulation { y, x }, rec.blowup.map(|step| ModelError::NonFiniteState { step })))
    }

    fn simulate(&self, x0: &[f64], u: &DenseMatrix, p: &DenseMatrix) -> Result<Simulation, ModelError> {
        match self.simulate_prefix(x0, u, p)? {
            (sim, None) => Ok(sim),
            (_, Some(err)) => Err(err),
        }
    }
}

fn check_inputs(dims: Dims, x0: &[f64], u: &DenseMatrix, p: &DenseMatrix) -> Result<(), ModelError> {
    if x0.len() != dims.n_x {
        return Err(ModelError::DimensionMismatch(format!("x0 has {} entries, n_x = {}", x0.len(), dims.n_x)));
    }
    if u.cols() != dims.n_u || p.cols() != dims.n_p || u.rows() != p.rows() {
        return Err(ModelError::DimensionMismatch(format!(
            "u is {}x{}, p is {}x{}, model has n_u = {}, n_p = {}",
            u.rows(),
            u.cols(),
            p.rows(),
            p.cols(),
            dims.n_u,
            dims.n_p
        )));
    }
    if !p.is_finite() || !u.is_finite() {
        return Err(ModelError::DimensionMismatch("input or scheduling contains non-finite values".into()));
    }
    Ok(())
}

fn state_blew_up(x: &DenseMatrix) -> bool {
    x.as_slice().iter().any(|v| !v.is_finite() || v.abs() > STATE_LIMIT)
}

/// Coefficients of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCoeffs {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub c: DenseMatrix,
    pub d: DenseMatrix,
    pub bx: Vec<f64>,
    pub by: Vec<f64>,
}

impl StepCoeffs {
    /// `W = [A B; C D]`.
    pub fn w(&self) -> DenseMatrix {
        DenseMatrix::vstack(&[&DenseMatrix::hstack(&[&self.a, &self.b]), &DenseMatrix::hstack(&[&self.c, &self.d])])
    }
}

#[derive(Clone, Copy)]
struct StepVars<'t> {
    a: Var<'t>,
    b: Var<'t>,
    c: Var<'t>,
    d: Var<'t>,
    bx: Var<'t>,
    by: Var<'t>,
}

/// How `W(p)` is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum SsStructure {
    Contracting(ContractingParam),
    Lipschitz(LipschitzParam),
    /// `Vec(W)` (column-major) and `b` straight from the coefficient map.
    Affine,
}

impl SsStructure {
    pub fn name(&self) -> &'static str {
        match self {
            SsStructure::Contracting(_) => "contracting",
            SsStructure::Lipschitz(_) => "lipschitz",
            SsStructure::Affine => "affine",
        }
    }
}

/// How to build the coefficient map of a new model.
#[derive(Debug, Clone, PartialEq)]
pub enum CoeffSpec {
    Mlp { mode: MlpMode, hidden: Vec<usize> },
    Affine,
}

impl Default for CoeffSpec {
    /// Two hidden layers of 50 ReLU units, one network per component.
    fn default() -> Self {
        CoeffSpec::Mlp {
            mode: MlpMode::PerComponent,
            hidden: vec![50, 50],
        }
    }
}

impl CoeffSpec {
    fn build<R: Rng + ?Sized>(&self, n_p: usize, layout: &[Component], rng: &mut R) -> CoeffMap {
        match self {
            CoeffSpec::Mlp { mode, hidden } => CoeffMap::mlp(*mode, n_p, hidden, layout, rng),
            CoeffSpec::Affine => CoeffMap::affine(n_p, layout, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpvSsModel {
    pub dims: Dims,
    pub structure: SsStructure,
    pub coeffs: CoeffMap,
    pub seed: u64,
}

enum BoundStructure<'t> {
    Contracting {
        frame: StateFrame<'t>,
        alpha: Var<'t>,
        epsilon: f64,
    },
    Lipschitz {
        frame: LipschitzFrame<'t>,
        param: LipschitzParam,
    },
    Affine,
}

fn random_basis(n_x: usize, rng: &mut ChaCha8Rng) -> StateBasis {
    StateBasis::new(
        (0..n_x).map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE)).collect(),
        DenseMatrix::random_uniform(n_x, n_x, -INIT_RANGE, INIT_RANGE, rng),
    )
}

impl LpvSsModel {
    /// Output layout of the coefficient map for a structure.
    pub fn layout(dims: Dims, structure: &SsStructure) -> Vec<Component> {
        let Dims { n_x, n_u, n_y, .. } = dims;
        let bias = Component::new("bias", n_x + n_y, 1);
        match structure {
            SsStructure::Contracting(_) => vec![
                Component::new("X", n_x, n_x),
                Component::new("Y", n_x, n_x),
                Component::new("B", n_x, n_u),
                Component::new("C", n_y, n_x),
                Component::new("D", n_y, n_u),
                bias,
            ],
            SsStructure::Lipschitz(param) => {
                let n = param.dims.n();
                let mut layout = vec![Component::new("X", n, n), Component::new("Y", n, n)];
                if param.dims.n0() > 0 {
                    layout.push(Component::new("Z", param.dims.n0(), n));
                }
                layout.push(bias);
                layout
            }
            SsStructure::Affine => vec![Component::new("W", n_x + n_y, n_x + n_u), bias],
        }
    }

    pub fn contracting(dims: Dims, epsilon: f64, coeffs: &CoeffSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let structure = SsStructure::Contracting(ContractingParam {
            basis: random_basis(dims.n_x, &mut rng),
            alpha: AlphaParam::Trained(DEFAULT_ALPHA_RAW),
            epsilon,
        });
        let layout = Self::layout(dims, &structure);
        let coeffs = coeffs.build(dims.n_p, &layout, &mut rng);
        Self {
            dims,
            structure,
            coeffs,
            seed,
        }
    }

    pub fn lipschitz(dims: Dims, gamma: f64, epsilon: f64, coeffs: &CoeffSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = random_basis(dims.n_x, &mut rng);
        let structure = SsStructure::Lipschitz(LipschitzParam::new(basis, gamma, epsilon, dims.n_u, dims.n_y));
        let layout = Self::layout(dims, &structure);
        let coeffs = coeffs.build(dims.n_p, &layout, &mut rng);
        Self {
            dims,
            structure,
            coeffs,
            seed,
        }
    }

    /// Unconstrained affine model with random `S₀, S₁`.
    pub fn affine_random(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Self::layout(dims, &SsStructure::Affine);
        Self {
            dims,
            structure: SsStructure::Affine,
            coeffs: CoeffMap::affine(dims.n_p, &layout, &mut rng),
            seed,
        }
    }

    /// Unconstrained affine model from explicit `S₁` (rows ordered as
    /// `[Vec(W); b]`) and `S₀`.
    pub fn affine(dims: Dims, map: AffineScheduleMap) -> Self {
        let layout = Self::layout(dims, &SsStructure::Affine);
        assert_eq!(map.output_width(), coeff::layout_size(&layout), "affine map has the wrong output width");
        assert_eq!(map.s1.cols(), dims.n_p);
        Self {
            dims,
            structure: SsStructure::Affine,
            coeffs: CoeffMap::Affine(map),
            seed: 0,
        }
    }

    pub fn variant(&self) -> &'static str {
        self.structure.name()
    }

    /// `𝒳 = QΛ²Qᵀ` for the constrained structures.
    pub fn lyapunov(&self) -> Option<DenseMatrix> {
        match &self.structure {
            SsStructure::Contracting(c) => c.basis.lyapunov().ok(),
            SsStructure::Lipschitz(l) => l.basis.lyapunov().ok(),
            SsStructure::Affine => None,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match &self.structure {
            SsStructure::Contracting(c) => Some(c.alpha()),
            _ => None,
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match &self.structure {
            SsStructure::Lipschitz(l) => Some(l.gamma),
            _ => None,
        }
    }

    fn bind_structure<'t>(&self, binder: &mut ParamBinder<'t>) -> Result<BoundStructure<'t>, ModelError> {
        Ok(match &self.structure {
            SsStructure::Contracting(c) => {
                let d = binder.bind(&DenseMatrix::column_vector(&c.basis.d));
                let ycal = binder.bind(&c.basis.ycal);
                let alpha = match c.alpha {
                    AlphaParam::Trained(raw) => alpha_var(binder.bind(&DenseMatrix::filled(1, 1, raw))),
                    AlphaParam::Fixed(a) => binder.tape().scalar(a),
                };
                BoundStructure::Contracting {
                    frame: StateFrame::new(d, ycal)?,
                    alpha,
                    epsilon: c.epsilon,
                }
            }
            SsStructure::Lipschitz(l) => {
                let d = binder.bind(&DenseMatrix::column_vector(&l.basis.d));
                let ycal = binder.bind(&l.basis.ycal);
                let state = StateFrame::new(d, ycal)?;
                BoundStructure::Lipschitz {
                    frame: LipschitzFrame::new(&state, l.dims, l.gamma),
                    param: l.clone(),
                }
            }
            SsStructure::Affine => BoundStructure::Affine,
        })
    }

    fn step_vars<'t>(
        &self,
        bound: &BoundStructure<'t>,
        comps: &[Var<'t>],
        layout: &[Component],
        t: usize,
    ) -> Result<StepVars<'t>, ModelError> {
        let Dims { n_x, n_u, n_y, .. } = self.dims;
        let block = |i: usize| comps[i].row(t).reshape(layout[i].rows, layout[i].cols);
        let bias = block(layout.len() - 1);
        let bx = bias.slice(0, 0, n_x, 1);
        let by = bias.slice(n_x, 0, n_y, 1);
        let split = |w: Var<'t>| StepVars {
            a: w.slice(0, 0, n_x, n_x),
            b: w.slice(0, n_x, n_x, n_u),
            c: w.slice(n_x, 0, n_y, n_x),
            d: w.slice(n_x, n_x, n_y, n_u),
            bx,
            by,
        };
        Ok(match bound {
            BoundStructure::Contracting { frame, alpha, epsilon } => StepVars {
                a: contracting_a_var(frame, *alpha, block(0), block(1), *epsilon)?,
                b: block(2),
                c: block(3),
                d: block(4),
                bx,
                by,
            },
            BoundStructure::Lipschitz { frame, param } => {
                let z = (param.dims.n0() > 0).then(|| block(2));
                split(lipschitz_w_var(frame, param.dims, block(0), block(1), z, param.epsilon)?)
            }
            BoundStructure::Affine => split(block(0)),
        })
    }

    /// Coefficients `(A, B, C, D, b)` for every row of `p` (`K × n_p`).
    pub fn coefficient_sequence(&self, p: &DenseMatrix) -> Result<Vec<StepCoeffs>, ModelError> {
        if p.cols() != self.dims.n_p {
            return Err(ModelError::DimensionMismatch(format!(
                "scheduling has {} columns, n_p = {}",
                p.cols(),
                self.dims.n_p
            )));
        }
        let tape = Tape::new();
        let mut binder = ParamBinder::new(&tape);
        let bound = self.bind_structure(&mut binder)?;
        let coeffs = self.coeffs.bind(&mut binder);
        let layout = Self::layout(self.dims, &self.structure);
        let comps = coeffs.evaluate(tape.leaf(p.clone()), &layout);
        (0..p.rows())
            .map(|t| {
                let s = self.step_vars(&bound, &comps, &layout, t)?;
                Ok(StepCoeffs {
                    a: s.a.value(),
                    b: s.b.value(),
                    c: s.c.value(),
                    d: s.d.value(),
                    bx: s.bx.value().into_vec(),
                    by: s.by.value().into_vec(),
                })
            })
            .collect()
    }

    /// Coefficients at a single scheduling value.
    pub fn assemble_coeffs(&self, p: &[f64]) -> Result<StepCoeffs, ModelError> {
        let mut seq = self.coefficient_sequence(&DenseMatrix::row_vector(p))?;
        Ok(seq.pop().expect("one row in, one step out"))
    }
}

impl LpvModel for LpvSsModel {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn parameters(&self) -> Vec<DenseMatrix> {
        let mut out = Vec::new();
        match &self.structure {
            SsStructure::Contracting(c) => {
                out.push(DenseMatrix::column_vector(&c.basis.d));
                out.push(c.basis.ycal.clone());
                if let AlphaParam::Trained(raw) = c.alpha {
                    out.push(DenseMatrix::filled(1, 1, raw));
                }
            }
            SsStructure::Lipschitz(l) => {
                out.push(DenseMatrix::column_vector(&l.basis.d));
                out.push(l.basis.ycal.clone());
            }
            SsStructure::Affine => {}
        }
        self.coeffs.parameters(&mut out);
        out
    }

    fn set_parameters(&mut self, params: &[DenseMatrix]) {
        let mut it = params.iter();
        let take_basis = |basis: &mut StateBasis, it: &mut std::slice::Iter<'_, DenseMatrix>| {
            let d = it.next().expect("missing d");
            assert_eq!(d.shape(), (basis.n_x(), 1));
            basis.d = d.as_slice().to_vec();
            let y = it.next().expect("missing 𝒴");
            assert_eq!(y.shape(), basis.ycal.shape());
            basis.ycal = y.clone();
        };
        match &mut self.structure {
            SsStructure::Contracting(c) => {
                take_basis(&mut c.basis, &mut it);
                if let AlphaParam::Trained(raw) = &mut c.alpha {
                    *raw = it.next().expect("missing α")[(0, 0)];
                }
            }
            SsStructure::Lipschitz(l) => take_basis(&mut l.basis, &mut it),
            SsStructure::Affine => {}
        }
        self.coeffs.set_parameters(&mut it);
        assert!(it.next().is_none(), "too many parameters");
    }

    fn record<'t>(&self, tape: &'t Tape, x0: &[f64], u: &DenseMatrix, p: &DenseMatrix) -> Result<Recorded<'t>, ModelError> {
        check_inputs(self.dims, x0, u, p)?;
        let mut binder = ParamBinder::new(tape);
        let bound = self.bind_structure(&mut binder)?;
        let coeffs = self.coeffs.bind(&mut binder);
        let params = binder.finish();
        let layout = Self::layout(self.dims, &self.structure);
        let comps = coeffs.evaluate(tape.leaf(p.clone()), &layout);
        let u_all = tape.leaf(u.clone());

        let mut x = tape.leaf(DenseMatrix::column_vector(x0));
        let mut xs = vec![x];
        let mut ys = Vec::with_capacity(u.rows());
        let mut blowup = None;
        for t in 0..u.rows() {
            let s = self.step_vars(&bound, &comps, &layout, t)?;
            let ut = u_all.row(t).t();
            let y = s.c.matmul(x) + s.d.matmul(ut) + s.by;
            let next = s.a.matmul(x) + s.b.matmul(ut) + s.bx;
            ys.push(y);
            if state_blew_up(&tape.value(next)) {
                blowup = Some(t);
                break;
            }
            x = next;
            xs.push(x);
        }
        Ok(Recorded {
            params,
            y: ys,
            x: xs,
            blowup,
        })
    }
}

/// LPV-LFR model with `w_t = ReLU(z_t)` and no `w → z` feedthrough.
#[derive(Debug, Clone, PartialEq)]
pub struct LpvLfrModel {
    pub dims: Dims,
    /// Size of `w` and `z`.
    pub n_w: usize,
    /// Affine map producing every block, in [`LpvLfrModel::layout`] order.
    pub map: AffineScheduleMap,
    pub seed: u64,
}

impl LpvLfrModel {
    pub fn layout(dims: Dims, n_w: usize) -> Vec<Component> {
        let Dims { n_x, n_u, n_y, .. } = dims;
        vec![
            Component::new("A", n_x, n_x),
            Component::new("Bw", n_x, n_w),
            Component::new("Bu", n_x, n_u),
            Component::new("Cz", n_w, n_x),
            Component::new("Dzu", n_w, n_u),
            Component::new("Cy", n_y, n_x),
            Component::new("Dyw", n_y, n_w),
            Component::new("Dyu", n_y, n_u),
            Component::new("bx", n_x, 1),
            Component::new("bz", n_w, 1),
            Component::new("by", n_y, 1),
        ]
    }

    /// Entries of `S₀, S₁` uniform in `(−0.1, 0.1)`.
    pub fn random(dims: Dims, n_w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = coeff::layout_size(&Self::layout(dims, n_w));
        Self {
            dims,
            n_w,
            map: AffineScheduleMap::random(width, dims.n_p, &mut rng),
            seed,
        }
    }

    pub fn zeros(dims: Dims, n_w: usize) -> Self {
        let width = coeff::layout_size(&Self::layout(dims, n_w));
        Self {
            dims,
            n_w,
            map: AffineScheduleMap::new(DenseMatrix::zeros(width, dims.n_p), DenseMatrix::zeros(width, 1)),
            seed: 0,
        }
    }

    /// Row offset of a named block inside `S₀`/`S₁`.
    pub fn block_offset(&self, name: &str) -> Option<(usize, Component)> {
        let mut off = 0;
        for c in Self::layout(self.dims, self.n_w) {
            if c.name == name {
                return Some((off, c));
            }
            off += c.size();
        }
        None
    }

    /// Overwrites the constant part `X₀` of a named block.
    pub fn set_constant_block(&mut self, name: &str, value: &DenseMatrix) {
        let (off, c) = self.block_offset(name).expect("unknown LFR block");
        assert_eq!(value.shape(), (c.rows, c.cols));
        for (i, v) in value.vec_col_major().into_iter().enumerate() {
            self.map.s0[(off + i, 0)] = v;
        }
    }

    /// Zeroes every coefficient (constant and scheduling parts) of a block.
    pub fn clear_block(&mut self, name: &str) {
        let (off, c) = self.block_offset(name).expect("unknown LFR block");
        for i in off..off + c.size() {
            self.map.s0[(i, 0)] = 0.0;
            for j in 0..self.dims.n_p {
                self.map.s1[(i, j)] = 0.0;
            }
        }
    }
}

impl LpvModel for LpvLfrModel {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn parameters(&self) -> Vec<DenseMatrix> {
        vec![self.map.s1.clone(), self.map.s0.clone()]
    }

    fn set_parameters(&mut self, params: &[DenseMatrix]) {
        assert_eq!(params.len(), 2, "LFR model has two parameter blocks");
        assert_eq!(params[0].shape(), self.map.s1.shape());
        assert_eq!(params[1].shape(), self.map.s0.shape());
        self.map = AffineScheduleMap::new(params[0].clone(), params[1].clone());
    }

    fn record<'t>(&self, tape: &'t Tape, x0: &[f64], u: &DenseMatrix, p: &DenseMatrix) -> Result<Recorded<'t>, ModelError> {
        check_inputs(self.dims, x0, u, p)?;
        let mut binder = ParamBinder::new(tape);
        let coeffs = CoeffMap::Affine(self.map.clone()).bind(&mut binder);
        let params = binder.finish();
        let layout = Self::layout(self.dims, self.n_w);
        let comps = coeffs.evaluate(tape.leaf(p.clone()), &layout);
        let u_all = tape.leaf(u.clone());

        let mut x = tape.leaf(DenseMatrix::column_vector(x0));
        let mut xs = vec![x];
        let mut ys = Vec::with_capacity(u.rows());
        let mut blowup = None;
        for t in 0..u.rows() {
            let blk = |i: usize| comps[i].row(t).reshape(layout[i].rows, layout[i].cols);
            let (a, bw, bu, cz, dzu, cy, dyw, dyu, bx, bz, by) = (
                blk(0),
                blk(1),
                blk(2),
                blk(3),
                blk(4),
                blk(5),
                blk(6),
                blk(7),
                blk(8),
                blk(9),
                blk(10),
            );
            let ut = u_all.row(t).t();
            let z = cz.matmul(x) + dzu.matmul(ut) + bz;
            let w = z.relu();
            let y = cy.matmul(x) + dyw.matmul(w) + dyu.matmul(ut) + by;
            let next = a.matmul(x) + bw.matmul(w) + bu.matmul(ut) + bx;
            ys.push(y);
            if state_blew_up(&tape.value(next)) {
                blowup = Some(t);
                break;
            }
            x = next;
            xs.push(x);
        }
        Ok(Recorded {
            params,
            y: ys,
            x: xs,
            blowup,
        })
    }
}

/// Any model this crate can train, simulate and store.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Ss(LpvSsModel),
    Lfr(LpvLfrModel),
}

impl Model {
    pub fn variant(&self) -> &'static str {
        match self {
            Model::Ss(m) => m.variant(),
            Model::Lfr(_) => "lfr",
        }
    }

    pub fn as_ss(&self) -> Option<&LpvSsModel> {
        match self {
            Model::Ss(m) => Some(m),
            Model::Lfr(_) => None,
        }
    }
}

impl From<LpvSsModel> for Model {
    fn from(m: LpvSsModel) -> Self {
        Model::Ss(m)
    }
}

impl From<LpvLfrModel> for Model {
    fn from(m: LpvLfrModel) -> Self {
        Model::Lfr(m)
    }
}

impl LpvModel for Model {
    fn dims(&self) -> Dims {
        match self {
            Model::Ss(m) => m.dims(),
            Model::Lfr(m) => m.dims(),
        }
    }

    fn parameters(&self) -> Vec<DenseMatrix> {
        match self {
            Model::Ss(m) => m.parameters(),
            Model::Lfr(m) => m.parameters(),
        }
    }

    fn set_parameters(&mut self, params: &[DenseMatrix]) {
        match self {
            Model::Ss(m) => m.set_parameters(params),
            Model::Lfr(m) => m.set_parameters(params),
        }
    }

    fn record<'t>(&self, tape: &'t Tape, x0: &[f64], u: &DenseMatrix, p: &DenseMatrix) -> Result<Recorded<'t>, ModelError> {
        match self {
            Model::Ss(m) => m.record(tape, x0, u, p),
            Model::Lfr(m) => m.record(tape, x0, u, p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssparam::{contraction_lmi_min_eig, lipschitz_lmi_min_eig};

    const DIMS: Dims = Dims {
        n_x: 3,
        n_u: 1,
        n_y: 1,
        n_p: 3,
    };

    fn small_mlp() -> CoeffSpec {
        CoeffSpec::Mlp {
            mode: MlpMode::PerComponent,
            hidden: vec![8, 8],
        }
    }

    fn random_signals(t: usize, seed: u64) -> (DenseMatrix, DenseMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            DenseMatrix::random_uniform(t, 1, -1.0, 1.0, &mut rng),
            DenseMatrix::random_uniform(t, 3, -1.0, 1.0, &mut rng),
        )
    }

    #[test]
    fn affine_with_zero_slope_is_constant() {
        let mut m = LpvSsModel::affine_random(DIMS, 4);
        if let CoeffMap::Affine(map) = &mut m.coeffs {
            map.s1 = DenseMatrix::zeros(map.s1.rows(), map.s1.cols());
        }
        let a = m.assemble_coeffs(&[0.1, 0.2, 0.3]).unwrap();
        let b = m.assemble_coeffs(&[-5.0, 4.0, 9.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lipschitz_coefficients_satisfy_lmi() {
        let m = LpvSsModel::lipschitz(DIMS, 1.0, 0.01, &small_mlp(), 3);
        let lyap = m.lyapunov().unwrap();
        let (_, p) = random_signals(20, 1);
        for step in m.coefficient_sequence(&p.scale(3.0)).unwrap() {
            assert!(lipschitz_lmi_min_eig(&step.w(), &lyap, 1.0).unwrap() > 0.0);
        }
    }

    #[test]
    fn contracting_zero_network_has_constant_a() {
        let mut m = LpvSsModel::contracting(DIMS, 0.01, &small_mlp(), 9);
        let zeros: Vec<DenseMatrix> = m
            .parameters()
            .iter()
            .enumerate()
            .map(|(i, p)| if i < 3 { p.clone() } else { DenseMatrix::zeros(p.rows(), p.cols()) })
            .collect();
        m.set_parameters(&zeros);
        let a1 = m.assemble_coeffs(&[0.0, 0.0, 0.0]).unwrap().a;
        let a2 = m.assemble_coeffs(&[1.0, -2.0, 3.0]).unwrap().a;
        assert_eq!(a1, a2);
        let lyap = m.lyapunov().unwrap();
        assert!(contraction_lmi_min_eig(&a1, &lyap, m.alpha().unwrap()).unwrap() > 0.0);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let m = LpvSsModel::affine(
            DIMS,
            AffineScheduleMap::new(DenseMatrix::filled(20, 3, 0.05), DenseMatrix::zeros(20, 1)),
        );
        let (_, p) = random_signals(15, 2);
        // Bias rows (the last four) carry p-dependence; clear them.
        let mut m = m;
        if let CoeffMap::Affine(map) = &mut m.coeffs {
            for r in 16..20 {
                for c in 0..3 {
                    map.s1[(r, c)] = 0.0;
                }
            }
        }
        let sim = m.simulate(&[0.0; 3], &DenseMatrix::zeros(15, 1), &p).unwrap();
        assert_eq!(sim.y.max_abs(), 0.0);
        assert_eq!(sim.x.rows(), 16);
    }

    #[test]
    fn lti_matches_convolution() {
        // Constant coefficients; y_t = D u_t + Σ_{k<t} C A^{t-1-k} B u_k + C A^t x0.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = DenseMatrix::random_uniform(3, 3, -0.4, 0.4, &mut rng);
        let b = DenseMatrix::random_uniform(3, 1, -1.0, 1.0, &mut rng);
        let c = DenseMatrix::random_uniform(1, 3, -1.0, 1.0, &mut rng);
        let d = DenseMatrix::filled(1, 1, 0.3);
        let w = DenseMatrix::vstack(&[&DenseMatrix::hstack(&[&a, &b]), &DenseMatrix::hstack(&[&c, &d])]);
        let mut s0 = w.vec_col_major();
        s0.extend([0.0; 4]);
        let m = LpvSsModel::affine(
            DIMS,
            AffineScheduleMap::new(DenseMatrix::zeros(20, 3), DenseMatrix::column_vector(&s0)),
        );
        let (u, p) = random_signals(20, 3);
        let x0 = [0.5, -0.2, 0.1];
        let sim = m.simulate(&x0, &u, &p).unwrap();

        let mut powers = vec![DenseMatrix::identity(3)];
        for k in 1..=20 {
            powers.push(powers[k - 1].matmul(&a));
        }
        let x0m = DenseMatrix::column_vector(&x0);
        for t in 0..20 {
            let mut y = c.matmul(&powers[t]).matmul(&x0m)[(0, 0)] + 0.3 * u[(t, 0)];
            for k in 0..t {
                y += c.matmul(&powers[t - 1 - k]).matmul(&b)[(0, 0)] * u[(k, 0)];
            }
            assert!((sim.y[(t, 0)] - y).abs() < 1e-10);
        }
    }

    #[test]
    fn blowup_is_reported() {
        let w = DenseMatrix::from_rows(&[&[10.0, 0.0, 0.0, 0.0], &[0.0, 10.0, 0.0, 0.0], &[0.0, 0.0, 10.0, 0.0], &[1.0, 0.0, 0.0, 0.0]]);
        let mut s0 = w.vec_col_major();
        s0.extend([0.0; 4]);
        let m = LpvSsModel::affine(
            DIMS,
            AffineScheduleMap::new(DenseMatrix::zeros(20, 3), DenseMatrix::column_vector(&s0)),
        );
        let (u, p) = random_signals(100, 3);
        let mut v = 1.0_f64;
        let mut expected = 0;
        while v * 10.0 <= STATE_LIMIT {
            v *= 10.0;
            expected += 1;
        }
        let err = m.simulate(&[1.0, 1.0, 1.0], &u, &p).unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteState { step } if step == expected));
        let (prefix, err) = m.simulate_prefix(&[1.0, 1.0, 1.0], &u, &p).unwrap();
        assert!(err.is_some());
        assert_eq!(prefix.y.rows(), expected + 1);
    }

    #[test]
    fn lfr_zero_weights_output_bias() {
        let mut m = LpvLfrModel::zeros(DIMS, 5);
        m.set_constant_block("by", &DenseMatrix::filled(1, 1, 0.7));
        let (u, p) = random_signals(10, 4);
        let sim = m.simulate(&[0.3, 0.1, -0.4], &u, &p).unwrap();
        assert!(sim.y.as_slice().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn lfr_without_cz_is_affine_ss() {
        let mut lfr = LpvLfrModel::random(DIMS, 6, 5);
        lfr.clear_block("Cz");
        lfr.clear_block("Dzu");
        lfr.clear_block("bz");
        // With z ≡ 0, w ≡ 0 and the LFR is the LPV-SS model (A, Bu, Cy, Dyu, bx, by).
        let pick = |name: &str| {
            let (off, c) = lfr.block_offset(name).unwrap();
            (lfr.map.s1.block(off, 0, c.size(), 3), lfr.map.s0.block(off, 0, c.size(), 1))
        };
        let (a1, a0) = pick("A");
        let (bu1, bu0) = pick("Bu");
        let (cy1, cy0) = pick("Cy");
        let (dy1, dy0) = pick("Dyu");
        let (bx1, bx0) = pick("bx");
        let (by1, by0) = pick("by");
        // Vec(W) column-major for W = [A Bu; Cy Dyu] (3+1 x 3+1).
        let mut rows1 = Vec::new();
        let mut rows0 = Vec::new();
        for col in 0..4 {
            for row in 0..4 {
                let (m1, m0, idx) = match (row < 3, col < 3) {
                    (true, true) => (&a1, &a0, col * 3 + row),
                    (true, false) => (&bu1, &bu0, row),
                    (false, true) => (&cy1, &cy0, col),
                    (false, false) => (&dy1, &dy0, 0),
                };
                rows1.push(m1.row(idx).to_vec());
                rows0.push(m0[(idx, 0)]);
            }
        }
        for i in 0..3 {
            rows1.push(bx1.row(i).to_vec());
            rows0.push(bx0[(i, 0)]);
        }
        rows1.push(by1.row(0).to_vec());
        rows0.push(by0[(0, 0)]);
        let s1 = DenseMatrix::from_row_major(20, 3, rows1.concat()).unwrap();
        let ss = LpvSsModel::affine(DIMS, AffineScheduleMap::new(s1, DenseMatrix::column_vector(&rows0)));
        let (u, p) = random_signals(30, 6);
        let x0 = [0.1, 0.2, 0.3];
        let a = lfr.simulate(&x0, &u, &p).unwrap();
        let b = ss.simulate(&x0, &u, &p).unwrap();
        assert!(a.y.sub(&b.y).max_abs() < 1e-12);
    }

    #[test]
    fn parameter_roundtrip_all_variants() {
        let models: Vec<Model> = vec![
            LpvSsModel::lipschitz(DIMS, 1.0, 0.01, &small_mlp(), 1).into(),
            LpvSsModel::contracting(DIMS, 0.01, &small_mlp(), 2).into(),
            LpvSsModel::affine_random(DIMS, 3).into(),
            LpvLfrModel::random(DIMS, 4, 4).into(),
        ];
        for m in models {
            let params = m.parameters();
            let mut copy = m.clone();
            copy.set_parameters(&params);
            assert_eq!(copy, m);
            let tape = Tape::new();
            let (u, p) = random_signals(3, 1);
            let rec = m.record(&tape, &[0.0; 3], &u, &p).unwrap();
            assert_eq!(rec.params.len(), params.len());
            for (v, p) in rec.params.iter().zip(&params) {
                assert_eq!(&v.value(), p);
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let m = LpvSsModel::affine_random(DIMS, 3);
        let (u, p) = random_signals(5, 1);
        assert!(matches!(m.simulate(&[0.0; 2], &u, &p), Err(ModelError::DimensionMismatch(_))));
        assert!(matches!(
            m.simulate(&[0.0; 3], &u, &DenseMatrix::zeros(4, 3)),
            Err(ModelError::DimensionMismatch(_))
        ));
    }
}
