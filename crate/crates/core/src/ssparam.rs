//! Direct parametrizations of contracting and γ-Lipschitz LPV-SS
//! coefficient matrices.
//!
//! Both constructions share a state basis `Q Λ` where `Q = cayley(𝒴 − 𝒴ᵀ)`
//! is orthogonal and `Λ = diag(exp(d))`. The scheduling dependent part is
//! a contraction `M(p)` produced by the (extended) Cayley transform of
//!
//! ```text
//! N(p) = XᵀX + Y − Yᵀ + ZᵀZ + εI,
//! ```
//!
//! whose symmetric part is at least `εI`. For any parameter values:
//!
//! * contracting: `A(p) = α QΛ⁻¹ M(p) ΛQᵀ` satisfies
//!   `α²𝒳 − Aᵀ𝒳A ≻ 0` with `𝒳 = QΛ²Qᵀ`;
//! * Lipschitz: `W(p) = diag(QΛ⁻¹, I) M(p) diag(ΛQᵀ, γI)` satisfies
//!   `diag(𝒳, γ²I) − Wᵀ diag(𝒳, I) W ≻ 0`.
//!
//! The tape-level functions (`*_var`) are what training differentiates
//! through; the plain wrappers evaluate the same code on a scratch tape.
//! [`inverse_lemma1`] and [`inverse_lemma2`] recover parameters from a
//! given contraction or orthogonal matrix and are used to check that the
//! maps are onto.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::linalg::{cayley, sym_eig, DenseMatrix, LinalgError};

/// Default ε in `N(p)`.
pub const DEFAULT_EPSILON: f64 = 1e-2;
/// Lower end of the trained contraction rate.
pub const ALPHA_MIN: f64 = 0.5;

const NORM_BOUND_SLACK: f64 = 1e-10;
const MAX_EPSILON_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SsParamError {
    #[error("matrix violates the norm bound: largest eigenvalue of MᵀM is {max_eig}")]
    NormBoundViolated { max_eig: f64 },
    #[error("matrix is not orthogonal (‖QᵀQ − I‖ = {deviation:e})")]
    NotOrthogonal { deviation: f64 },
    #[error("no ε > 0 found with H − εI ⪰ 0 after {0} halvings")]
    EpsilonSearchFailed(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// `N = XᵀX + Y − Yᵀ + ZᵀZ + εI`.
pub fn build_n(x: &DenseMatrix, y: &DenseMatrix, z: Option<&DenseMatrix>, epsilon: f64) -> DenseMatrix {
    let tape = Tape::new();
    let n = build_n_var(tape.leaf(x.clone()), tape.leaf(y.clone()), z.map(|z| tape.leaf(z.clone())), epsilon);
    n.value()
}

pub fn build_n_var<'t>(x: Var<'t>, y: Var<'t>, z: Option<Var<'t>>, epsilon: f64) -> Var<'t> {
    let tape = x.tape();
    let n = x.cols();
    let mut acc = x.t().matmul(x) + (y - y.t());
    if let Some(z) = z {
        acc = acc + z.t().matmul(z);
    }
    acc + tape.leaf(DenseMatrix::identity(n).scale(epsilon))
}

/// `[ (I−N) ; −2Z ] (I+N)⁻¹`, evaluated as one solve against `(I+N)ᵀ`.
/// Without `z` this is the ordinary Cayley transform.
pub fn extended_cayley_var<'t>(n: Var<'t>, z: Option<Var<'t>>) -> Result<Var<'t>, AutodiffError> {
    let tape = n.tape();
    let eye = tape.identity(n.rows());
    let numerator = match z {
        Some(z) => Var::vcat(&[eye - n, z.scale(-2.0)]),
        None => eye - n,
    };
    Ok((eye + n).t().solve(numerator.t())?.t())
}

pub fn cayley_var(m: Var<'_>) -> Result<Var<'_>, AutodiffError> {
    extended_cayley_var(m, None)
}

/// Plain-value extended Cayley transform.
pub fn extended_cayley(n: &DenseMatrix, z: Option<&DenseMatrix>) -> Result<DenseMatrix, SsParamError> {
    let tape = Tape::new();
    let out = extended_cayley_var(tape.leaf(n.clone()), z.map(|z| tape.leaf(z.clone())))?;
    Ok(out.value())
}

/// `d` and `𝒴`, which fix the Lyapunov matrix `𝒳 = QΛ²Qᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBasis {
    pub d: Vec<f64>,
    pub ycal: DenseMatrix,
}

impl StateBasis {
    pub fn new(d: Vec<f64>, ycal: DenseMatrix) -> Self {
        assert_eq!(ycal.shape(), (d.len(), d.len()), "𝒴 must be n_x × n_x");
        Self { d, ycal }
    }

    pub fn zeros(n_x: usize) -> Self {
        Self::new(vec![0.0; n_x], DenseMatrix::zeros(n_x, n_x))
    }

    pub fn n_x(&self) -> usize {
        self.d.len()
    }

    pub fn orthogonal(&self) -> Result<DenseMatrix, LinalgError> {
        cayley(&self.ycal.sub(&self.ycal.transpose()))
    }

    /// `𝒳 = QΛ²Qᵀ`.
    pub fn lyapunov(&self) -> Result<DenseMatrix, LinalgError> {
        let q = self.orthogonal()?;
        let lam2: Vec<f64> = self.d.iter().map(|v| (2.0 * v).exp()).collect();
        Ok(q.matmul(&DenseMatrix::diag(&lam2)).matmul_t(&q))
    }
}

/// The state basis recorded on a tape: `QΛ⁻¹` and `ΛQᵀ`.
#[derive(Debug, Clone, Copy)]
pub struct StateFrame<'t> {
    pub to_state: Var<'t>,
    pub from_state: Var<'t>,
}

impl<'t> StateFrame<'t> {
    pub fn new(d: Var<'t>, ycal: Var<'t>) -> Result<Self, AutodiffError> {
        let q = cayley_var(ycal - ycal.t())?;
        let lam = d.exp().diag();
        let lam_inv = d.neg().exp().diag();
        Ok(Self {
            to_state: q.matmul(lam_inv),
            from_state: lam.matmul(q.t()),
        })
    }
}

/// Maps an unconstrained scalar into `(ALPHA_MIN, 1)`.
pub fn alpha_from_raw(raw: f64) -> f64 {
    ALPHA_MIN + (1.0 - ALPHA_MIN) / (1.0 + (-raw).exp())
}

pub fn alpha_var<'t>(raw: Var<'t>) -> Var<'t> {
    let tape = raw.tape();
    raw.sigmoid().scale(1.0 - ALPHA_MIN) + tape.scalar(ALPHA_MIN)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaParam {
    /// Trained through `α = α_min + (1 − α_min)·sigmoid(raw)`.
    Trained(f64),
    /// Held at the given value in `(0, 1]`.
    Fixed(f64),
}

impl AlphaParam {
    pub fn value(&self) -> f64 {
        match *self {
            AlphaParam::Trained(raw) => alpha_from_raw(raw),
            AlphaParam::Fixed(a) => a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractingParam {
    pub basis: StateBasis,
    pub alpha: AlphaParam,
    pub epsilon: f64,
}

impl ContractingParam {
    pub fn n_x(&self) -> usize {
        self.basis.n_x()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.value()
    }
}

/// Dimensions of the γ-Lipschitz construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LipschitzDims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
}

impl LipschitzDims {
    /// `n = n_x + min(n_u, n_y)`.
    pub fn n(&self) -> usize {
        self.n_x + self.n_u.min(self.n_y)
    }

    /// `n₀ = |n_y − n_u|`.
    pub fn n0(&self) -> usize {
        self.n_y.abs_diff(self.n_u)
    }

    /// `M(p)` is the transpose of the Cayley stack when `n_y < n_u`.
    pub fn wide(&self) -> bool {
        self.n_y < self.n_u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzParam {
    pub basis: StateBasis,
    pub gamma: f64,
    pub epsilon: f64,
    pub dims: LipschitzDims,
}

impl LipschitzParam {
    pub fn new(basis: StateBasis, gamma: f64, epsilon: f64, n_u: usize, n_y: usize) -> Self {
        assert!(gamma > 0.0, "γ must be positive");
        assert!(epsilon > 0.0, "ε must be positive");
        let dims = LipschitzDims {
            n_x: basis.n_x(),
            n_u,
            n_y,
        };
        Self {
            basis,
            gamma,
            epsilon,
            dims,
        }
    }
}

/// Output of the coefficient map at one scheduling value.
///
/// The contracting variant uses `x`, `y` (`n_x × n_x`) together with
/// `b`, `c`, `d`; the Lipschitz variant uses `x`, `y` (`n × n`) and `z`
/// (`n₀ × n`, absent when `n₀ = 0`). `bias` is `[b_x; b_y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiOutput {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
    pub z: Option<DenseMatrix>,
    pub b: Option<DenseMatrix>,
    pub c: Option<DenseMatrix>,
    pub d: Option<DenseMatrix>,
    pub bias: Vec<f64>,
}

impl PhiOutput {
    pub fn lipschitz_zeros(dims: LipschitzDims) -> Self {
        let n = dims.n();
        Self {
            x: DenseMatrix::zeros(n, n),
            y: DenseMatrix::zeros(n, n),
            z: (dims.n0() > 0).then(|| DenseMatrix::zeros(dims.n0(), n)),
            b: None,
            c: None,
            d: None,
            bias: vec![0.0; dims.n_x + dims.n_y],
        }
    }
}

/// `α·QΛ⁻¹·cayley(N)·ΛQᵀ` on a tape.
pub fn contracting_a_var<'t>(
    frame: &StateFrame<'t>,
    alpha: Var<'t>,
    x: Var<'t>,
    y: Var<'t>,
    epsilon: f64,
) -> Result<Var<'t>, AutodiffError> {
    let m = cayley_var(build_n_var(x, y, None, epsilon))?;
    Ok(frame.to_state.matmul(m).matmul(frame.from_state).scale_by(alpha))
}

/// The constant outer factors `diag(QΛ⁻¹, I)` and `diag(ΛQᵀ, γI)`.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzFrame<'t> {
    pub left: Var<'t>,
    pub right: Var<'t>,
}

impl<'t> LipschitzFrame<'t> {
    pub fn new(state: &StateFrame<'t>, dims: LipschitzDims, gamma: f64) -> Self {
        let tape = state.to_state.tape();
        let n_x = dims.n_x;
        let left = block_diag_var(state.to_state, tape.identity(dims.n_y));
        let right = block_diag_var(state.from_state, tape.leaf(DenseMatrix::identity(dims.n_u).scale(gamma)));
        debug_assert_eq!(left.shape(), (n_x + dims.n_y, n_x + dims.n_y));
        Self { left, right }
    }
}

fn block_diag_var<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let tape = a.tape();
    if b.rows() == 0 || b.cols() == 0 {
        let pad_r = tape.zeros(a.rows(), b.cols());
        let pad_b = tape.zeros(b.rows(), a.cols() + b.cols());
        return if b.rows() == 0 && b.cols() == 0 {
            a
        } else if b.rows() == 0 {
            Var::hcat(&[a, pad_r])
        } else {
            Var::vcat(&[a, pad_b])
        };
    }
    let top = Var::hcat(&[a, tape.zeros(a.rows(), b.cols())]);
    let bottom = Var::hcat(&[tape.zeros(b.rows(), a.cols()), b]);
    Var::vcat(&[top, bottom])
}

/// `W(p)` on a tape, `(n_x + n_y) × (n_x + n_u)`.
pub fn lipschitz_w_var<'t>(
    frame: &LipschitzFrame<'t>,
    dims: LipschitzDims,
    x: Var<'t>,
    y: Var<'t>,
    z: Option<Var<'t>>,
    epsilon: f64,
) -> Result<Var<'t>, AutodiffError> {
    let n = build_n_var(x, y, z, epsilon);
    let stack = extended_cayley_var(n, z)?;
    let m = if dims.wide() { stack.t() } else { stack };
    Ok(frame.left.matmul(m).matmul(frame.right))
}

fn check_square(name: &str, m: &DenseMatrix, n: usize) -> Result<(), SsParamError> {
    if m.shape() != (n, n) {
        return Err(SsParamError::ShapeMismatch(format!(
            "{name} is {}x{}, expected {n}x{n}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

/// Plain-value `A(p)` for one coefficient-map output.
pub fn contracting_a(params: &ContractingParam, phi: &PhiOutput) -> Result<DenseMatrix, SsParamError> {
    let n_x = params.n_x();
    check_square("X", &phi.x, n_x)?;
    check_square("Y", &phi.y, n_x)?;
    let tape = Tape::new();
    let frame = StateFrame::new(
        tape.leaf(DenseMatrix::column_vector(&params.basis.d)),
        tape.leaf(params.basis.ycal.clone()),
    )?;
    let alpha = tape.scalar(params.alpha());
    let a = contracting_a_var(&frame, alpha, tape.leaf(phi.x.clone()), tape.leaf(phi.y.clone()), params.epsilon)?;
    Ok(a.value())
}

/// Plain-value `W(p)` for one coefficient-map output.
pub fn lipschitz_w(params: &LipschitzParam, phi: &PhiOutput) -> Result<DenseMatrix, SsParamError> {
    let dims = params.dims;
    check_square("X", &phi.x, dims.n())?;
    check_square("Y", &phi.y, dims.n())?;
    match (&phi.z, dims.n0()) {
        (None, 0) => {}
        (Some(z), n0) if z.shape() == (n0, dims.n()) => {}
        (z, n0) => {
            return Err(SsParamError::ShapeMismatch(format!(
                "Z has shape {:?}, expected {n0}x{}",
                z.as_ref().map(|z| z.shape()),
                dims.n()
            )))
        }
    }
    let tape = Tape::new();
    let state = StateFrame::new(
        tape.leaf(DenseMatrix::column_vector(&params.basis.d)),
        tape.leaf(params.basis.ycal.clone()),
    )?;
    let frame = LipschitzFrame::new(&state, dims, params.gamma);
    let w = lipschitz_w_var(
        &frame,
        dims,
        tape.leaf(phi.x.clone()),
        tape.leaf(phi.y.clone()),
        phi.z.as_ref().map(|z| tape.leaf(z.clone())),
        params.epsilon,
    )?;
    Ok(w.value())
}

/// Splits `W` into `(A, B, C, D)` with `A` the top-left `n_x × n_x` block.
pub fn split_w(w: &DenseMatrix, n_x: usize) -> (DenseMatrix, DenseMatrix, DenseMatrix, DenseMatrix) {
    let (rows, cols) = w.shape();
    (
        w.block(0, 0, n_x, n_x),
        w.block(0, n_x, n_x, cols - n_x),
        w.block(n_x, 0, rows - n_x, n_x),
        w.block(n_x, n_x, rows - n_x, cols - n_x),
    )
}

/// Factors recovered from a contraction `M` by [`inverse_lemma1`].
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Factors {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
    pub z: Option<DenseMatrix>,
    /// The ε actually used, after halving.
    pub epsilon: f64,
}

/// Recovers `(X, Y, Z)` with `extended_cayley(build_n(X, Y, Z, ε), Z) = M`
/// for a tall or square `M` with `MᵀM ≺ I`.
///
/// `ε` is halved until `H − εI ⪰ 0`, where
/// `H = ½(N + Nᵀ) − ZᵀZ`, `N = cayley(M₁)` and `Z = −½M₂(I + N)`.
pub fn inverse_lemma1(m: &DenseMatrix, epsilon: f64) -> Result<Lemma1Factors, SsParamError> {
    let (rows, cols) = m.shape();
    if rows < cols {
        return Err(SsParamError::ShapeMismatch(format!(
            "inverse_lemma1 needs a tall or square matrix, got {rows}x{cols}"
        )));
    }
    let gram = m.t_matmul(m);
    let max_eig = sym_eig(&gram)?.max();
    if max_eig >= 1.0 - NORM_BOUND_SLACK {
        return Err(SsParamError::NormBoundViolated { max_eig });
    }

    let m1 = m.block(0, 0, cols, cols);
    let n = cayley(&m1)?;
    let eye = DenseMatrix::identity(cols);
    let z = (rows > cols).then(|| m.block(cols, 0, rows - cols, cols).matmul(&eye.add(&n)).scale(-0.5));
    let mut h = n.add(&n.transpose()).scale(0.5);
    if let Some(z) = &z {
        h = h.sub(&z.t_matmul(z));
    }

    let mut eps = epsilon;
    let mut found = None;
    for _ in 0..=MAX_EPSILON_HALVINGS {
        let shifted = h.sub(&eye.scale(eps));
        let eig = sym_eig(&shifted)?;
        if eig.min() >= 0.0 {
            found = Some(eig);
            break;
        }
        eps *= 0.5;
    }
    let eig = found.ok_or(SsParamError::EpsilonSearchFailed(MAX_EPSILON_HALVINGS))?;

    // Ĥ = V Σ Vᵀ, so X = Σ^{1/2} Vᵀ gives XᵀX = Ĥ.
    let sqrt_sigma: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    let x = DenseMatrix::diag(&sqrt_sigma).matmul_t(&eig.eigenvectors);
    let y = n.scale(0.5);
    Ok(Lemma1Factors { x, y, z, epsilon: eps })
}

/// [`inverse_lemma1`] for either orientation: wide matrices are handled
/// through their transpose, matching how `W(p)` is assembled when
/// `n_y < n_u`.
pub fn inverse_extended_cayley(m: &DenseMatrix, epsilon: f64) -> Result<Lemma1Factors, SsParamError> {
    if m.rows() < m.cols() {
        inverse_lemma1(&m.transpose(), epsilon)
    } else {
        inverse_lemma1(m, epsilon)
    }
}

/// Recovers `𝒴` (strictly lower triangular) with `cayley(𝒴 − 𝒴ᵀ) = Q`.
pub fn inverse_lemma2(q: &DenseMatrix) -> Result<DenseMatrix, SsParamError> {
    if !q.is_square() {
        return Err(SsParamError::ShapeMismatch(format!("Q is {}x{}", q.rows(), q.cols())));
    }
    let deviation = q.t_matmul(q).sub(&DenseMatrix::identity(q.rows())).max_abs();
    if deviation > 1e-9 {
        return Err(SsParamError::NotOrthogonal { deviation });
    }
    let n = cayley(q)?;
    Ok(n.strict_lower())
}

/// Smallest eigenvalue of `α²𝒳 − Aᵀ𝒳A`.
pub fn contraction_lmi_min_eig(a: &DenseMatrix, lyapunov: &DenseMatrix, alpha: f64) -> Result<f64, LinalgError> {
    let lmi = lyapunov.scale(alpha * alpha).sub(&a.t_matmul(&lyapunov.matmul(a)));
    Ok(sym_eig(&lmi)?.min())
}

/// Smallest eigenvalue of `diag(𝒳, γ²I) − Wᵀ diag(𝒳, I) W`.
pub fn lipschitz_lmi_min_eig(w: &DenseMatrix, lyapunov: &DenseMatrix, gamma: f64) -> Result<f64, LinalgError> {
    let n_x = lyapunov.rows();
    let n_y = w.rows() - n_x;
    let n_u = w.cols() - n_x;
    let x_gamma = DenseMatrix::block_diag(lyapunov, &DenseMatrix::identity(n_u).scale(gamma * gamma));
    let x_eye = DenseMatrix::block_diag(lyapunov, &DenseMatrix::identity(n_y));
    let lmi = x_gamma.sub(&w.t_matmul(&x_eye.matmul(w)));
    Ok(sym_eig(&lmi)?.min())
}
