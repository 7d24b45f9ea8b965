//! Scheduling-to-coefficient maps: ReLU MLPs and affine maps, evaluated
//! for a whole scheduling trajectory at once.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::linalg::DenseMatrix;

/// Range of the uniform weight initialization.
pub const INIT_RANGE: f64 = 0.1;

/// One block of the coefficient-map output, stored column-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
}

impl Component {
    pub const fn new(name: &'static str, rows: usize, cols: usize) -> Self {
        Self { name, rows, cols }
    }

    pub fn size(&self) -> usize {
        self.rows * self.cols
    }
}

pub fn layout_size(layout: &[Component]) -> usize {
    layout.iter().map(Component::size).sum()
}

/// Registers parameters on a tape in a fixed order.
pub struct ParamBinder<'t> {
    tape: &'t Tape,
    leaves: Vec<Var<'t>>,
}

impl<'t> ParamBinder<'t> {
    pub fn new(tape: &'t Tape) -> Self {
        Self {
            tape,
            leaves: Vec::new(),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn bind(&mut self, value: &DenseMatrix) -> Var<'t> {
        let v = self.tape.leaf(value.clone());
        self.leaves.push(v);
        v
    }

    pub fn finish(self) -> Vec<Var<'t>> {
        self.leaves
    }
}

/// Feed-forward network with ReLU hidden layers and a linear output.
///
/// Weights are stored `in × out` so a batch of row inputs maps as
/// `H·W + 1·bᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<DenseMatrix>,
    biases: Vec<DenseMatrix>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            weights.push(DenseMatrix::random_uniform(w[0], w[1], -INIT_RANGE, INIT_RANGE, rng));
            biases.push(DenseMatrix::random_uniform(1, w[1], -INIT_RANGE, INIT_RANGE, rng));
        }
        Self {
            widths: widths.to_vec(),
            weights,
            biases,
        }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            widths: widths.to_vec(),
            weights: widths.windows(2).map(|w| DenseMatrix::zeros(w[0], w[1])).collect(),
            biases: widths.windows(2).map(|w| DenseMatrix::zeros(1, w[1])).collect(),
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn parameters(&self, out: &mut Vec<DenseMatrix>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.clone());
            out.push(b.clone());
        }
    }

    fn set_parameters(&mut self, it: &mut dyn Iterator<Item = &DenseMatrix>) {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            *w = take_shaped(it, w.shape());
            *b = take_shaped(it, b.shape());
        }
    }

    fn bind<'t>(&self, binder: &mut ParamBinder<'t>) -> Vec<(Var<'t>, Var<'t>)> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (binder.bind(w), binder.bind(b)))
            .collect()
    }

    fn forward<'t>(layers: &[(Var<'t>, Var<'t>)], input: Var<'t>) -> Var<'t> {
        let batch = input.rows();
        let mut h = input;
        for (i, (w, b)) in layers.iter().enumerate() {
            h = h.matmul(*w) + b.replicate_rows(batch);
            if i + 1 < layers.len() {
                h = h.relu();
            }
        }
        h
    }
}

/// `ψ(p) = S₁·p + S₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineScheduleMap {
    /// `output × n_p`.
    pub s1: DenseMatrix,
    /// `output × 1`.
    pub s0: DenseMatrix,
}

impl AffineScheduleMap {
    pub fn new(s1: DenseMatrix, s0: DenseMatrix) -> Self {
        assert_eq!(s0.shape(), (s1.rows(), 1), "S0 must be a column matching S1");
        Self { s1, s0 }
    }

    pub fn random<R: Rng + ?Sized>(output: usize, n_p: usize, rng: &mut R) -> Self {
        Self::new(
            DenseMatrix::random_uniform(output, n_p, -INIT_RANGE, INIT_RANGE, rng),
            DenseMatrix::random_uniform(output, 1, -INIT_RANGE, INIT_RANGE, rng),
        )
    }

    pub fn output_width(&self) -> usize {
        self.s1.rows()
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = self.s1.matvec(p);
        for (o, s) in out.iter_mut().zip(self.s0.as_slice()) {
            *o += s;
        }
        out
    }

    fn forward<'t>(s1: Var<'t>, s0: Var<'t>, p: Var<'t>) -> Var<'t> {
        p.matmul(s1.t()) + s0.t().replicate_rows(p.rows())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlpMode {
    /// One network per component.
    PerComponent,
    /// One network whose output is split by offsets.
    Trunk,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoeffMap {
    Mlp { mode: MlpMode, nets: Vec<Mlp> },
    Affine(AffineScheduleMap),
}

/// A [`CoeffMap`] whose parameters live on a tape.
pub enum BoundCoeffMap<'t> {
    Mlp {
        mode: MlpMode,
        nets: Vec<Vec<(Var<'t>, Var<'t>)>>,
    },
    Affine {
        s1: Var<'t>,
        s0: Var<'t>,
    },
}

impl CoeffMap {
    pub fn mlp<R: Rng + ?Sized>(mode: MlpMode, n_p: usize, hidden: &[usize], layout: &[Component], rng: &mut R) -> Self {
        let widths = |out: usize| {
            let mut w = vec![n_p];
            w.extend_from_slice(hidden);
            w.push(out);
            w
        };
        let nets = match mode {
            MlpMode::PerComponent => layout.iter().map(|c| Mlp::new(&widths(c.size()), rng)).collect(),
            MlpMode::Trunk => vec![Mlp::new(&widths(layout_size(layout)), rng)],
        };
        CoeffMap::Mlp { mode, nets }
    }

    pub fn affine<R: Rng + ?Sized>(n_p: usize, layout: &[Component], rng: &mut R) -> Self {
        CoeffMap::Affine(AffineScheduleMap::random(layout_size(layout), n_p, rng))
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        match self {
            CoeffMap::Mlp { nets, .. } => {
                let w = nets[0].widths();
                w[1..w.len() - 1].to_vec()
            }
            CoeffMap::Affine(_) => Vec::new(),
        }
    }

    pub fn parameters(&self, out: &mut Vec<DenseMatrix>) {
        match self {
            CoeffMap::Mlp { nets, .. } => nets.iter().for_each(|n| n.parameters(out)),
            CoeffMap::Affine(map) => {
                out.push(map.s1.clone());
                out.push(map.s0.clone());
            }
        }
    }

    pub fn set_parameters(&mut self, it: &mut dyn Iterator<Item = &DenseMatrix>) {
        match self {
            CoeffMap::Mlp { nets, .. } => nets.iter_mut().for_each(|n| n.set_parameters(it)),
            CoeffMap::Affine(map) => {
                map.s1 = take_shaped(it, map.s1.shape());
                map.s0 = take_shaped(it, map.s0.shape());
            }
        }
    }

    pub fn bind<'t>(&self, binder: &mut ParamBinder<'t>) -> BoundCoeffMap<'t> {
        match self {
            CoeffMap::Mlp { mode, nets } => BoundCoeffMap::Mlp {
                mode: *mode,
                nets: nets.iter().map(|n| n.bind(binder)).collect(),
            },
            CoeffMap::Affine(map) => BoundCoeffMap::Affine {
                s1: binder.bind(&map.s1),
                s0: binder.bind(&map.s0),
            },
        }
    }
}

impl<'t> BoundCoeffMap<'t> {
    /// Evaluates the map on every row of `p` (`T × n_p`) and returns one
    /// `T × size` block per layout component.
    pub fn evaluate(&self, p: Var<'t>, layout: &[Component]) -> Vec<Var<'t>> {
        let split = |all: Var<'t>| {
            let mut c0 = 0;
            layout
                .iter()
                .map(|c| {
                    let part = all.slice(0, c0, all.rows(), c.size());
                    c0 += c.size();
                    part
                })
                .collect()
        };
        match self {
            BoundCoeffMap::Mlp {
                mode: MlpMode::PerComponent,
                nets,
            } => nets.iter().map(|layers| Mlp::forward(layers, p)).collect(),
            BoundCoeffMap::Mlp {
                mode: MlpMode::Trunk,
                nets,
            } => split(Mlp::forward(&nets[0], p)),
            BoundCoeffMap::Affine { s1, s0 } => split(AffineScheduleMap::forward(*s1, *s0, p)),
        }
    }
}

fn take_shaped(it: &mut dyn Iterator<Item = &DenseMatrix>, shape: (usize, usize)) -> DenseMatrix {
    let m = it.next().expect("parameter list is too short");
    assert_eq!(m.shape(), shape, "parameter shape mismatch");
    m.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_map_matches_plain_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let map = AffineScheduleMap::random(5, 3, &mut rng);
        let layout = [Component::new("a", 5, 1)];
        let coeff = CoeffMap::Affine(map.clone());
        let tape = Tape::new();
        let mut binder = ParamBinder::new(&tape);
        let bound = coeff.bind(&mut binder);
        let p = DenseMatrix::from_rows(&[&[0.1, 0.2, 0.3], &[-1.0, 0.0, 2.0]]);
        let out = bound.evaluate(tape.leaf(p.clone()), &layout)[0].value();
        for t in 0..2 {
            let expected = map.apply(p.row(t));
            for (a, b) in out.row(t).iter().zip(&expected) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_mlp_outputs_zero() {
        let mlp = Mlp::zeros(&[3, 4, 2]);
        let coeff = CoeffMap::Mlp {
            mode: MlpMode::Trunk,
            nets: vec![mlp],
        };
        let tape = Tape::new();
        let mut binder = ParamBinder::new(&tape);
        let bound = coeff.bind(&mut binder);
        let layout = [Component::new("a", 1, 1), Component::new("b", 1, 1)];
        let out = bound.evaluate(tape.leaf(DenseMatrix::filled(4, 3, 2.0)), &layout);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|v| v.value().max_abs() == 0.0));
    }

    #[test]
    fn parameter_roundtrip_keeps_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layout = [Component::new("x", 2, 2), Component::new("b", 3, 1)];
        let coeff = CoeffMap::mlp(MlpMode::PerComponent, 3, &[4], &layout, &mut rng);
        let mut params = Vec::new();
        coeff.parameters(&mut params);
        assert_eq!(params.len(), 8);
        let mut other = CoeffMap::mlp(MlpMode::PerComponent, 3, &[4], &layout, &mut rng);
        other.set_parameters(&mut params.iter());
        assert_eq!(other, coeff);
    }
}
