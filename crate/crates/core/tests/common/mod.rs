#![allow(dead_code)]

use lpvss::autodiff::{Tape, Var};
use lpvss::linalg::DenseMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rows: usize, cols: usize, scale: f64, seed: u64) -> DenseMatrix {
    DenseMatrix::random_uniform(rows, cols, -scale, scale, &mut rng(seed))
}

/// `Σ v ⊙ R` for a fixed random `R`, so every entry of `v` reaches the loss.
pub fn weighted<'t>(v: Var<'t>, seed: u64) -> Var<'t> {
    let r = random(v.rows(), v.cols(), 1.0, seed ^ 0x5eed);
    v.mul(v.tape().leaf(r)).sum()
}

/// Largest entrywise gap between the tape gradient and a central finite
/// difference, relative to the largest finite-difference entry, over all
/// inputs.
pub fn gradient_error(inputs: &[DenseMatrix], h: f64, f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>) -> f64 {
    let eval = |vals: &[DenseMatrix]| {
        let tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|m| tape.leaf(m.clone())).collect();
        f(&tape, &vars).scalar_value()
    };
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss);
    let analytic: Vec<DenseMatrix> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let mut worst_gap: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut vals = inputs.to_vec();
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let orig = vals[k].as_slice()[i];
            vals[k].as_mut_slice()[i] = orig + h;
            let up = eval(&vals);
            vals[k].as_mut_slice()[i] = orig - h;
            let down = eval(&vals);
            vals[k].as_mut_slice()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            worst_gap = worst_gap.max((fd - analytic[k].as_slice()[i]).abs());
            scale = scale.max(fd.abs());
        }
    }
    worst_gap / scale.max(1e-12)
}
