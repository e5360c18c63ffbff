//! Central finite-difference oracle. Independent of the tape's backward rules:
//! it only ever calls forward passes.

use misinfo::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f32 = 1e-3;
pub const TOLERANCE: f64 = 1e-2;
/// Gradients smaller than this are compared in absolute terms; f32 round-off
/// in the loss dominates finite differences below it.
pub const MAGNITUDE_FLOOR: f64 = 5e-2;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            // keep clear of kinks (|x| < 2h) so differences stay one-sided-smooth
            let v: f32 = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces any output to a scalar with fixed random weights, so the upstream
/// gradient is not all ones.
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let n = tape.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let flat = tape.reshape(y, &[1, n]).unwrap();
    let w = tape.constant(Tensor::new(vec![n, 1], w).unwrap());
    let s = tape.matmul(flat, w).unwrap();
    tape.sum(s).unwrap()
}

#[derive(Debug)]
pub struct Report {
    pub checked: usize,
    pub worst: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.worst < TOLERANCE
    }
}

/// Checks d loss / d input for every element of every input (or `samples`
/// random elements per input when given).
pub fn check<F>(inputs: &[Tensor], samples: Option<usize>, seed: u64, f: F) -> Report
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).len()]))
        .collect();

    let eval = |inputs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = f(&mut tape, &vars);
        f64::from(tape.value(loss).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut report = Report { checked: 0, worst: 0.0 };
    for (i, input) in inputs.iter().enumerate() {
        let indices: Vec<usize> = match samples {
            Some(s) => (0..s).map(|_| rng.gen_range(0..input.len())).collect(),
            None => (0..input.len()).collect(),
        };
        for j in indices {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            // the f32 perturbation is not exactly 2h; divide by what was applied
            let span = f64::from(plus[i].data()[j]) - f64::from(minus[i].data()[j]);
            let numeric = (eval(&plus) - eval(&minus)) / span;
            let err = relative_error(f64::from(analytic[i][j]), numeric);
            report.worst = report.worst.max(err);
            report.checked += 1;
        }
    }
    report
}

/// Same oracle over named parameters of a store: `picks` lists
/// (parameter name, flat index) pairs to perturb.
pub fn check_params<F>(store: &ParamStore, picks: &[(String, usize)], f: F) -> Report
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    tape.backward(loss).unwrap();
    let mut with_grads = store.clone();
    with_grads.collect_grads(&tape);

    let eval = |s: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let loss = f(&mut tape, s);
        f64::from(tape.value(loss).item())
    };

    let mut report = Report { checked: 0, worst: 0.0 };
    for (name, j) in picks {
        let analytic = with_grads.grad(name).unwrap().map_or(0.0, |g| g[*j]);
        let mut plus = store.clone();
        plus.get_mut(name).unwrap().data_mut()[*j] += STEP;
        let mut minus = store.clone();
        minus.get_mut(name).unwrap().data_mut()[*j] -= STEP;
        let span = f64::from(plus.get(name).unwrap().data()[*j]) - f64::from(minus.get(name).unwrap().data()[*j]);
        let numeric = (eval(&plus) - eval(&minus)) / span;
        let err = relative_error(f64::from(analytic), numeric);
        report.worst = report.worst.max(err);
        report.checked += 1;
    }
    report
}
