//! Central finite-difference gradient checks in `f64`.
//!
//! Outputs are reduced to a scalar through a fixed pseudo-random projection
//! so that every output element contributes with a distinct weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::param::Module;
use crate::tensor::{Tape, Tensor, Var};

pub mod suite;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, zero when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let a = Tensor::<f64>::new(&[analytic.len()], analytic.to_vec()).expect("len");
    let n = Tensor::<f64>::new(&[numeric.len()], numeric.to_vec()).expect("len");
    a.rel_err(&n)
}

fn projection(shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn project<'t>(tape: &'t Tape<f64>, out: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let w = tape.constant(projection(&out.shape()));
    out.mul(w)?.sum()
}

/// Checks `f` with respect to every element of every input. Returns the
/// relative error over the concatenated gradient vector.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let loss = project(&tape, out)?;
    let grads = tape.backward(loss)?;

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<Var<f64>> = xs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        Ok(project(&tape, out)?.value().item())
    };

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        analytic.extend_from_slice(g.data());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + STEP;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - STEP;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * STEP));
        }
    }
    Ok(rel_err(&analytic, &numeric))
}

/// Checks the gradient of `loss` with respect to a module's named parameters.
/// At most `max_per_param` randomly chosen elements of each parameter are
/// perturbed.
pub fn check_module<M, F>(module: &mut M, max_per_param: usize, seed: u64, loss: F) -> Result<f64>
where
    M: Module<f64>,
    F: for<'t> Fn(&'t Tape<f64>, &M) -> Result<Var<'t, f64>>,
{
    let grads = {
        let tape = Tape::new();
        let out = loss(&tape, module)?;
        let l = project(&tape, out)?;
        tape.backward(l)?
    };
    let eval = |m: &M| -> Result<f64> {
        let tape = Tape::no_grad();
        let out = loss(&tape, m)?;
        Ok(project(&tape, out)?.value().item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(String, Vec<usize>)> = module
        .params()
        .iter()
        .filter(|p| p.trainable)
        .map(|p| {
            let n = p.numel();
            let idx = if n <= max_per_param {
                (0..n).collect()
            } else {
                rand::seq::index::sample(&mut rng, n, max_per_param).into_vec()
            };
            (p.name.clone(), idx)
        })
        .collect();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (name, idx) in picks {
        let g = grads.get(&name).cloned();
        for j in idx {
            analytic.push(g.as_ref().map_or(0.0, |g| g.data()[j]));
            let orig = value_at(module, &name, j);
            set_at(module, &name, j, orig + STEP);
            let up = eval(module)?;
            set_at(module, &name, j, orig - STEP);
            let down = eval(module)?;
            set_at(module, &name, j, orig);
            numeric.push((up - down) / (2.0 * STEP));
        }
    }
    Ok(rel_err(&analytic, &numeric))
}

fn value_at<M: Module<f64>>(m: &M, name: &str, j: usize) -> f64 {
    m.params()
        .into_iter()
        .find(|p| p.name == name)
        .map(|p| p.value.data()[j])
        .expect("param present")
}

fn set_at<M: Module<f64>>(m: &mut M, name: &str, j: usize, v: f64) {
    let p = m
        .params_mut()
        .into_iter()
        .find(|p| p.name == name)
        .expect("param present");
    p.value.data_mut()[j] = v;
}
