//! Central finite-difference verification of tape gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::tape::{Tape, Var};
use super::Tensor;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("function produced a non-finite value: {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over checked coordinates of |a - n| / max(|a|, |n|, 1e-8)
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
    pub checked: usize,
    /// (input index, flat coordinate) of the worst error
    pub worst: (usize, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Check gradients of a scalar function over every coordinate of its inputs
/// against central finite differences (f(x+εe) − f(x−εe)) / 2ε.
///
/// `f` must be a pure function of the leaves it is handed: it is re-invoked
/// on perturbed copies of the inputs.
pub fn grad_check<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    grad_check_subset(f, inputs, eps, tol, usize::MAX, 0)
}

/// As [`grad_check`], but for large inputs only a seeded random subset of
/// `max(max_coords, 200)` coordinates (over all inputs) is probed.
pub fn grad_check_subset<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    tol: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(GradCheckError::NonFinite(format!("loss = {value}")));
        }
        let grads = tape.backward(loss);
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| grads.grad(v, t.shape()))
            .collect::<Vec<_>>()
    };

    // Candidate coordinates as (input index, flat coordinate).
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        for c in 0..t.numel() {
            coords.push((i, c));
        }
    }
    let target = max_coords.max(200).min(coords.len());
    if coords.len() > target {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        coords.shuffle(&mut rng);
        coords.truncate(target);
    }

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        tol,
        pass: true,
        checked: 0,
        worst: (0, 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for &(i, c) in &coords {
        let orig = work[i].data()[c];
        work[i].data_mut()[c] = orig + eps;
        let fp = eval_value(&f, &work)?;
        work[i].data_mut()[c] = orig - eps;
        let fm = eval_value(&f, &work)?;
        work[i].data_mut()[c] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i].data()[c];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = (i, c);
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report.pass = report.max_rel_err < tol;
    Ok(report)
}

fn eval_value<F>(f: &F, tensors: &[Tensor<f64>]) -> Result<f64, GradCheckError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(GradCheckError::NonFinite(format!("loss = {value}")));
    }
    Ok(value)
}
