//! Central-difference verification of tape gradients.

use crate::error::Result;
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Identifies one scalar coordinate: `(input index, flat element index)`.
pub type Coord = (usize, usize);

/// Max relative error between analytic and central-difference gradients
/// over every coordinate of every input.
///
/// `f` must build a scalar on the given tape from leaves bound to `inputs`.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], h: T) -> Result<T>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let coords: Vec<Coord> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    grad_check_coords(f, inputs, &coords, h)
}

/// Like [`grad_check`] restricted to the listed coordinates.
pub fn grad_check_coords<T, F>(f: F, inputs: &[Tensor<T>], coords: &[Coord], h: T) -> Result<T>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_grads(&f, inputs)?;
    let two_h = h + h;
    let mut worst = T::zero();
    let mut probe = inputs.to_vec();
    for &(i, j) in coords {
        let orig = probe[i].data()[j];
        probe[i].data_mut()[j] = orig + h;
        let up = evaluate(&f, &probe)?;
        probe[i].data_mut()[j] = orig - h;
        let down = evaluate(&f, &probe)?;
        probe[i].data_mut()[j] = orig;
        let numeric = (up - down) / two_h;
        let a = analytic[i].data()[j];
        let denom = T::one().max(a.abs()).max(numeric.abs());
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Gradients of `f` at `inputs` via one backward pass.
pub fn analytic_grads<T, F>(f: &F, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    Ok(vars
        .iter()
        .map(|&v| tape.grad(v).cloned().expect("leaf gradient"))
        .collect())
}

fn evaluate<T, F>(f: &F, inputs: &[Tensor<T>]) -> Result<T>
where
    T: Real,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).data()[0])
}
