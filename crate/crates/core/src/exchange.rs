//! Energy exchange: resize every energy matrix to the largest extent, mix
//! the `2n`-deep stack per cell with a `1×1` convolution, and resize each
//! mixed channel back to its source extent.
//!
//! One implementation serves both spatial and channel energies, each with
//! its own [`ExchangeParams`]. Stack order is `[rgb¹..rgbⁿ, x¹..xⁿ]`.

use crate::error::{config_err, contract_err, Result};
use crate::params::param_tree;
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

param_tree! {
    pub struct ExchangeParams<P> {
        /// `2n×2n` mixing weights; entry `(k, o)` carries input `k` to output `o`.
        w_mix: P => slot,
        /// `2n` per-output offsets.
        bias: P => slot,
    }
}

impl<T: Real> ExchangeParams<Tensor<T>> {
    /// Identity mixing and zero bias for `n` scales.
    pub fn init_identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(config_err!("exchange needs at least one scale"));
        }
        Ok(Self {
            w_mix: Tensor::eye(2 * n),
            bias: Tensor::zeros(&[2 * n]),
        })
    }

    /// Uniform averaging of all `2n` entries, zero bias.
    pub fn averaging(n: usize) -> Self {
        let k = 2 * n;
        Self {
            w_mix: Tensor::full(&[k, k], T::one() / T::from_count(k)),
            bias: Tensor::zeros(&[k]),
        }
    }

    pub fn width(&self) -> usize {
        self.w_mix.shape()[0]
    }
}

/// Mixes `energies` (square, `2n` of them) and returns them at their
/// original extents.
pub fn exchange<T: Real>(
    tape: &mut Tape<T>,
    energies: &[Var],
    p: &ExchangeParams<Var>,
) -> Result<Vec<Var>> {
    let k = energies.len();
    if k == 0 || k % 2 != 0 {
        return Err(contract_err!(
            "exchange needs an even, non-zero number of energies, got {k}"
        ));
    }
    if tape.shape(p.w_mix) != [k, k] {
        return Err(contract_err!(
            "mixing weights {:?} do not match {k} energies",
            tape.shape(p.w_mix)
        ));
    }
    let mut extents = Vec::with_capacity(k);
    for &e in energies {
        match *tape.shape(e) {
            [a, b] if a == b => extents.push(a),
            ref s => return Err(contract_err!("energy matrix must be square, got {s:?}")),
        }
    }
    let target = *extents.iter().max().expect("non-empty");

    let mut stack = Vec::with_capacity(k);
    for (&e, &ext) in energies.iter().zip(&extents) {
        let up = if ext == target {
            e
        } else {
            tape.bilinear_resize(e, target, target)?
        };
        stack.push(tape.reshape(up, &[target, target, 1])?);
    }
    let stacked = tape.concat_channels(&stack)?;
    let mixed = tape.conv1x1(stacked, p.w_mix, Some(p.bias))?;

    let mut out = Vec::with_capacity(k);
    for (idx, &ext) in extents.iter().enumerate() {
        let ch = tape.slice_channel(mixed, idx)?;
        out.push(if ext == target {
            ch
        } else {
            tape.bilinear_resize(ch, ext, ext)?
        });
    }
    Ok(out)
}
