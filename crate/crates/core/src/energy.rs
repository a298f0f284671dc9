//! Spatial and channel energy matrices, and the gated attention residuals
//! that consume them.
//!
//! For a feature map `F` of shape `H×W×C` with `N = H·W` positions:
//!
//! * spatial energy `ε = Q·Kᵀ/√d`, `Q`/`K` being per-position projections
//!   of `F` to `d` hidden channels;
//! * spatial attention `α·softmax(ε)·V + F`, `V` a `C→C` projection;
//! * channel energy `ξ = fᵀ·f/√N`, `f` a `C→c` embedding of `F`;
//! * channel attention `β·Conv(f·softmax(ξ)ᵀ) + F`, `Conv` mapping `c→C`.
//!
//! Both gates start at zero, which makes both residual paths exact
//! identities on `F` at initialization.

use std::fmt;

use crate::error::{dim_err, Result};
use crate::params::{param_tree, uniform_init};
use crate::rng::SplitMix64;
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{spatial_dims, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    Rgb,
    X,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Rgb, Branch::X];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Rgb => "rgb",
            Branch::X => "x",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One `H×W×C` feature map tagged with its branch and 1-based scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureMap {
    pub value: Var,
    pub branch: Branch,
    pub scale: usize,
}

impl FeatureMap {
    pub fn new(value: Var, branch: Branch, scale: usize) -> Self {
        Self {
            value,
            branch,
            scale,
        }
    }
}

param_tree! {
    /// Learnable state of one (branch, scale) attention unit.
    pub struct AttentionParams<P> {
        /// `C×d` query projection.
        wq: P => slot,
        /// `C×d` key projection.
        wk: P => slot,
        /// `C×C` value projection.
        wv: P => slot,
        /// Spatial residual gate.
        alpha: P => slot,
        /// `C×c` channel embedding.
        wc_in: P => slot,
        /// `c×C` channel recovery.
        wc_out: P => slot,
        /// Channel residual gate.
        beta: P => slot,
    }
}

impl<T: Real> AttentionParams<Tensor<T>> {
    /// Seeded uniform projections; both gates exactly zero.
    pub fn init(channels: usize, d: usize, c: usize, rng: &mut SplitMix64) -> Result<Self> {
        if d == 0 || c == 0 || channels == 0 {
            return Err(crate::error::config_err!(
                "attention extents must be positive (C={channels}, d={d}, c={c})"
            ));
        }
        if c > channels {
            return Err(crate::error::config_err!(
                "channel embedding c={c} exceeds feature channels C={channels}"
            ));
        }
        Ok(Self {
            wq: uniform_init(rng, &[channels, d], channels),
            wk: uniform_init(rng, &[channels, d], channels),
            wv: uniform_init(rng, &[channels, channels], channels),
            alpha: Tensor::scalar(T::zero()),
            wc_in: uniform_init(rng, &[channels, c], channels),
            wc_out: uniform_init(rng, &[c, channels], c),
            beta: Tensor::scalar(T::zero()),
        })
    }

    pub fn channels(&self) -> usize {
        self.wq.shape()[0]
    }
}

/// `N×N` spatial energy of one feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpatialEnergy {
    pub matrix: Var,
    pub branch: Branch,
    pub scale: usize,
}

/// `c×c` channel energy of one feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelEnergy {
    pub matrix: Var,
    pub branch: Branch,
    pub scale: usize,
}

fn check_channels<T: Real>(tape: &Tape<T>, f: &FeatureMap, p: &AttentionParams<Var>) -> Result<(usize, usize, usize)> {
    let (h, w, ch) = spatial_dims(tape.shape(f.value))?;
    let expected = tape.shape(p.wq)[0];
    if ch != expected {
        return Err(dim_err!(
            "feature {} scale {} has {ch} channels, attention expects {expected}",
            f.branch,
            f.scale
        ));
    }
    Ok((h, w, ch))
}

/// Projects `F` through a `1×1` map and flattens positions: `N×out`.
fn project<T: Real>(tape: &mut Tape<T>, f: Var, w: Var, n: usize) -> Result<Var> {
    let out = tape.conv1x1(f, w, None)?;
    let k = tape.shape(out)[2];
    tape.reshape(out, &[n, k])
}

pub fn spatial_energy<T: Real>(
    tape: &mut Tape<T>,
    f: &FeatureMap,
    p: &AttentionParams<Var>,
) -> Result<SpatialEnergy> {
    let (h, w, _) = check_channels(tape, f, p)?;
    let n = h * w;
    let q = project(tape, f.value, p.wq, n)?;
    let k = project(tape, f.value, p.wk, n)?;
    let d = tape.shape(q)[1];
    let kt = tape.transpose(k)?;
    let qk = tape.matmul(q, kt)?;
    let matrix = tape.scale(qk, T::one() / T::from_count(d).sqrt())?;
    Ok(SpatialEnergy {
        matrix,
        branch: f.branch,
        scale: f.scale,
    })
}

/// `α·reshape(softmax_rows(ε)·V) + F`.
pub fn spatial_apply<T: Real>(
    tape: &mut Tape<T>,
    f: &FeatureMap,
    p: &AttentionParams<Var>,
    eps: Var,
) -> Result<Var> {
    let (h, w, ch) = check_channels(tape, f, p)?;
    let n = h * w;
    if tape.shape(eps) != [n, n] {
        return Err(dim_err!(
            "spatial energy {:?} does not match {n} positions",
            tape.shape(eps)
        ));
    }
    let v = project(tape, f.value, p.wv, n)?;
    let attn = tape.softmax_rows(eps)?;
    let ctx = tape.matmul(attn, v)?;
    let ctx = tape.reshape(ctx, &[h, w, ch])?;
    let gated = tape.scale_by(ctx, p.alpha)?;
    tape.add(gated, f.value)
}

/// Returns the `N×c` embedding `f` alongside `ξ = fᵀ·f/√N`.
pub fn channel_energy<T: Real>(
    tape: &mut Tape<T>,
    f: &FeatureMap,
    p: &AttentionParams<Var>,
) -> Result<(Var, ChannelEnergy)> {
    let (h, w, _) = check_channels(tape, f, p)?;
    let n = h * w;
    let emb = project(tape, f.value, p.wc_in, n)?;
    let et = tape.transpose(emb)?;
    let gram = tape.matmul(et, emb)?;
    let matrix = tape.scale(gram, T::one() / T::from_count(n).sqrt())?;
    Ok((
        emb,
        ChannelEnergy {
            matrix,
            branch: f.branch,
            scale: f.scale,
        },
    ))
}

/// `β·Conv(reshape(f·softmax_rows(ξ)ᵀ)) + F`.
pub fn channel_apply<T: Real>(
    tape: &mut Tape<T>,
    f: &FeatureMap,
    p: &AttentionParams<Var>,
    emb: Var,
    xi: Var,
) -> Result<Var> {
    let (h, w, _) = check_channels(tape, f, p)?;
    let n = h * w;
    let c = tape.shape(p.wc_in)[1];
    if tape.shape(emb) != [n, c] {
        return Err(dim_err!(
            "channel embedding {:?} does not match {n}×{c}",
            tape.shape(emb)
        ));
    }
    if tape.shape(xi) != [c, c] {
        return Err(dim_err!("channel energy {:?} is not {c}×{c}", tape.shape(xi)));
    }
    let attn = tape.softmax_rows(xi)?;
    let attn_t = tape.transpose(attn)?;
    let mixed = tape.matmul(emb, attn_t)?;
    let mixed = tape.reshape(mixed, &[h, w, c])?;
    let restored = tape.conv1x1(mixed, p.wc_out, None)?;
    let gated = tape.scale_by(restored, p.beta)?;
    tape.add(gated, f.value)
}
