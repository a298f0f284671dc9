//! The cross-scale, cross-branch fusion plug-in.
//!
//! Given RGB and X feature pyramids with `n` scales, every map yields a
//! spatial and a channel energy. All `2n` spatial energies go through one
//! exchange, all `2n` channel energies through another, and each map is
//! replaced by `AS + AC`: its spatial-attention output plus its
//! channel-attention output, both driven by the exchanged energies.

use crate::energy::{
    channel_apply, channel_energy, spatial_apply, spatial_energy, AttentionParams, Branch,
    FeatureMap,
};
use crate::error::{config_err, contract_err, Result};
use crate::exchange::{exchange, ExchangeParams};
use crate::params::param_tree;
use crate::rng::SplitMix64;
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::{spatial_dims, Tensor};

/// Per-branch multiscale maps; level 0 is scale 1, the finest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeaturePyramid {
    pub branch: Branch,
    pub levels: Vec<Var>,
}

impl FeaturePyramid {
    /// Wraps levels after checking that spatial extents strictly shrink.
    pub fn new<T: Real>(tape: &Tape<T>, branch: Branch, levels: Vec<Var>) -> Result<Self> {
        if levels.is_empty() {
            return Err(contract_err!("{branch} pyramid has no levels"));
        }
        let mut prev: Option<(usize, usize)> = None;
        for (i, &l) in levels.iter().enumerate() {
            let (h, w, _) = spatial_dims(tape.shape(l))?;
            if let Some((ph, pw)) = prev {
                if h >= ph || w >= pw {
                    return Err(contract_err!(
                        "{branch} pyramid scale {} ({h}×{w}) is not smaller than scale {i} ({ph}×{pw})",
                        i + 1
                    ));
                }
            }
            prev = Some((h, w));
        }
        Ok(Self { branch, levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn map(&self, level: usize) -> FeatureMap {
        FeatureMap::new(self.levels[level], self.branch, level + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RxfoodConfig {
    /// Spatial query/key hidden channels.
    pub d: usize,
    /// Channel-embedding width.
    pub c: usize,
    /// Feature channels per scale; its length is the scale count.
    pub channels: Vec<usize>,
}

impl RxfoodConfig {
    pub fn new(d: usize, c: usize, channels: Vec<usize>) -> Result<Self> {
        let cfg = Self { d, c, channels };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scales(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(config_err!("fusion needs at least one scale"));
        }
        if self.d == 0 || self.c == 0 || self.channels.contains(&0) {
            return Err(config_err!("fusion extents must be positive: {self:?}"));
        }
        let min_c = *self.channels.iter().min().expect("non-empty");
        if self.c > min_c {
            return Err(config_err!(
                "channel embedding c={} exceeds the smallest scale width {min_c}",
                self.c
            ));
        }
        Ok(())
    }

    /// The single-scale config for scale `i` (0-based).
    pub fn single(&self, i: usize) -> Self {
        Self {
            d: self.d,
            c: self.c,
            channels: vec![self.channels[i]],
        }
    }
}

param_tree! {
    /// All learnable fusion state for `n` scales.
    pub struct RxfoodParams<P> {
        /// `2n` attention units ordered `[rgb¹..rgbⁿ, x¹..xⁿ]`.
        attn: Vec<AttentionParams<P>> => tree,
        seem: ExchangeParams<P> => tree,
        ceem: ExchangeParams<P> => tree,
    }
}

impl<T: Real> RxfoodParams<Tensor<T>> {
    /// Zero gates, identity exchanges, seeded projections.
    pub fn init(cfg: &RxfoodConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(seed);
        let mut attn = Vec::with_capacity(2 * cfg.scales());
        for _branch in Branch::BOTH {
            for &ch in &cfg.channels {
                attn.push(AttentionParams::init(ch, cfg.d, cfg.c, &mut rng)?);
            }
        }
        Ok(Self {
            attn,
            seem: ExchangeParams::init_identity(cfg.scales())?,
            ceem: ExchangeParams::init_identity(cfg.scales())?,
        })
    }
}

impl<P> RxfoodParams<P> {
    pub fn scales(&self) -> usize {
        self.attn.len() / 2
    }

    pub fn unit(&self, branch: Branch, level: usize) -> &AttentionParams<P> {
        match branch {
            Branch::Rgb => &self.attn[level],
            Branch::X => &self.attn[self.scales() + level],
        }
    }
}

fn check_pyramids<T: Real>(
    tape: &Tape<T>,
    rgb: &FeaturePyramid,
    x: &FeaturePyramid,
    p: &RxfoodParams<Var>,
) -> Result<()> {
    let n = p.scales();
    if rgb.len() != n || x.len() != n {
        return Err(contract_err!(
            "fusion has {n} scales, pyramids have {} (rgb) and {} (x)",
            rgb.len(),
            x.len()
        ));
    }
    for i in 0..n {
        let (sr, sx) = (tape.shape(rgb.levels[i]), tape.shape(x.levels[i]));
        if sr != sx {
            return Err(contract_err!(
                "scale {}: rgb {sr:?} and x {sx:?} extents differ",
                i + 1
            ));
        }
    }
    Ok(())
}

/// Fuses two `n`-scale pyramids with cross-scale, cross-branch exchange.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    rgb: &FeaturePyramid,
    x: &FeaturePyramid,
    p: &RxfoodParams<Var>,
) -> Result<(FeaturePyramid, FeaturePyramid)> {
    check_pyramids(tape, rgb, x, p)?;
    let n = p.scales();
    let maps: Vec<FeatureMap> = (0..n)
        .map(|i| rgb.map(i))
        .chain((0..n).map(|i| x.map(i)))
        .collect();

    let mut spatial = Vec::with_capacity(2 * n);
    let mut embeddings = Vec::with_capacity(2 * n);
    let mut channel = Vec::with_capacity(2 * n);
    for (slot, fm) in maps.iter().enumerate() {
        let unit = &p.attn[slot];
        spatial.push(spatial_energy(tape, fm, unit)?.matrix);
        let (emb, xi) = channel_energy(tape, fm, unit)?;
        embeddings.push(emb);
        channel.push(xi.matrix);
    }
    let spatial = exchange(tape, &spatial, &p.seem)?;
    let channel = exchange(tape, &channel, &p.ceem)?;

    let mut fused = Vec::with_capacity(2 * n);
    for (slot, fm) in maps.iter().enumerate() {
        let unit = &p.attn[slot];
        let as_ = spatial_apply(tape, fm, unit, spatial[slot])?;
        let ac = channel_apply(tape, fm, unit, embeddings[slot], channel[slot])?;
        fused.push(tape.add(as_, ac)?);
    }
    let x_levels = fused.split_off(n);
    Ok((
        FeaturePyramid {
            branch: Branch::Rgb,
            levels: fused,
        },
        FeaturePyramid {
            branch: Branch::X,
            levels: x_levels,
        },
    ))
}

/// Single-scale fusion of one RGB map and one X map.
pub fn forward_single_scale<T: Real>(
    tape: &mut Tape<T>,
    f_rgb: Var,
    f_x: Var,
    p: &RxfoodParams<Var>,
) -> Result<(Var, Var)> {
    if p.scales() != 1 {
        return Err(contract_err!(
            "single-scale fusion needs 1-scale parameters, got {}",
            p.scales()
        ));
    }
    let rgb = FeaturePyramid::new(tape, Branch::Rgb, vec![f_rgb])?;
    let x = FeaturePyramid::new(tape, Branch::X, vec![f_x])?;
    let (fr, fx) = forward(tape, &rgb, &x, p)?;
    Ok((fr.levels[0], fx.levels[0]))
}

/// Independent single-scale fusion at every scale, no cross-scale exchange.
pub fn forward_msf<T: Real>(
    tape: &mut Tape<T>,
    rgb: &FeaturePyramid,
    x: &FeaturePyramid,
    params: &[RxfoodParams<Var>],
) -> Result<(FeaturePyramid, FeaturePyramid)> {
    if rgb.len() != params.len() || x.len() != params.len() {
        return Err(contract_err!(
            "{} parameter sets for pyramids of {} (rgb) and {} (x) scales",
            params.len(),
            rgb.len(),
            x.len()
        ));
    }
    let mut out_rgb = Vec::with_capacity(params.len());
    let mut out_x = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        let (a, b) = forward_single_scale(tape, rgb.levels[i], x.levels[i], p)?;
        out_rgb.push(a);
        out_x.push(b);
    }
    Ok((
        FeaturePyramid {
            branch: Branch::Rgb,
            levels: out_rgb,
        },
        FeaturePyramid {
            branch: Branch::X,
            levels: out_x,
        },
    ))
}
