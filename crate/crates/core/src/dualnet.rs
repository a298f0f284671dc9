//! Dual-branch encoder-decoder carrying a pluggable fusion strategy.
//!
//! Each branch has its own encoder: a `3×3` stem followed by `n` stages of
//! `conv3×3 → relu → avgpool2×`, so scale `i` sits at `H/2ⁱ × W/2ⁱ`. A
//! single decoder walks back up: the deepest pair is concatenated, then at
//! every shallower scale the running map is bilinearly upsampled and joined
//! with both branches' skips before a `conv3×3 → relu`. A final full-size
//! conv and a `1×1` sigmoid head produce the mask.

use std::fmt;
use std::str::FromStr;

use crate::energy::Branch;
use crate::error::{config_err, contract_err, Result};
use crate::fusion::{self, FeaturePyramid, RxfoodConfig, RxfoodParams};
use crate::params::{join, param_tree, uniform_init, ParamTree};
use crate::rng::{derive, SplitMix64};
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FusionMode {
    None,
    Avg,
    Max,
    Sf,
    Msf,
    Rxfood,
}

impl FusionMode {
    pub const ALL: [FusionMode; 6] = [
        FusionMode::None,
        FusionMode::Avg,
        FusionMode::Max,
        FusionMode::Sf,
        FusionMode::Msf,
        FusionMode::Rxfood,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Avg => "avg",
            FusionMode::Max => "max",
            FusionMode::Sf => "sf",
            FusionMode::Msf => "msf",
            FusionMode::Rxfood => "rxfood",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| config_err!("unknown fusion mode `{s}` (expected none|avg|max|sf|msf|rxfood)"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub image_size: usize,
    pub scales: usize,
    /// Channels at scale 1; each deeper scale doubles it.
    pub base_channels: usize,
    pub d: usize,
    pub c: usize,
}

pub const RGB_CHANNELS: usize = 3;
pub const X_CHANNELS: usize = 1;

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            scales: 3,
            base_channels: 8,
            d: 8,
            c: 8,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.base_channels == 0 {
            return Err(config_err!("scales and base_channels must be positive"));
        }
        let stride = 1usize << self.scales;
        if self.image_size == 0 || self.image_size % stride != 0 {
            return Err(config_err!(
                "image size {} is not divisible by 2^{} = {stride}",
                self.image_size,
                self.scales
            ));
        }
        self.fusion_config().validate()
    }

    /// Channel plan, e.g. `[8, 16, 32]` for three scales.
    pub fn channels(&self) -> Vec<usize> {
        (0..self.scales).map(|i| self.base_channels << i).collect()
    }

    pub fn fusion_config(&self) -> RxfoodConfig {
        RxfoodConfig {
            d: self.d,
            c: self.c,
            channels: self.channels(),
        }
    }

    /// Spatial side of scale `i` (1-based).
    pub fn side(&self, i: usize) -> usize {
        self.image_size >> i
    }
}

param_tree! {
    pub struct ConvParams<P> {
        w: P => slot,
        b: P => slot,
    }
}

impl<T: Real> ConvParams<Tensor<T>> {
    fn conv3x3(cin: usize, cout: usize, rng: &mut SplitMix64) -> Self {
        Self {
            w: uniform_init(rng, &[3, 3, cin, cout], 9 * cin),
            b: Tensor::zeros(&[cout]),
        }
    }

    fn conv1x1(cin: usize, cout: usize, rng: &mut SplitMix64) -> Self {
        Self {
            w: uniform_init(rng, &[cin, cout], cin),
            b: Tensor::zeros(&[cout]),
        }
    }
}

param_tree! {
    pub struct EncoderParams<P> {
        stem: ConvParams<P> => tree,
        stages: Vec<ConvParams<P>> => tree,
    }
}

param_tree! {
    pub struct DecoderParams<P> {
        /// One conv per shallower scale, then the full-resolution conv.
        stages: Vec<ConvParams<P>> => tree,
        head: ConvParams<P> => tree,
    }
}

/// Learnable fusion state for the chosen mode.
#[derive(Clone, Debug, PartialEq)]
pub enum FusionParams<P> {
    /// `none`, `avg` and `max` have nothing to learn.
    Off,
    /// Cross-scale fusion over every scale.
    Rxfood(RxfoodParams<P>),
    /// One-scale fusion at the deepest scale.
    Single(RxfoodParams<P>),
    /// Independent one-scale fusion per scale.
    Multi(Vec<RxfoodParams<P>>),
}

impl<P> ParamTree<P> for FusionParams<P> {
    type With<Q> = FusionParams<Q>;

    fn map_slots<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> FusionParams<Q> {
        match self {
            FusionParams::Off => FusionParams::Off,
            FusionParams::Rxfood(p) => FusionParams::Rxfood(p.map_slots(f)),
            FusionParams::Single(p) => FusionParams::Single(p.map_slots(f)),
            FusionParams::Multi(ps) => FusionParams::Multi(ps.map_slots(f)),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &P)) {
        match self {
            FusionParams::Off => {}
            FusionParams::Rxfood(p) | FusionParams::Single(p) => p.visit(prefix, f),
            FusionParams::Multi(ps) => ps.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        match self {
            FusionParams::Off => {}
            FusionParams::Rxfood(p) | FusionParams::Single(p) => p.visit_mut(prefix, f),
            FusionParams::Multi(ps) => ps.visit_mut(prefix, f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<P> {
    pub enc_rgb: EncoderParams<P>,
    pub enc_x: EncoderParams<P>,
    pub dec: DecoderParams<P>,
    pub fusion: FusionParams<P>,
}

impl<P> ParamTree<P> for NetParams<P> {
    type With<Q> = NetParams<Q>;

    fn map_slots<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> NetParams<Q> {
        NetParams {
            enc_rgb: self.enc_rgb.map_slots(f),
            enc_x: self.enc_x.map_slots(f),
            dec: self.dec.map_slots(f),
            fusion: self.fusion.map_slots(f),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &P)) {
        self.enc_rgb.visit(&join(prefix, "enc_rgb"), f);
        self.enc_x.visit(&join(prefix, "enc_x"), f);
        self.dec.visit(&join(prefix, "dec"), f);
        self.fusion.visit(&join(prefix, "fusion"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut P)) {
        self.enc_rgb.visit_mut(&join(prefix, "enc_rgb"), f);
        self.enc_x.visit_mut(&join(prefix, "enc_x"), f);
        self.dec.visit_mut(&join(prefix, "dec"), f);
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
    }
}

impl<T: Real> EncoderParams<Tensor<T>> {
    fn init(cfg: &NetConfig, in_channels: usize, rng: &mut SplitMix64) -> Self {
        let plan = cfg.channels();
        let stem = ConvParams::conv3x3(in_channels, plan[0], rng);
        let mut prev = plan[0];
        let stages = plan
            .iter()
            .map(|&ch| {
                let s = ConvParams::conv3x3(prev, ch, rng);
                prev = ch;
                s
            })
            .collect();
        Self { stem, stages }
    }
}

impl<T: Real> DecoderParams<Tensor<T>> {
    fn init(cfg: &NetConfig, rng: &mut SplitMix64) -> Self {
        let plan = cfg.channels();
        let n = plan.len();
        let mut running = 2 * plan[n - 1];
        let mut stages = Vec::with_capacity(n);
        for i in (0..n - 1).rev() {
            stages.push(ConvParams::conv3x3(running + 2 * plan[i], plan[i], rng));
            running = plan[i];
        }
        stages.push(ConvParams::conv3x3(running, plan[0], rng));
        let head = ConvParams::conv1x1(plan[0], 1, rng);
        Self { stages, head }
    }
}

impl<T: Real> NetParams<Tensor<T>> {
    /// Seeded initialization; every bias and fusion gate starts at zero.
    pub fn init(cfg: &NetConfig, mode: FusionMode, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng_rgb = SplitMix64::new(derive(seed, 1));
        let mut rng_x = SplitMix64::new(derive(seed, 2));
        let mut rng_dec = SplitMix64::new(derive(seed, 3));
        let fseed = derive(seed, 4);
        let fcfg = cfg.fusion_config();
        let n = cfg.scales;
        let fusion = match mode {
            FusionMode::None | FusionMode::Avg | FusionMode::Max => FusionParams::Off,
            FusionMode::Rxfood => FusionParams::Rxfood(RxfoodParams::init(&fcfg, fseed)?),
            FusionMode::Sf => FusionParams::Single(RxfoodParams::init(&fcfg.single(n - 1), fseed)?),
            FusionMode::Msf => FusionParams::Multi(
                (0..n)
                    .map(|i| RxfoodParams::init(&fcfg.single(i), derive(fseed, i as u64)))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Self {
            enc_rgb: EncoderParams::init(cfg, RGB_CHANNELS, &mut rng_rgb),
            enc_x: EncoderParams::init(cfg, X_CHANNELS, &mut rng_x),
            dec: DecoderParams::init(cfg, &mut rng_dec),
            fusion,
        })
    }

    /// All-zero weights of the given mode's shape.
    pub fn zeroed(cfg: &NetConfig, mode: FusionMode) -> Result<Self> {
        let mut p = Self::init(cfg, mode, 0)?;
        p.visit_mut("", &mut |_, t| *t = Tensor::zeros(t.shape()));
        Ok(p)
    }
}

impl<P> NetParams<P> {
    pub fn mode(&self) -> Option<FusionMode> {
        match self.fusion {
            FusionParams::Off => None,
            FusionParams::Rxfood(_) => Some(FusionMode::Rxfood),
            FusionParams::Single(_) => Some(FusionMode::Sf),
            FusionParams::Multi(_) => Some(FusionMode::Msf),
        }
    }
}

fn conv3x3_relu<T: Real>(tape: &mut Tape<T>, f: Var, p: &ConvParams<Var>) -> Result<Var> {
    let out = tape.conv3x3(f, p.w, Some(p.b))?;
    tape.relu(out)
}

/// Runs one branch encoder over an `H×W×C_in` image.
pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    image: Var,
    p: &EncoderParams<Var>,
    branch: Branch,
) -> Result<FeaturePyramid> {
    let (h, w) = match *tape.shape(image) {
        [h, w, _] => (h, w),
        ref s => return Err(contract_err!("image must be H×W×C, got {s:?}")),
    };
    let stride = 1usize << p.stages.len();
    if h % stride != 0 || w % stride != 0 {
        return Err(config_err!(
            "image {h}×{w} is not divisible by 2^{} = {stride}",
            p.stages.len()
        ));
    }
    let mut cur = conv3x3_relu(tape, image, &p.stem)?;
    let mut levels = Vec::with_capacity(p.stages.len());
    for stage in &p.stages {
        let act = conv3x3_relu(tape, cur, stage)?;
        cur = tape.avgpool2x(act)?;
        levels.push(cur);
    }
    FeaturePyramid::new(tape, branch, levels)
}

/// Applies the fusion strategy to both pyramids.
pub fn fuse<T: Real>(
    tape: &mut Tape<T>,
    rgb: &FeaturePyramid,
    x: &FeaturePyramid,
    mode: FusionMode,
    p: &FusionParams<Var>,
) -> Result<(FeaturePyramid, FeaturePyramid)> {
    if rgb.len() != x.len() {
        return Err(contract_err!(
            "pyramid depths differ: {} (rgb) vs {} (x)",
            rgb.len(),
            x.len()
        ));
    }
    let elementwise = |tape: &mut Tape<T>, average: bool| -> Result<(FeaturePyramid, FeaturePyramid)> {
        let mut levels = Vec::with_capacity(rgb.len());
        for (&a, &b) in rgb.levels.iter().zip(&x.levels) {
            levels.push(if average {
                let s = tape.add(a, b)?;
                tape.scale(s, T::lit(0.5))?
            } else {
                tape.max(a, b)?
            });
        }
        Ok((
            FeaturePyramid {
                branch: Branch::Rgb,
                levels: levels.clone(),
            },
            FeaturePyramid {
                branch: Branch::X,
                levels,
            },
        ))
    };
    match (mode, p) {
        (FusionMode::None, FusionParams::Off) => Ok((rgb.clone(), x.clone())),
        (FusionMode::Avg, FusionParams::Off) => elementwise(tape, true),
        (FusionMode::Max, FusionParams::Off) => elementwise(tape, false),
        (FusionMode::Rxfood, FusionParams::Rxfood(fp)) => fusion::forward(tape, rgb, x, fp),
        (FusionMode::Sf, FusionParams::Single(fp)) => {
            let last = rgb.len() - 1;
            let (fr, fx) = fusion::forward_single_scale(tape, rgb.levels[last], x.levels[last], fp)?;
            let (mut r, mut xx) = (rgb.clone(), x.clone());
            r.levels[last] = fr;
            xx.levels[last] = fx;
            Ok((r, xx))
        }
        (FusionMode::Msf, FusionParams::Multi(fps)) => fusion::forward_msf(tape, rgb, x, fps),
        (mode, _) => Err(config_err!("fusion parameters do not match mode `{mode}`")),
    }
}

/// Decodes fused pyramids into an `H×W` mask in `(0, 1)`.
pub fn decode<T: Real>(
    tape: &mut Tape<T>,
    rgb: &FeaturePyramid,
    x: &FeaturePyramid,
    p: &DecoderParams<Var>,
    out_h: usize,
    out_w: usize,
) -> Result<Var> {
    let n = rgb.len();
    if x.len() != n || p.stages.len() != n {
        return Err(contract_err!(
            "decoder has {} stages for pyramids of depth {n} and {}",
            p.stages.len(),
            x.len()
        ));
    }
    let mut running = tape.concat_channels(&[rgb.levels[n - 1], x.levels[n - 1]])?;
    for (k, level) in (0..n - 1).rev().enumerate() {
        let (h, w) = {
            let s = tape.shape(rgb.levels[level]);
            (s[0], s[1])
        };
        let up = tape.bilinear_resize(running, h, w)?;
        let cat = tape.concat_channels(&[up, rgb.levels[level], x.levels[level]])?;
        running = conv3x3_relu(tape, cat, &p.stages[k])?;
    }
    let up = tape.bilinear_resize(running, out_h, out_w)?;
    let full = conv3x3_relu(tape, up, &p.stages[n - 1])?;
    let logits = tape.conv1x1(full, p.head.w, Some(p.head.b))?;
    let prob = tape.sigmoid(logits)?;
    tape.reshape(prob, &[out_h, out_w])
}

/// Encode both inputs, fuse, decode.
pub fn model_forward<T: Real>(
    tape: &mut Tape<T>,
    rgb: Var,
    x: Var,
    p: &NetParams<Var>,
    mode: FusionMode,
) -> Result<Var> {
    let (h, w) = {
        let s = tape.shape(rgb);
        if s.len() != 3 || tape.shape(x).len() != 3 || s[..2] != tape.shape(x)[..2] {
            return Err(contract_err!(
                "rgb {:?} and x {:?} must be H×W×C with equal extents",
                s,
                tape.shape(x)
            ));
        }
        (s[0], s[1])
    };
    let pr = encode(tape, rgb, &p.enc_rgb, Branch::Rgb)?;
    let px = encode(tape, x, &p.enc_x, Branch::X)?;
    let (fr, fx) = fuse(tape, &pr, &px, mode, &p.fusion)?;
    decode(tape, &fr, &fx, &p.dec, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::bind;

    fn small() -> NetConfig {
        NetConfig {
            image_size: 16,
            scales: 3,
            base_channels: 4,
            d: 2,
            c: 2,
        }
    }

    fn image(tape: &mut Tape<f64>, size: usize, ch: usize, seed: u64) -> Var {
        let mut rng = SplitMix64::new(seed);
        tape.constant(Tensor::from_fn(&[size, size, ch], |_| rng.next_f64()))
    }

    #[test]
    fn mode_names_round_trip() {
        for m in FusionMode::ALL {
            assert_eq!(m.name().parse::<FusionMode>().unwrap(), m);
        }
        assert!("s2ma".parse::<FusionMode>().is_err());
    }

    #[test]
    fn encoder_shapes_follow_channel_plan() {
        let cfg = NetConfig::default();
        let p = NetParams::<Tensor<f64>>::init(&cfg, FusionMode::None, 1).unwrap();
        let mut tape = Tape::new();
        let bp = bind(&p, &mut tape);
        let img = image(&mut tape, 32, 3, 2);
        let pyr = encode(&mut tape, img, &bp.enc_rgb, Branch::Rgb).unwrap();
        let shapes: Vec<Vec<usize>> = pyr.levels.iter().map(|&v| tape.shape(v).to_vec()).collect();
        assert_eq!(shapes, vec![vec![16, 16, 8], vec![8, 8, 16], vec![4, 4, 32]]);
    }

    #[test]
    fn zero_image_zero_biases_give_zero_pyramid() {
        let p = NetParams::<Tensor<f64>>::init(&small(), FusionMode::None, 5).unwrap();
        let mut tape = Tape::new();
        let bp = bind(&p, &mut tape);
        let img = tape.constant(Tensor::zeros(&[16, 16, 1]));
        let pyr = encode(&mut tape, img, &bp.enc_x, Branch::X).unwrap();
        for v in pyr.levels {
            assert!(tape.value(v).data().iter().all(|&e| e == 0.0));
        }
    }

    #[test]
    fn indivisible_image_is_config_error() {
        let p = NetParams::<Tensor<f64>>::init(&small(), FusionMode::None, 5).unwrap();
        let mut tape = Tape::new();
        let bp = bind(&p, &mut tape);
        let img = image(&mut tape, 12, 3, 0);
        assert!(matches!(
            encode(&mut tape, img, &bp.enc_rgb, Branch::Rgb),
            Err(crate::Error::Config(_))
        ));
        let bad = NetConfig {
            image_size: 20,
            ..small()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn prediction_is_full_size_and_inside_unit_interval() {
        for mode in FusionMode::ALL {
            let p = NetParams::<Tensor<f64>>::init(&small(), mode, 3).unwrap();
            let mut tape = Tape::new();
            let bp = bind(&p, &mut tape);
            let rgb = image(&mut tape, 16, 3, 8);
            let x = image(&mut tape, 16, 1, 9);
            let out = model_forward(&mut tape, rgb, x, &bp, mode).unwrap();
            assert_eq!(tape.shape(out), &[16, 16]);
            assert!(tape.value(out).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_weights_predict_one_half() {
        let p = NetParams::<Tensor<f64>>::zeroed(&small(), FusionMode::Rxfood).unwrap();
        let mut tape = Tape::new();
        let bp = bind(&p, &mut tape);
        let rgb = image(&mut tape, 16, 3, 1);
        let x = image(&mut tape, 16, 1, 2);
        let out = model_forward(&mut tape, rgb, x, &bp, FusionMode::Rxfood).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn avg_of_identical_pyramids_is_unchanged_and_max_with_zero_keeps_positive() {
        let mut tape = Tape::new();
        let mut rng = SplitMix64::new(3);
        let a = tape.constant(Tensor::from_fn(&[4, 4, 2], |_| rng.next_f64()));
        let b = tape.constant(Tensor::from_fn(&[2, 2, 2], |_| rng.next_f64()));
        let r = FeaturePyramid::new(&tape, Branch::Rgb, vec![a, b]).unwrap();
        let x = FeaturePyramid { branch: Branch::X, ..r.clone() };
        let (fr, fx) = fuse(&mut tape, &r, &x, FusionMode::Avg, &FusionParams::Off).unwrap();
        for (o, i) in fr.levels.iter().chain(&fx.levels).zip(r.levels.iter().chain(&r.levels)) {
            assert_eq!(tape.value(*o), tape.value(*i));
        }
        let za = tape.constant(Tensor::zeros(&[4, 4, 2]));
        let zb = tape.constant(Tensor::zeros(&[2, 2, 2]));
        let z = FeaturePyramid::new(&tape, Branch::X, vec![za, zb]).unwrap();
        let (mr, _) = fuse(&mut tape, &r, &z, FusionMode::Max, &FusionParams::Off).unwrap();
        for (o, i) in mr.levels.iter().zip(&r.levels) {
            assert_eq!(tape.value(*o), tape.value(*i));
        }
        assert!(fuse(&mut tape, &r, &x, FusionMode::Rxfood, &FusionParams::Off).is_err());
    }

    #[test]
    fn rxfood_at_init_equals_none_with_doubled_decoder_inputs() {
        let cfg = small();
        let fused = NetParams::<Tensor<f64>>::init(&cfg, FusionMode::Rxfood, 17).unwrap();
        let mut plain = NetParams::<Tensor<f64>>::init(&cfg, FusionMode::None, 17).unwrap();
        assert_eq!(plain.dec, fused.dec);
        let plan = cfg.channels();
        let n = plan.len();
        // Deepest stage: every input channel is a fused feature.
        // Later stages: only the trailing skip channels are.
        let mut running = 2 * plan[n - 1];
        for (k, level) in (0..n - 1).rev().enumerate() {
            let stage = &mut plain.dec.stages[k];
            let (cin, cout) = (stage.w.shape()[2], stage.w.shape()[3]);
            let skip_from = if k == 0 { 0 } else { running };
            for tap in 0..9 {
                for ci in skip_from..cin {
                    for co in 0..cout {
                        stage.w.data_mut()[(tap * cin + ci) * cout + co] *= 2.0;
                    }
                }
            }
            running = plan[level];
        }
        if n == 1 {
            plain.dec.stages[0].w = plain.dec.stages[0].w.map(|v| 2.0 * v);
        }
        let run = |p: &NetParams<Tensor<f64>>, mode| {
            let mut tape = Tape::new();
            let bp = bind(p, &mut tape);
            let rgb = image(&mut tape, 16, 3, 30);
            let x = image(&mut tape, 16, 1, 31);
            let out = model_forward(&mut tape, rgb, x, &bp, mode).unwrap();
            tape.value(out).clone()
        };
        assert_eq!(run(&fused, FusionMode::Rxfood), run(&plain, FusionMode::None));
        let undoubled = NetParams::<Tensor<f64>>::init(&cfg, FusionMode::None, 17).unwrap();
        assert_ne!(run(&fused, FusionMode::Rxfood), run(&undoubled, FusionMode::None));
    }
}
