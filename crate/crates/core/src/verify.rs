//! Finite-difference gradient suite over every differentiable component.
//!
//! Each case draws random inputs from a seed, reduces the output to a
//! scalar through a fixed random weighting, and compares tape gradients
//! with central differences.

use crate::dualnet::{model_forward, FusionMode, NetConfig, NetParams};
use crate::energy::{channel_apply, channel_energy, spatial_apply, spatial_energy, AttentionParams, Branch, FeatureMap};
use crate::error::Result;
use crate::exchange::{exchange, ExchangeParams};
use crate::fusion::{forward, FeaturePyramid, RxfoodConfig, RxfoodParams};
use crate::gradcheck::{grad_check, grad_check_coords, Coord, DEFAULT_STEP};
use crate::params::{flatten, named, rebuild, ParamTree};
use crate::rng::{derive, SplitMix64};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::traineval::{gen_sample, SampleMode};

pub const THRESHOLD: f64 = 1e-4;
pub const SUITE_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
/// Coordinates probed per seed in the whole-model case.
pub const MODEL_COORDS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub seed: u64,
    pub error: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.error < THRESHOLD
    }
}

type Loss = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn random(rng: &mut SplitMix64, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// Values bounded away from zero, so kinks at 0 stay out of reach of the
/// finite-difference step.
fn away_from_zero(rng: &mut SplitMix64, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform(0.05, 1.0);
        if rng.next_f64() < 0.5 {
            -m
        } else {
            m
        }
    })
}

/// `Σ out ⊙ R` for a fixed random `R` of the output's shape.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = SplitMix64::new(derive(seed, 0x7765_6967));
    let r = random(&mut rng, &tape.shape(out).to_vec(), -1.0, 1.0);
    let r = tape.constant(r);
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

fn reduce(seed: u64, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Loss {
    Box::new(move |t, v| {
        let out = f(t, v)?;
        weighted_sum(t, out, seed)
    })
}

fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor<f64>>, Loss)> {
    let mut rng = SplitMix64::new(seed);
    let mut r = |shape: &[usize]| random(&mut rng, shape, -1.0, 1.0);
    let a = r(&[3, 4]);
    let b = r(&[3, 4]);
    let sq = r(&[4, 4]);
    let m = r(&[4, 5]);
    let fmap = r(&[5, 4, 3]);
    let odd = r(&[5, 3, 2]);
    let w1 = r(&[3, 2]);
    let bias2 = r(&[2]);
    let w3 = r(&[3, 3, 3, 2]);
    let gate = r(&[1]);
    let other = r(&[5, 4, 2]);
    let logits = r(&[4, 4]);

    let mut rng2 = SplitMix64::new(derive(seed, 1));
    let kinked = away_from_zero(&mut rng2, &[3, 4]);
    // b' = a ± gap keeps max() away from ties
    let apart = Tensor::from_fn(&[3, 4], |i| {
        let gap = rng2.uniform(0.05, 1.0);
        a.data()[i] + if rng2.next_f64() < 0.5 { gap } else { -gap }
    });
    let target = Tensor::from_fn(&[4, 4], |_| if rng2.next_f64() < 0.5 { 1.0 } else { 0.0 });

    vec![
        ("add", vec![a.clone(), b.clone()], reduce(seed, |t, v| t.add(v[0], v[1]))),
        ("sub", vec![a.clone(), b.clone()], reduce(seed, |t, v| t.sub(v[0], v[1]))),
        ("mul", vec![a.clone(), b.clone()], reduce(seed, |t, v| t.mul(v[0], v[1]))),
        ("max", vec![a.clone(), apart], reduce(seed, |t, v| t.max(v[0], v[1]))),
        ("scale", vec![a.clone()], reduce(seed, |t, v| t.scale(v[0], -1.7))),
        ("scale_by", vec![fmap.clone(), gate], reduce(seed, |t, v| t.scale_by(v[0], v[1]))),
        ("relu", vec![kinked], reduce(seed, |t, v| t.relu(v[0]))),
        ("sigmoid", vec![a.clone()], reduce(seed, |t, v| t.sigmoid(v[0]))),
        ("matmul", vec![sq.clone(), m], reduce(seed, |t, v| t.matmul(v[0], v[1]))),
        ("transpose", vec![a.clone()], reduce(seed, |t, v| t.transpose(v[0]))),
        ("softmax_rows", vec![sq], reduce(seed, |t, v| t.softmax_rows(v[0]))),
        (
            "conv1x1",
            vec![fmap.clone(), w1, bias2.clone()],
            reduce(seed, |t, v| t.conv1x1(v[0], v[1], Some(v[2]))),
        ),
        (
            "conv3x3",
            vec![fmap.clone(), w3, bias2],
            reduce(seed, |t, v| t.conv3x3(v[0], v[1], Some(v[2]))),
        ),
        ("resize_up", vec![odd.clone()], reduce(seed, |t, v| t.bilinear_resize(v[0], 9, 7))),
        ("resize_down", vec![fmap.clone()], reduce(seed, |t, v| t.bilinear_resize(v[0], 2, 3))),
        (
            "concat_channels",
            vec![fmap.clone(), other],
            reduce(seed, |t, v| t.concat_channels(&[v[0], v[1], v[0]])),
        ),
        ("slice_channel", vec![fmap.clone()], reduce(seed, |t, v| t.slice_channel(v[0], 1))),
        ("avgpool2x", vec![odd], reduce(seed, |t, v| t.avgpool2x(v[0]))),
        ("reshape", vec![fmap], reduce(seed, |t, v| t.reshape(v[0], &[20, 3]))),
        ("sum", vec![a], Box::new(|t, v| t.sum(v[0]))),
        (
            "bce_loss",
            vec![logits],
            Box::new(move |t, v| {
                let p = t.sigmoid(v[0])?;
                t.bce_loss(p, &target)
            }),
        ),
    ]
}

/// Random attention unit with both gates away from zero.
fn live_unit(channels: usize, d: usize, c: usize, rng: &mut SplitMix64) -> Result<AttentionParams<Tensor<f64>>> {
    let mut p = AttentionParams::init(channels, d, c, rng)?;
    p.alpha = Tensor::scalar(rng.uniform(0.3, 1.0));
    p.beta = Tensor::scalar(rng.uniform(0.3, 1.0));
    Ok(p)
}

fn perturb_exchange(p: &mut ExchangeParams<Tensor<f64>>, rng: &mut SplitMix64) {
    for v in p.w_mix.data_mut().iter_mut().chain(p.bias.data_mut()) {
        *v += rng.uniform(-0.3, 0.3);
    }
}

/// Attention unit bound to the seven vars starting at `lead`, with the
/// feature map in `vars[0]`.
fn split(vars: &[Var], lead: usize) -> (FeatureMap, AttentionParams<Var>) {
    let s = &vars[lead..lead + 7];
    let p = AttentionParams {
        wq: s[0],
        wk: s[1],
        wv: s[2],
        alpha: s[3],
        wc_in: s[4],
        wc_out: s[5],
        beta: s[6],
    };
    (FeatureMap::new(vars[0], Branch::Rgb, 1), p)
}

/// Inputs are `[feature, extra..., unit params...]`.
fn energy_cases(seed: u64) -> Result<Vec<(&'static str, Vec<Tensor<f64>>, Loss)>> {
    let mut rng = SplitMix64::new(derive(seed, 2));
    let (h, w, ch, d, c) = (3, 4, 4, 3, 2);
    let unit = live_unit(ch, d, c, &mut rng)?;
    let f = random(&mut rng, &[h, w, ch], -1.0, 1.0);
    let eps = random(&mut rng, &[h * w, h * w], -1.0, 1.0);
    let emb = random(&mut rng, &[h * w, c], -1.0, 1.0);
    let xi = random(&mut rng, &[c, c], -1.0, 1.0);
    let with_params = |extra: Vec<Tensor<f64>>| {
        let mut v = vec![f.clone()];
        v.extend(extra);
        v.extend(flatten(&unit));
        v
    };
    Ok(vec![
        (
            "spatial_energy",
            with_params(vec![]),
            reduce(seed, |t, v| {
                let (fm, p) = split(v, 1);
                Ok(spatial_energy(t, &fm, &p)?.matrix)
            }),
        ),
        (
            "spatial_apply",
            with_params(vec![eps]),
            reduce(seed, |t, v| {
                let (fm, p) = split(v, 2);
                spatial_apply(t, &fm, &p, v[1])
            }),
        ),
        (
            "channel_energy",
            with_params(vec![]),
            reduce(seed, move |t, v| {
                let (fm, p) = split(v, 1);
                let (e, xi) = channel_energy(t, &fm, &p)?;
                let a = weighted_sum(t, e, seed ^ 1)?;
                let b = weighted_sum(t, xi.matrix, seed ^ 2)?;
                t.add(a, b)
            }),
        ),
        (
            "channel_apply",
            with_params(vec![emb, xi]),
            reduce(seed, |t, v| {
                let (fm, p) = split(v, 3);
                channel_apply(t, &fm, &p, v[1], v[2])
            }),
        ),
    ])
}

fn exchange_case(seed: u64) -> (Vec<Tensor<f64>>, Loss) {
    let mut rng = SplitMix64::new(derive(seed, 3));
    let sizes = [6, 3, 2, 6, 3, 2];
    let mut p = ExchangeParams::<Tensor<f64>>::init_identity(3).expect("n = 3");
    perturb_exchange(&mut p, &mut rng);
    let mut inputs: Vec<Tensor<f64>> = sizes.iter().map(|&s| random(&mut rng, &[s, s], -1.0, 1.0)).collect();
    inputs.extend(flatten(&p));
    let loss: Loss = Box::new(move |t, v| {
        let p = ExchangeParams { w_mix: v[6], bias: v[7] };
        let out = exchange(t, &v[..6], &p)?;
        let mut total = t.constant(Tensor::scalar(0.0));
        for (i, &o) in out.iter().enumerate() {
            let s = weighted_sum(t, o, seed + i as u64)?;
            total = t.add(total, s)?;
        }
        Ok(total)
    });
    (inputs, loss)
}

/// Two-scale toy: `4×4×3` and `2×2×4` levels per branch.
fn rxfood_case(seed: u64) -> Result<(Vec<Tensor<f64>>, Loss)> {
    let mut rng = SplitMix64::new(derive(seed, 4));
    let cfg = RxfoodConfig::new(2, 2, vec![3, 4])?;
    let mut p = RxfoodParams::<Tensor<f64>>::init(&cfg, derive(seed, 5))?;
    for u in p.attn.iter_mut() {
        u.alpha = Tensor::scalar(rng.uniform(0.3, 1.0));
        u.beta = Tensor::scalar(rng.uniform(0.3, 1.0));
    }
    perturb_exchange(&mut p.seem, &mut rng);
    perturb_exchange(&mut p.ceem, &mut rng);
    let mut inputs = vec![
        random(&mut rng, &[4, 4, 3], -1.0, 1.0),
        random(&mut rng, &[2, 2, 4], -1.0, 1.0),
        random(&mut rng, &[4, 4, 3], -1.0, 1.0),
        random(&mut rng, &[2, 2, 4], -1.0, 1.0),
    ];
    inputs.extend(flatten(&p));
    let template = p.map_slots(&mut |_| ());
    let loss: Loss = Box::new(move |t, v| {
        let bound = rebuild(&template, &v[4..]);
        let rgb = FeaturePyramid::new(t, Branch::Rgb, vec![v[0], v[1]])?;
        let x = FeaturePyramid::new(t, Branch::X, vec![v[2], v[3]])?;
        let (fr, fx) = forward(t, &rgb, &x, &bound)?;
        let mut total = t.constant(Tensor::scalar(0.0));
        for (i, &o) in fr.levels.iter().chain(&fx.levels).enumerate() {
            let s = weighted_sum(t, o, seed + i as u64)?;
            total = t.add(total, s)?;
        }
        Ok(total)
    });
    Ok((inputs, loss))
}

/// Full rxfood network plus loss on a `16×16` sample, probed at
/// [`MODEL_COORDS`] coordinates: half in the fusion block, half anywhere.
fn model_case(seed: u64) -> Result<(Vec<Tensor<f64>>, Vec<Coord>, Loss)> {
    let net = NetConfig {
        image_size: 16,
        scales: 3,
        base_channels: 4,
        d: 4,
        c: 4,
    };
    let mut p = NetParams::<Tensor<f64>>::init(&net, FusionMode::Rxfood, derive(seed, 6))?;
    let mut rng = SplitMix64::new(derive(seed, 7));
    p.visit_mut("", &mut |name, t| {
        if name.ends_with(".alpha") || name.ends_with(".beta") {
            *t = Tensor::scalar(rng.uniform(0.3, 1.0));
        } else if name.contains("seem") || name.contains("ceem") {
            for v in t.data_mut() {
                *v += rng.uniform(-0.3, 0.3);
            }
        }
    });
    let sample = gen_sample::<f64>(derive(seed, 8), SampleMode::Both, net.image_size);
    let names = named(&p);
    let inputs: Vec<Tensor<f64>> = names.iter().map(|(_, t)| t.clone()).collect();
    let fusion: Vec<usize> = (0..names.len()).filter(|&i| names[i].0.starts_with("fusion.")).collect();
    let mut coords = Vec::with_capacity(MODEL_COORDS);
    for k in 0..MODEL_COORDS {
        let slot = if k % 2 == 0 {
            fusion[rng.below(fusion.len() as u64) as usize]
        } else {
            rng.below(names.len() as u64) as usize
        };
        coords.push((slot, rng.below(inputs[slot].numel() as u64) as usize));
    }
    let template = p.map_slots(&mut |_| ());
    let loss: Loss = Box::new(move |t, v| {
        let bound = rebuild(&template, v);
        let rgb = t.constant(sample.rgb.clone());
        let x = t.constant(sample.x.clone());
        let pred = model_forward(t, rgb, x, &bound, FusionMode::Rxfood)?;
        t.bce_loss(pred, &sample.mask)
    });
    Ok((inputs, coords, loss))
}

/// Runs every case for every seed.
pub fn gradient_suite(seeds: &[u64]) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    let h = DEFAULT_STEP;
    for &seed in seeds {
        let mut push = |name: &str, error: f64| {
            out.push(GradCase {
                name: name.to_string(),
                seed,
                error,
            })
        };
        for (name, inputs, f) in op_cases(seed) {
            push(name, grad_check(f, &inputs, h)?);
        }
        for (name, inputs, f) in energy_cases(seed)? {
            push(name, grad_check(f, &inputs, h)?);
        }
        let (inputs, f) = exchange_case(seed);
        push("exchange", grad_check(f, &inputs, h)?);
        let (inputs, f) = rxfood_case(seed)?;
        push("rxfood_forward", grad_check(f, &inputs, h)?);
        let (inputs, coords, f) = model_case(seed)?;
        push("model_loss", grad_check_coords(f, &inputs, &coords, h)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_seed_suite_passes() {
        let cases = gradient_suite(&[11]).unwrap();
        assert!(cases.len() >= 25);
        for c in &cases {
            assert!(c.passed(), "{} seed {}: {:.3e}", c.name, c.seed, c.error);
        }
    }
}
