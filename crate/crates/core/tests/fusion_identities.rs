use rxfood::energy::Branch;
use rxfood::exchange::{exchange, ExchangeParams};
use rxfood::fusion::{forward, FeaturePyramid, RxfoodConfig, RxfoodParams};
use rxfood::params::bind;
use rxfood::rng::SplitMix64;
use rxfood::tensor::Tensor;
use rxfood::Tape64;

fn random(rng: &mut SplitMix64, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-3.0, 3.0))
}

#[test]
fn fresh_fusion_doubles_inputs_bit_exactly() {
    let configs = [
        (vec![4], 8, 2, 2),
        (vec![3, 5], 4, 2, 3),
        (vec![8, 16, 32], 16, 8, 8),
        (vec![2, 2, 2, 2], 16, 1, 1),
    ];
    for (k, (channels, side, d, c)) in configs.into_iter().enumerate() {
        let cfg = RxfoodConfig::new(d, c, channels.clone()).unwrap();
        let p = RxfoodParams::<Tensor<f64>>::init(&cfg, 100 + k as u64).unwrap();
        let mut rng = SplitMix64::new(k as u64);
        let mut tape = Tape64::new();
        let bp = bind(&p, &mut tape);
        let mut mk = |tape: &mut Tape64| -> Vec<_> {
            channels
                .iter()
                .enumerate()
                .map(|(i, &ch)| tape.constant(random(&mut rng, &[side >> i, side >> i, ch])))
                .collect()
        };
        let rl = mk(&mut tape);
        let xl = mk(&mut tape);
        let rgb = FeaturePyramid::new(&tape, Branch::Rgb, rl.clone()).unwrap();
        let x = FeaturePyramid::new(&tape, Branch::X, xl.clone()).unwrap();
        let (fr, fx) = forward(&mut tape, &rgb, &x, &bp).unwrap();
        for (inp, out) in rl.iter().chain(&xl).zip(fr.levels.iter().chain(&fx.levels)) {
            let doubled = tape.value(*inp).map(|v| v + v);
            assert_eq!(tape.value(*out), &doubled, "config {k}");
        }
    }
}

#[test]
fn identity_exchange_on_three_scales() {
    let mut rng = SplitMix64::new(31);
    let sizes = [64, 16, 4, 64, 16, 4];
    let mut tape = Tape64::new();
    let es: Vec<_> = sizes.iter().map(|&s| tape.constant(random(&mut rng, &[s, s]))).collect();
    let p = bind(&ExchangeParams::init_identity(3).unwrap(), &mut tape);
    let out = exchange(&mut tape, &es, &p).unwrap();
    for ((&e, &o), &s) in es.iter().zip(&out).zip(&sizes) {
        if s == 64 {
            assert_eq!(tape.value(e), tape.value(o));
        } else {
            let up = tape.bilinear_resize(e, 64, 64).unwrap();
            let back = tape.bilinear_resize(up, s, s).unwrap();
            assert!(tape.value(back).max_abs_diff(tape.value(o)) < 1e-12);
        }
    }
}
