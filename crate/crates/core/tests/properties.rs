use nalgebra::DMatrix;
use proptest::prelude::*;

use rxfood::energy::{channel_energy, spatial_energy, AttentionParams, Branch, FeatureMap};
use rxfood::gradcheck::analytic_grads;
use rxfood::params::bind;
use rxfood::rng::SplitMix64;
use rxfood::tensor::Tensor;
use rxfood::traineval::metrics;
use rxfood::Tape64;

fn tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..6, 1usize..6, 1usize..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(rows in 1usize..6, cols in 1usize..7, seed: u64, shift in -50.0f64..50.0) {
        let x = tensor(&[rows, cols], seed, -10.0, 10.0);
        let mut tape = Tape64::new();
        let a = tape.constant(x.clone());
        let b = tape.constant(x.map(|v| v + shift));
        let sa = tape.softmax_rows(a).unwrap();
        let sb = tape.softmax_rows(b).unwrap();
        let (va, vb) = (tape.value(sa), tape.value(sb));
        for r in 0..rows {
            let s: f64 = va.data()[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        prop_assert!(va.max_abs_diff(vb) < 1e-12);
    }

    #[test]
    fn resize_to_own_extent_is_identity((h, w, c) in dims(), seed: u64) {
        let x = tensor(&[h, w, c], seed, -1.0, 1.0);
        let mut tape = Tape64::new();
        let a = tape.constant(x.clone());
        let r = tape.bilinear_resize(a, h, w).unwrap();
        prop_assert_eq!(tape.value(r), &x);
    }

    #[test]
    fn resize_preserves_constants((h, w, c) in dims(), oh in 1usize..9, ow in 1usize..9, v in -3.0f64..3.0) {
        let mut tape = Tape64::new();
        let a = tape.constant(Tensor::full(&[h, w, c], v));
        let r = tape.bilinear_resize(a, oh, ow).unwrap();
        prop_assert!(tape.value(r).data().iter().all(|&x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn identity_matmul_is_exact(m in 1usize..6, p in 1usize..6, seed: u64) {
        let x = tensor(&[m, p], seed, -5.0, 5.0);
        let mut tape = Tape64::new();
        let a = tape.constant(x.clone());
        let i = tape.constant(Tensor::eye(p));
        let i2 = tape.constant(Tensor::eye(m));
        let r = tape.matmul(a, i).unwrap();
        let l = tape.matmul(i2, a).unwrap();
        prop_assert_eq!(tape.value(r), &x);
        prop_assert_eq!(tape.value(l), &x);
    }

    #[test]
    fn spatial_energy_is_permutation_equivariant((h, w, ch) in dims(), d in 1usize..4, seed: u64) {
        let n = h * w;
        let x = tensor(&[h, w, ch], seed, -1.0, 1.0);
        let mut rng = SplitMix64::new(seed ^ 0x55);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.below(i as u64 + 1) as usize);
        }
        let permuted = Tensor::from_fn(&[h, w, ch], |k| x.data()[perm[k / ch] * ch + k % ch]);
        let p = AttentionParams::init(ch, d, ch, &mut rng).unwrap();
        let mut tape = Tape64::new();
        let bp = bind(&p, &mut tape);
        let a = tape.constant(x);
        let b = tape.constant(permuted);
        let ea = spatial_energy(&mut tape, &FeatureMap::new(a, Branch::Rgb, 1), &bp).unwrap();
        let eb = spatial_energy(&mut tape, &FeatureMap::new(b, Branch::Rgb, 1), &bp).unwrap();
        let (va, vb) = (tape.value(ea.matrix), tape.value(eb.matrix));
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(vb.data()[i * n + j], va.data()[perm[i] * n + perm[j]]);
            }
        }
    }

    #[test]
    fn channel_energy_is_symmetric_psd((h, w, ch) in dims(), c in 1usize..5, seed: u64) {
        let c = c.min(ch);
        let x = tensor(&[h, w, ch], seed, -2.0, 2.0);
        let mut rng = SplitMix64::new(seed ^ 0xaa);
        let p = AttentionParams::init(ch, 2, c, &mut rng).unwrap();
        let mut tape = Tape64::new();
        let bp = bind(&p, &mut tape);
        let a = tape.constant(x);
        let (_, xi) = channel_energy(&mut tape, &FeatureMap::new(a, Branch::X, 2), &bp).unwrap();
        let v = tape.value(xi.matrix);
        let m = DMatrix::from_row_slice(c, c, v.data());
        prop_assert!((&m - m.transpose()).amax() <= 1e-12);
        let eig = m.symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() >= -1e-10, "{}", eig.min());
    }

    #[test]
    fn max_f_dominates_f_at_half(seed: u64, positives in 0.0f64..1.0) {
        let mut rng = SplitMix64::new(seed);
        let pred = Tensor::from_fn(&[6, 6], |_| rng.next_f64());
        let target = Tensor::from_fn(&[6, 6], |_| if rng.next_f64() < positives { 1.0 } else { 0.0 });
        let f = metrics::fmeasure(&pred, &target).unwrap();
        let mf = metrics::max_fmeasure(&pred, &target).unwrap();
        prop_assert!(mf >= f);
        prop_assert!((0.0..=1.0).contains(&mf));
    }

    #[test]
    fn bce_gradient_matches_central_differences(seed: u64) {
        let mut rng = SplitMix64::new(seed);
        let pred = Tensor::from_fn(&[3, 4], |_| rng.uniform(0.05, 0.95));
        let target = Tensor::from_fn(&[3, 4], |_| if rng.next_f64() < 0.5 { 1.0 } else { 0.0 });
        let f = |t: &mut Tape64, v: &[rxfood::tape::Var]| t.bce_loss(v[0], &target);
        let g = analytic_grads(&f, &[pred.clone()]).unwrap();
        let h = 1e-6;
        for j in 0..pred.numel() {
            let eval = |delta: f64| {
                let mut p = pred.clone();
                p.data_mut()[j] += delta;
                let mut t = Tape64::new();
                let v = t.constant(p);
                let l = t.bce_loss(v, &target).unwrap();
                t.value(l).data()[0]
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            prop_assert!((numeric - g[0].data()[j]).abs() < 1e-6);
        }
    }
}
