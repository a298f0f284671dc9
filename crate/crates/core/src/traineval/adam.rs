//! Adam with bias correction over any parameter tree.

use crate::error::{contract_err, Result};
use crate::params::ParamTree;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one pair per parameter slot.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<S: ParamTree<Tensor<T>>>(cfg: AdamConfig, params: &S) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, t| m.push(Tensor::zeros(t.shape())));
        Self {
            cfg,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; `grads` are in canonical slot order.
    pub fn step<S: ParamTree<Tensor<T>>>(&mut self, params: &mut S, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(contract_err!(
                "{} gradients for {} parameter slots",
                grads.len(),
                self.m.len()
            ));
        }
        for (g, m) in grads.iter().zip(&self.m) {
            if g.shape() != m.shape() {
                return Err(contract_err!(
                    "gradient {:?} does not match parameter {:?}",
                    g.shape(),
                    m.shape()
                ));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let c1 = T::one() - T::lit(beta1.powi(self.step as i32));
        let c2 = T::one() - T::lit(beta2.powi(self.step as i32));
        let (lr, eps) = (T::lit(lr), T::lit(eps));
        let mut slot = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, p| {
            let g = grads[slot].data();
            let m = ms[slot].data_mut();
            let v = vs[slot].data_mut();
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
            slot += 1;
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::param_tree;

    param_tree! {
        pub struct One<P> {
            w: P => slot,
        }
    }

    fn one(v: &[f64]) -> One<Tensor<f64>> {
        One { w: Tensor::from_f64(&[v.len()], v).unwrap() }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = one(&[0.5, -1.0, 2.0]);
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            opt.step(&mut p, &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(opt.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = one(&[0.0, 0.0, 1.0]);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let g = Tensor::from_f64(&[3], &[3.0, -0.01, 250.0]).unwrap();
        opt.step(&mut p, &[g]).unwrap();
        let want = [-1e-3, 1e-3, 1.0 - 1e-3];
        for (a, b) in p.w.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = one(&[3.0, -2.0]);
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &p);
        for _ in 0..2000 {
            let g = p.w.map(|w| 2.0 * w);
            opt.step(&mut p, &[g]).unwrap();
        }
        assert!(p.w.data().iter().all(|w| w.abs() < 1e-3), "{:?}", p.w);
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut p = one(&[0.0, 0.0]);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        assert!(opt.step(&mut p, &[]).is_err());
        assert!(opt.step(&mut p, &[Tensor::zeros(&[3])]).is_err());
    }
}
