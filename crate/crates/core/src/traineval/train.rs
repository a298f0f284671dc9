//! Mini-batch training and evaluation of the dual-branch network.

use crate::dualnet::{model_forward, FusionMode, NetConfig, NetParams};
use crate::error::{config_err, contract_err, Result};
use crate::params::{bind, grads_of, ParamTree};
use crate::rng::{derive, SplitMix64};
use crate::scalar::Real;
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::adam::{Adam, AdamConfig};
use super::data::{Dataset, Sample, Split};
use super::metrics::{MetricReport, SampleMetrics};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub mode: FusionMode,
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub train_count: usize,
    pub test_count: usize,
    pub x_fraction: f64,
    /// Evaluate on the test split every this many epochs (and always after
    /// the last); 0 evaluates only after the last epoch.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            mode: FusionMode::Rxfood,
            seed: 0,
            epochs: 30,
            batch: 8,
            adam: AdamConfig::default(),
            train_count: 512,
            test_count: 128,
            x_fraction: 0.5,
            eval_every: 1,
        }
    }
}

const INIT_LABEL: u64 = 0x696e_6974;
const SHUFFLE_LABEL: u64 = 0x7368_7566;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.batch == 0 {
            return Err(config_err!("batch must be positive"));
        }
        if !(0.0..=1.0).contains(&self.x_fraction) {
            return Err(config_err!("x_fraction {} is outside [0, 1]", self.x_fraction));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(config_err!("lr must be positive and finite"));
        }
        Ok(())
    }

    pub fn init_seed(&self) -> u64 {
        derive(self.seed, INIT_LABEL)
    }

    pub fn datasets<T: Real>(&self) -> (Dataset<T>, Dataset<T>) {
        let size = self.net.image_size;
        (
            Dataset::generate(self.seed, Split::Train, self.train_count, size, self.x_fraction),
            Dataset::generate(self.seed, Split::Test, self.test_count, size, self.x_fraction),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub test: Option<MetricReport>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: NetParams<Tensor<T>>,
    pub epochs: Vec<EpochLog>,
}

impl<T> TrainOutcome<T> {
    pub fn final_report(&self) -> Option<&MetricReport> {
        self.epochs.last().and_then(|e| e.test.as_ref())
    }
}

/// Loss and parameter gradients for one sample.
pub fn sample_gradient<T: Real>(
    params: &NetParams<Tensor<T>>,
    mode: FusionMode,
    sample: &Sample<T>,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let bound = bind(params, &mut tape);
    let rgb = tape.constant(sample.rgb.clone());
    let x = tape.constant(sample.x.clone());
    let pred = model_forward(&mut tape, rgb, x, &bound, mode)?;
    let loss = tape.bce_loss(pred, &sample.mask)?;
    tape.backward(loss)?;
    let value = tape.value(loss).data()[0].as_f64();
    Ok((value, grads_of(&bound, &tape)))
}

/// Saliency prediction (`H×W`, in `(0, 1)`) without gradient bookkeeping.
pub fn predict<T: Real>(
    params: &NetParams<Tensor<T>>,
    mode: FusionMode,
    rgb: &Tensor<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = params.map_slots(&mut |t| tape.constant(t.clone()));
    let rgb = tape.constant(rgb.clone());
    let x = tape.constant(x.clone());
    let pred = model_forward(&mut tape, rgb, x, &bound, mode)?;
    Ok(tape.value(pred).clone())
}

pub fn evaluate<T: Real>(
    params: &NetParams<Tensor<T>>,
    mode: FusionMode,
    data: &Dataset<T>,
) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(contract_err!("cannot evaluate on an empty dataset"));
    }
    let per_sample = data
        .samples
        .iter()
        .map(|s| SampleMetrics::compute(&predict(params, mode, &s.rgb, &s.x)?, &s.mask))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_samples(per_sample)
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed);
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        idx.swap(i, j);
    }
    idx
}

/// Trains from a fresh initialization on the given splits; `on_epoch` sees
/// each epoch's log as soon as it is complete.
pub fn train_on<T: Real>(
    cfg: &TrainConfig,
    train: &Dataset<T>,
    test: &Dataset<T>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(contract_err!("cannot train on an empty dataset"));
    }
    let mut params = NetParams::init(&cfg.net, cfg.mode, cfg.init_seed())?;
    let mut opt = Adam::new(cfg.adam, &params);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let order = shuffled(train.len(), derive(derive(cfg.seed, SHUFFLE_LABEL), epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut acc: Option<Vec<Tensor<T>>> = None;
            for &i in chunk {
                let (loss, grads) = sample_gradient(&params, cfg.mode, &train.samples[i])?;
                total += loss;
                acc = Some(match acc {
                    None => grads,
                    Some(mut a) => {
                        for (s, g) in a.iter_mut().zip(&grads) {
                            for (x, y) in s.data_mut().iter_mut().zip(g.data()) {
                                *x = *x + *y;
                            }
                        }
                        a
                    }
                });
            }
            let scale = T::one() / T::from_count(chunk.len());
            let mean: Vec<Tensor<T>> = acc
                .expect("non-empty batch")
                .iter()
                .map(|g| g.map(|v| v * scale))
                .collect();
            opt.step(&mut params, &mean)?;
        }
        let due = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        let report = if due && !test.is_empty() {
            Some(evaluate(&params, cfg.mode, test)?)
        } else {
            None
        };
        let log = EpochLog {
            epoch,
            mean_loss: total / train.len() as f64,
            test: report,
        };
        on_epoch(&log);
        logs.push(log);
    }
    Ok(TrainOutcome { params, epochs: logs })
}

/// Generates both splits from `cfg.seed` and trains.
pub fn train<T: Real>(cfg: &TrainConfig, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let (tr, te) = cfg.datasets();
    train_on(cfg, &tr, &te, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            net: NetConfig {
                image_size: 8,
                scales: 2,
                base_channels: 4,
                d: 4,
                c: 4,
            },
            epochs: 2,
            batch: 4,
            train_count: 8,
            test_count: 4,
            ..Default::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny();
        let a = train::<f64>(&cfg, &mut |_| {}).unwrap();
        let b = train::<f64>(&cfg, &mut |_| {}).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.epochs.len(), 2);
        assert!(a.epochs.iter().all(|e| e.test.is_some()));
    }

    #[test]
    fn eval_every_zero_reports_last_epoch_only() {
        let cfg = TrainConfig { eval_every: 0, ..tiny() };
        let out = train::<f64>(&cfg, &mut |_| {}).unwrap();
        assert!(out.epochs[0].test.is_none());
        assert!(out.final_report().is_some());
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let cfg = tiny();
        let p = NetParams::<Tensor<f64>>::init(&cfg.net, cfg.mode, 1).unwrap();
        let empty = Dataset { samples: vec![], seeds: vec![] };
        assert!(evaluate(&p, cfg.mode, &empty).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(TrainConfig { batch: 0, ..tiny() }.validate().is_err());
        assert!(TrainConfig { x_fraction: 1.5, ..tiny() }.validate().is_err());
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut p = shuffled(50, 9);
        assert_ne!(p, (0..50).collect::<Vec<_>>());
        p.sort();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
