//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any fails.

use std::fs;
use std::time::Instant;

use nalgebra::DMatrix;

use rxfood::dualnet::{FusionMode, NetConfig};
use rxfood::energy::{channel_energy, spatial_energy, AttentionParams, Branch, FeatureMap};
use rxfood::exchange::{exchange, ExchangeParams};
use rxfood::fusion::{forward, FeaturePyramid, RxfoodConfig, RxfoodParams};
use rxfood::io::{dataset, RunConfig};
use rxfood::params::{bind, named};
use rxfood::rng::SplitMix64;
use rxfood::tensor::Tensor;
use rxfood::traineval::metrics::{auc, mae, max_fmeasure};
use rxfood::traineval::{train, AdamConfig, Split, TrainConfig, TrainOutcome};
use rxfood::verify::{gradient_suite, SUITE_SEEDS};
use rxfood::Tape64;
use rxfood_cli::{cmd_gen, cmd_train, eval_checkpoint, CHECKPOINT_FILE, METRICS_FILE};

type Verdict = Result<String, String>;

fn random(rng: &mut SplitMix64, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-2.0, 2.0))
}

fn gradient_suite_criterion() -> Verdict {
    let start = Instant::now();
    let cases = gradient_suite(&SUITE_SEEDS).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let worst = cases.iter().max_by(|a, b| a.error.total_cmp(&b.error)).expect("cases");
    let failed: Vec<_> = cases.iter().filter(|c| !c.passed()).collect();
    let detail = format!(
        "{} checks over {} seeds, worst {} seed {} at {:.2e}, {secs:.1}s",
        cases.len(),
        SUITE_SEEDS.len(),
        worst.name,
        worst.seed,
        worst.error
    );
    if failed.is_empty() && secs < 120.0 {
        Ok(detail)
    } else {
        Err(format!("{detail}; {} failing", failed.len()))
    }
}

fn init_inertness() -> Verdict {
    let configs: [(&[usize], usize); 4] = [(&[8], 8), (&[4, 6], 8), (&[8, 16, 32], 16), (&[3, 3, 3, 3], 16)];
    let mut worst = 0.0f64;
    for (k, &(channels, side)) in configs.iter().enumerate() {
        let c = channels.iter().copied().min().expect("non-empty").min(4);
        let cfg = RxfoodConfig::new(4, c, channels.to_vec()).map_err(|e| e.to_string())?;
        let p = RxfoodParams::<Tensor<f64>>::init(&cfg, 9 + k as u64).map_err(|e| e.to_string())?;
        let mut rng = SplitMix64::new(k as u64);
        let mut tape = Tape64::new();
        let bp = bind(&p, &mut tape);
        let mut levels = |tape: &mut Tape64| -> Vec<_> {
            channels
                .iter()
                .enumerate()
                .map(|(i, &ch)| tape.constant(random(&mut rng, &[side >> i, side >> i, ch])))
                .collect()
        };
        let (rl, xl) = (levels(&mut tape), levels(&mut tape));
        let rgb = FeaturePyramid::new(&tape, Branch::Rgb, rl.clone()).map_err(|e| e.to_string())?;
        let x = FeaturePyramid::new(&tape, Branch::X, xl.clone()).map_err(|e| e.to_string())?;
        let (fr, fx) = forward(&mut tape, &rgb, &x, &bp).map_err(|e| e.to_string())?;
        for (i, o) in rl.iter().chain(&xl).zip(fr.levels.iter().chain(&fx.levels)) {
            let doubled = tape.value(*i).map(|v| 2.0 * v);
            worst = worst.max(tape.value(*o).max_abs_diff(&doubled));
        }
    }
    let detail = format!("{} configurations, max |F̂ − 2F| = {worst:e}", configs.len());
    if worst == 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn exchange_pass_through() -> Verdict {
    let mut rng = SplitMix64::new(77);
    let mut equal_exact = true;
    for n in 1..=4 {
        let mut tape = Tape64::new();
        let es: Vec<_> = (0..2 * n).map(|_| tape.constant(random(&mut rng, &[9, 9]))).collect();
        let p = bind(&ExchangeParams::init_identity(n).expect("n > 0"), &mut tape);
        let out = exchange(&mut tape, &es, &p).map_err(|e| e.to_string())?;
        equal_exact &= es.iter().zip(&out).all(|(a, b)| tape.value(*a) == tape.value(*b));
    }
    let sizes = [64usize, 16, 4, 64, 16, 4];
    let mut tape = Tape64::new();
    let es: Vec<_> = sizes.iter().map(|&s| tape.constant(random(&mut rng, &[s, s]))).collect();
    let p = bind(&ExchangeParams::init_identity(3).expect("n > 0"), &mut tape);
    let out = exchange(&mut tape, &es, &p).map_err(|e| e.to_string())?;
    let mut largest_exact = true;
    let mut worst = 0.0f64;
    for ((&e, &o), &s) in es.iter().zip(&out).zip(&sizes) {
        if s == 64 {
            largest_exact &= tape.value(e) == tape.value(o);
        } else {
            let up = tape.bilinear_resize(e, 64, 64).map_err(|e| e.to_string())?;
            let back = tape.bilinear_resize(up, s, s).map_err(|e| e.to_string())?;
            worst = worst.max(tape.value(back).max_abs_diff(tape.value(o)));
        }
    }
    let detail = format!(
        "equal sizes exact: {equal_exact}; largest exact: {largest_exact}; smaller vs round trip {worst:.1e}"
    );
    if equal_exact && largest_exact && worst < 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn energy_algebra() -> Verdict {
    let mut rng = SplitMix64::new(5);
    let (mut asym, mut min_eig) = (0.0f64, f64::INFINITY);
    for trial in 0..20 {
        let (h, w, ch, c) = (2 + trial % 4, 3 + trial % 3, 6, 1 + trial % 6);
        let p = AttentionParams::init(ch, 3, c, &mut rng).map_err(|e| e.to_string())?;
        let mut tape = Tape64::new();
        let bp = bind(&p, &mut tape);
        let f = tape.constant(random(&mut rng, &[h, w, ch]));
        let (_, xi) = channel_energy(&mut tape, &FeatureMap::new(f, Branch::X, 1), &bp).map_err(|e| e.to_string())?;
        let m = DMatrix::from_row_slice(c, c, tape.value(xi.matrix).data());
        asym = asym.max((&m - m.transpose()).amax());
        min_eig = min_eig.min(m.symmetric_eigen().eigenvalues.min());
    }

    let (h, w, ch) = (4, 5, 6);
    let n = h * w;
    let p = AttentionParams::init(ch, 4, 4, &mut rng).map_err(|e| e.to_string())?;
    let x = random(&mut rng, &[h, w, ch]);
    let mut tape = Tape64::new();
    let bp = bind(&p, &mut tape);
    let base_var = tape.constant(x.clone());
    let base = spatial_energy(&mut tape, &FeatureMap::new(base_var, Branch::Rgb, 1), &bp).map_err(|e| e.to_string())?;
    let base = tape.value(base.matrix).clone();
    let mut equivariant = 0;
    for _ in 0..100 {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.below(i as u64 + 1) as usize);
        }
        let px = Tensor::from_fn(&[h, w, ch], |k| x.data()[perm[k / ch] * ch + k % ch]);
        let v = tape.constant(px);
        let e = spatial_energy(&mut tape, &FeatureMap::new(v, Branch::Rgb, 1), &bp).map_err(|e| e.to_string())?;
        let e = tape.value(e.matrix);
        let exact = (0..n).all(|i| (0..n).all(|j| e.data()[i * n + j] == base.data()[perm[i] * n + perm[j]]));
        equivariant += usize::from(exact);
    }
    let detail = format!(
        "channel asymmetry {asym:.1e}, min eigenvalue {min_eig:.2e}; spatial equivariant on {equivariant}/100 permutations"
    );
    if asym <= 1e-12 && min_eig >= -1e-10 && equivariant == 100 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_f(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        1.3 * p * r / (0.3 * p + r)
    }
}

fn counts(pred: &[f64], target: &[f64], t: f64) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &y) in pred.iter().zip(target) {
        match (p >= t, y == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    (tp, fp, fn_)
}

fn metric_oracle() -> Verdict {
    let mut agree = 0;
    for seed in 0..100u64 {
        let mut rng = SplitMix64::new(1000 + seed);
        let density = rng.next_f64();
        let pred = Tensor::from_fn(&[8, 8], |_| match seed % 3 {
            0 => rng.next_f64(),
            1 => rng.below(257) as f64 / 256.0,
            _ => rng.below(4) as f64 / 3.0,
        });
        let target = Tensor::from_fn(&[8, 8], |_| if rng.next_f64() < density { 1.0 } else { 0.0 });
        let (p, t) = (pred.data(), target.data());

        let o_mae = p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / 64.0;
        let o_maxf = (0..256).map(|k| {
            let (tp, fp, fn_) = counts(p, t, k as f64 / 256.0);
            oracle_f(tp, fp, fn_)
        });
        let o_maxf = o_maxf.fold(0.0, f64::max);
        let pos = t.iter().filter(|&&y| y == 1.0).count();
        let neg = 64 - pos;
        let o_auc = (pos > 0 && neg > 0).then(|| {
            let mut cuts = p.to_vec();
            cuts.sort_by(|a, b| b.total_cmp(a));
            cuts.dedup();
            let (mut area, mut fx, mut fy) = (0.0, 0.0, 0.0);
            for c in cuts {
                let (tp, fp, _) = counts(p, t, c);
                let (x, y) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
                area += (x - fx) * (y + fy) / 2.0;
                fx = x;
                fy = y;
            }
            area
        });
        let ok = mae(&pred, &target).ok() == Some(o_mae)
            && max_fmeasure(&pred, &target).ok() == Some(o_maxf)
            && auc(&pred, &target).ok() == Some(o_auc);
        agree += usize::from(ok);
    }
    let detail = format!("mae, maxF, AUC identical on {agree}/100 random 8×8 instances");
    if agree == 100 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// The desk-scale comparative budget shared by every mode and seed.
fn comparative_config(mode: FusionMode, seed: u64) -> TrainConfig {
    TrainConfig {
        net: NetConfig {
            image_size: 16,
            scales: 3,
            base_channels: 8,
            d: 8,
            c: 8,
        },
        mode,
        seed,
        epochs: 30,
        batch: 8,
        adam: AdamConfig {
            lr: 3e-3,
            ..Default::default()
        },
        train_count: 256,
        test_count: 64,
        x_fraction: 0.5,
        eval_every: 0,
    }
}

struct Runs {
    /// `[mode][seed]`, modes in `FusionMode::ALL` order.
    outcomes: Vec<Vec<TrainOutcome<f64>>>,
    secs: f64,
}

fn comparative_runs() -> Result<Runs, String> {
    let start = Instant::now();
    let mut outcomes = Vec::new();
    for mode in FusionMode::ALL {
        let mut row = Vec::new();
        for seed in SEEDS {
            let out = train::<f64>(&comparative_config(mode, seed), &mut |_| {}).map_err(|e| e.to_string())?;
            row.push(out);
        }
        outcomes.push(row);
    }
    Ok(Runs {
        outcomes,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn max_f(o: &TrainOutcome<f64>) -> f64 {
    o.final_report().expect("final evaluation").max_f
}

fn comparative_ordering(runs: &Runs) -> Verdict {
    let idx = |m: FusionMode| FusionMode::ALL.iter().position(|&x| x == m).expect("mode");
    let means: Vec<f64> = runs
        .outcomes
        .iter()
        .map(|row| row.iter().map(max_f).sum::<f64>() / row.len() as f64)
        .collect();
    let mean = |m| means[idx(m)];
    let rx = &runs.outcomes[idx(FusionMode::Rxfood)];
    let wins = (0..SEEDS.len())
        .filter(|&s| {
            [FusionMode::Avg, FusionMode::Max, FusionMode::None]
                .iter()
                .all(|&m| max_f(&rx[s]) > max_f(&runs.outcomes[idx(m)][s]))
        })
        .count();
    let table: Vec<String> = FusionMode::ALL
        .iter()
        .zip(&means)
        .map(|(m, v)| format!("{m} {v:.4}"))
        .collect();
    let beats = [FusionMode::Avg, FusionMode::Max, FusionMode::None]
        .iter()
        .all(|&m| mean(FusionMode::Rxfood) > mean(m));
    let ablation = mean(FusionMode::Rxfood) >= mean(FusionMode::Msf) && mean(FusionMode::Msf) >= mean(FusionMode::Sf);
    let detail = format!(
        "mean maxF [{}]; rxfood beats none/avg/max on {wins}/5 seeds; {:.0}s",
        table.join(", "),
        runs.secs
    );
    if beats && wins >= 4 && ablation && runs.secs <= 1800.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn learning_sanity(runs: &Runs) -> Verdict {
    let mut worst = 0.0f64;
    for row in &runs.outcomes {
        for o in row {
            let first = o.epochs.first().expect("epochs").mean_loss;
            let last = o.epochs.last().expect("epochs").mean_loss;
            worst = worst.max(last / first);
        }
    }
    let rx = &runs.outcomes[FusionMode::ALL.iter().position(|&m| m == FusionMode::Rxfood).expect("mode")];
    let gates_moved = rx
        .iter()
        .filter(|o| {
            named(&o.params)
                .iter()
                .any(|(n, t)| (n.ends_with(".alpha") || n.ends_with(".beta")) && t.data()[0].abs() > 1e-3)
        })
        .count();
    let detail = format!(
        "worst final/epoch-1 loss ratio {worst:.3} over 30 runs; rxfood runs with a live gate {gates_moved}/5"
    );
    if worst < 0.5 && gates_moved == rx.len() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const DET_CONFIG: &str = "\
mode = rxfood
seed = 21
n = 2
d = 4
c = 4
base_channels = 4
image_size = 8
epochs = 3
batch = 4
train_count = 16
test_count = 8
";

fn determinism_and_persistence() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let err = |e: anyhow::Error| format!("{e:#}");
    let cfg = RunConfig::parse(DET_CONFIG).map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = cmd_train(&cfg, Some(&a), &mut std::io::sink()).map_err(err)?;
    cmd_train(&cfg, Some(&b), &mut std::io::sink()).map_err(err)?;
    let read = |p: std::path::PathBuf| fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    let csv_same = read(a.join(METRICS_FILE))? == read(b.join(METRICS_FILE))?;
    let ck_same = read(a.join(CHECKPOINT_FILE))? == read(b.join(CHECKPOINT_FILE))?;

    let data = dir.path().join("data");
    cmd_gen(&cfg, &data).map_err(err)?;
    let (_, report) = eval_checkpoint(&a.join(CHECKPOINT_FILE), &data, Split::Test).map_err(err)?;
    let reproduced = Some(&report) == ra.outcome.final_report();
    let on_disk = dataset::read_split::<f64>(&data, Split::Train).map_err(|e| e.to_string())?;
    let data_same = on_disk == cfg.train.datasets::<f64>().0;
    let detail = format!(
        "CSV bytes equal: {csv_same}; checkpoint bytes equal: {ck_same}; reloaded metrics exact: {reproduced}; dataset round trip exact: {data_same}"
    );
    if csv_same && ck_same && reproduced && data_same {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn report(name: &str, v: &Verdict) -> bool {
    match v {
        Ok(d) => println!("PASS  {name}: {d}"),
        Err(d) => println!("FAIL  {name}: {d}"),
    }
    v.is_ok()
}

fn main() {
    let mut ok = true;
    ok &= report("gradient suite", &gradient_suite_criterion());
    ok &= report("init inertness", &init_inertness());
    ok &= report("exchange pass-through", &exchange_pass_through());
    ok &= report("energy algebra", &energy_algebra());
    ok &= report("metric oracle equivalence", &metric_oracle());
    match comparative_runs() {
        Ok(runs) => {
            ok &= report("comparative ordering", &comparative_ordering(&runs));
            ok &= report("learning sanity", &learning_sanity(&runs));
        }
        Err(e) => {
            let v = Err(e);
            ok &= report("comparative ordering", &v);
            ok &= report("learning sanity", &v);
        }
    }
    ok &= report("determinism and persistence", &determinism_and_persistence());
    if !ok {
        std::process::exit(1);
    }
}
