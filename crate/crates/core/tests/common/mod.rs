//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod ops;
pub mod reference;
pub mod sweeps;

use std::collections::BTreeMap;

use ecgcl::autograd::{Graph, Mode, Var};
use ecgcl::cl::TaskPlan;
use ecgcl::data::{build_samples, preprocess, synth_ecg, Preprocess, Sample, SynthConfig};
use ecgcl::encoder::EncoderConfig;
use ecgcl::network::{Network, TaskShape};
use ecgcl::nn::Forward;
use ecgcl::params::{Init, ParamStore};
use ecgcl::train::OptimConfig;
use ecgcl::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

// ---------------------------------------------------------------- gradients

/// Smallest magnitude used as the denominator of a relative error, so that
/// gradients that are zero up to rounding compare in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Analytic-vs-central-difference comparison for an operator on `inputs`.
/// Every input is a differentiable leaf; the scalar probe is a random
/// weighting of the output. Returns the worst relative error.
pub fn check_op(
    inputs: &[Tensor<f64>],
    seed: u64,
    eps: f64,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> ecgcl::Result<Var>,
) -> f64 {
    let loss_of = |xs: &[Tensor<f64>], coeffs: Option<&[f64]>| -> (Graph<f64>, Var, Vec<f64>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().enumerate().map(|(i, x)| g.param(x.clone(), i)).collect();
        let y = build(&mut g, &vars).unwrap();
        let c: Vec<f64> = match coeffs {
            Some(c) => c.to_vec(),
            None => {
                let mut r = rng(seed);
                (0..g.value(y).len()).map(|_| r.random_range(-1.0..1.0)).collect()
            }
        };
        let l = g.weighted_sum(y, &c).unwrap();
        (g, l, c)
    };
    let (g, l, coeffs) = loss_of(inputs, None);
    let grads = g.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (slot, x) in inputs.iter().enumerate() {
        let analytic = grads.get(slot).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; x.len()]);
        for (i, &a) in analytic.iter().enumerate() {
            let mut xs = inputs.to_vec();
            xs[slot].data_mut()[i] += eps;
            let (g1, l1, _) = loss_of(&xs, Some(&coeffs));
            xs[slot].data_mut()[i] -= 2.0 * eps;
            let (g2, l2, _) = loss_of(&xs, Some(&coeffs));
            let num = (g1.value(l1).data()[0] - g2.value(l2).data()[0]) / (2.0 * eps);
            worst = worst.max(rel_err(a, num));
        }
    }
    worst
}

/// Random values for every parameter of a task network, including biases and
/// normalization affines so that no gradient is trivially structured.
pub fn random_store(net: &Network, shape: &TaskShape, seed: u64) -> ParamStore<f64> {
    let mut r = rng(seed);
    let mut store = ParamStore::init_from_specs(&net.specs(shape), &mut r);
    for spec in net.specs(shape) {
        let p = store.get_mut(&spec.name).unwrap();
        match spec.init {
            Init::He { .. } => {}
            Init::Ones => p.values.data_mut().iter_mut().for_each(|v| *v = r.random_range(0.5..1.5)),
            Init::Zeros => p.values.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.2..0.2)),
        }
    }
    store
}

/// Mean BCE of the full network (train-mode normalization) on a fixed batch.
pub fn network_loss(
    net: &Network,
    shape: &TaskShape,
    store: &ParamStore<f64>,
    x: &Tensor<f64>,
    target: &Tensor<f64>,
) -> (f64, BTreeMap<String, Tensor<f64>>) {
    let mut stats = net.init_stats(shape);
    let mut f = Forward::new(store, &mut stats, Mode::Train);
    let xv = f.graph.input(x.clone());
    let y = net.forward(&mut f, xv, shape).unwrap();
    let loss = f.graph.bce(y, target).unwrap();
    let value = f.graph.value(loss).data()[0];
    (value, f.named_grads(loss).unwrap())
}

/// Worst relative error over every scalar parameter of the network.
pub fn check_network(cfg: EncoderConfig, shape: TaskShape, batch: usize, seed: u64, eps: f64) -> (f64, usize, String) {
    let net = Network::new(cfg).unwrap();
    let mut store = random_store(&net, &shape, seed);
    let mut r = rng(seed ^ 0x5eed);
    let x = randn(&mut r, &[batch, shape.leads, shape.window_len]);
    let mut tshape = vec![batch];
    tshape.extend(shape.target_shape());
    let n: usize = tshape.iter().product();
    let target = Tensor::from_vec(&tshape, (0..n).map(|_| f64::from(r.random_bool(0.3))).collect()).unwrap();
    let (_, grads) = network_loss(&net, &shape, &store, &x, &target);
    let names: Vec<String> = store.names().cloned().collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut at = String::new();
    for name in names {
        let analytic = grads.get(&name).map(|t| t.data().to_vec());
        let len = store.get(&name).unwrap().values.len();
        for i in 0..len {
            let orig = store.get(&name).unwrap().values.data()[i];
            store.get_mut(&name).unwrap().values.data_mut()[i] = orig + eps;
            let (lp, _) = network_loss(&net, &shape, &store, &x, &target);
            store.get_mut(&name).unwrap().values.data_mut()[i] = orig - eps;
            let (lm, _) = network_loss(&net, &shape, &store, &x, &target);
            store.get_mut(&name).unwrap().values.data_mut()[i] = orig;
            let num = (lp - lm) / (2.0 * eps);
            let a = analytic.as_ref().map_or(0.0, |g| g[i]);
            let e = rel_err(a, num);
            assert!(e.is_finite(), "{name}[{i}]: analytic {a}, numeric {num}");
            if e > worst {
                worst = e;
                at = format!("{name}[{i}]: analytic {a:e}, numeric {num:e}");
            }
            checked += 1;
        }
    }
    (worst, checked, at)
}

// ---------------------------------------------------------------- oracles

/// Direct nested-loop 1D convolution, `x: (B, Cin, L)`, `w: (Cout, Cin, K)`.
pub fn conv1d_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (bs, cin, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[0], w.shape()[2]);
    let lout = (l + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; bs * cout * lout];
    for bi in 0..bs {
        for o in 0..cout {
            for t in 0..lout {
                let mut acc = b[o];
                for c in 0..cin {
                    for j in 0..k {
                        let pos = (t * stride + j) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < l {
                            acc += w.data()[(o * cin + c) * k + j] * x.data()[(bi * cin + c) * l + pos as usize];
                        }
                    }
                }
                y[(bi * cout + o) * lout + t] = acc;
            }
        }
    }
    y
}

/// Scatter-accumulate transposed convolution, `w: (Cin, Cout, K)`.
pub fn conv_t_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize) -> Vec<f64> {
    let (bs, cin, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, k) = (w.shape()[1], w.shape()[2]);
    let lout = (l - 1) * stride + k;
    let mut y = vec![0.0; bs * cout * lout];
    for bi in 0..bs {
        for o in 0..cout {
            for t in 0..lout {
                y[(bi * cout + o) * lout + t] = b[o];
            }
        }
        for c in 0..cin {
            for i in 0..l {
                let xv = x.data()[(bi * cin + c) * l + i];
                for o in 0..cout {
                    for j in 0..k {
                        y[(bi * cout + o) * lout + i * stride + j] += xv * w.data()[(c * cout + o) * k + j];
                    }
                }
            }
        }
    }
    y
}

/// AUC by enumerating every positive/negative pair, ties counting one half.
pub fn auc_pairs(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut credit = 0.0;
    for &p in &pos {
        for &n in &neg {
            credit += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(credit / (pos.len() * neg.len()) as f64)
}

/// Largest one-to-one matching within `±tol`, by exhaustive search.
pub fn max_matching(pred: &[usize], truth: &[usize], tol: usize) -> usize {
    fn go(pred: &[usize], truth: &[usize], tol: usize, used: &mut Vec<bool>) -> usize {
        let Some((&p, rest)) = pred.split_first() else {
            return 0;
        };
        let mut best = go(rest, truth, tol, used);
        for j in 0..truth.len() {
            if !used[j] && p.abs_diff(truth[j]) <= tol {
                used[j] = true;
                best = best.max(1 + go(rest, truth, tol, used));
                used[j] = false;
            }
        }
        best
    }
    go(pred, truth, tol, &mut vec![false; truth.len()])
}

// ---------------------------------------------------------------- closed forms

/// Parameter count of the network written out from the architecture:
/// a `k`-tap convolution with batch norm holds `out·in·k + out + 2·out`
/// scalars, without it `out·in·k + out`.
pub fn closed_form_count(c: usize, blocks: usize, leads: usize, seg: bool, classes: usize) -> usize {
    let conv_bn = |i: usize, o: usize, k: usize| o * i * k + o + 2 * o;
    let conv = |i: usize, o: usize, k: usize| o * i * k + o;
    let ch = |r: usize| c << r;
    let mut n = conv(leads, 12, 1); // lead adapter
    n += conv_bn(12, c, 3) + conv_bn(c, c, 3);
    for s in 0..4 {
        if s > 0 {
            n += conv_bn(ch(s - 1), ch(s), 3);
        }
        for r in 0..=s {
            n += blocks * 2 * conv_bn(ch(r), ch(r), 3);
        }
        if s > 0 {
            for r in 0..=s {
                for src in 0..=s {
                    if src < r {
                        n += (src..r).map(|h| conv_bn(ch(h), ch(h + 1), 3)).sum::<usize>();
                    } else if src > r {
                        n += conv(ch(src), ch(r), 1 << (src - r)) + conv_bn(ch(r), ch(r), 1);
                    }
                }
            }
        }
    }
    if seg {
        let f = 15 * c;
        let h = f.div_ceil(4);
        n += (f * h + h) + (h * f + f) + conv(f, 1, 1);
    } else {
        n += (0..3).map(|i| conv_bn(ch(i), ch(i + 1), 3)).sum::<usize>();
        n += 8 * c * classes + classes;
    }
    n
}

// ---------------------------------------------------------------- fixtures

pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        base_channels: 2,
        blocks_per_stage: 1,
        ..EncoderConfig::default()
    }
}

/// Samples with random signals and random targets of the right shape.
pub fn random_samples(shape: &TaskShape, n: usize, seed: u64) -> Vec<Sample> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let signal = Tensor::from_vec(
                &[shape.leads, shape.window_len],
                (0..shape.leads * shape.window_len).map(|_| r.random_range(-2.0f32..2.0)).collect(),
            )
            .unwrap();
            let tshape = shape.target_shape();
            let tn: usize = tshape.iter().product();
            let target = Tensor::from_vec(&tshape, (0..tn).map(|_| f32::from(u8::from(r.random_bool(0.3)))).collect()).unwrap();
            Sample {
                signal,
                target,
                fs: 100.0,
                qrs: vec![],
                labels: vec![],
                patient_id: format!("p{i}"),
            }
        })
        .collect()
}

pub fn quick_optim(epochs: usize) -> OptimConfig {
    OptimConfig {
        base_lr: 0.003,
        batch_size: 8,
        epochs,
        warmup_epochs: 1,
        ..OptimConfig::default()
    }
}

pub fn random_plan(name: &str, shape: TaskShape, classes: Vec<u32>, n: usize, seed: u64) -> TaskPlan {
    TaskPlan {
        name: name.into(),
        shape,
        classes,
        optim: quick_optim(2),
        retrain_epochs: 1,
        train: random_samples(&shape, n, seed),
        val: vec![],
        test: random_samples(&shape, n / 2, seed + 1),
    }
}

/// Synthetic ECG samples at 100 Hz, 10 s windows.
pub fn synth_samples(cfg: &SynthConfig, shape: &TaskShape, classes: &[u32]) -> Vec<Sample> {
    let prep = Preprocess {
        band_hz: Some([0.5, 40.0]),
        window_seconds: 10.0,
    };
    build_samples(&preprocess(&synth_ecg(cfg).unwrap(), &prep).unwrap(), shape, classes).unwrap()
}

/// Eval statistics with random means and variances for every norm layer.
pub fn random_stats(net: &Network, shape: &TaskShape, seed: u64) -> ecgcl::nn::StatsTable<f64> {
    let mut r = rng(seed);
    net.norm_layers(shape)
        .into_iter()
        .map(|(name, c)| {
            let s = ecgcl::autograd::NormStats {
                mean: (0..c).map(|_| r.random_range(-0.5..0.5)).collect(),
                var: (0..c).map(|_| r.random_range(0.5..2.0)).collect(),
            };
            (name, s)
        })
        .collect()
}

pub fn synth_base(records: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        fs: 100.0,
        duration_s: 10.0,
        hr_bpm: [50.0, 120.0],
        records,
        seed,
        ..SynthConfig::default()
    }
}
