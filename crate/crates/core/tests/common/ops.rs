//! Per-operator finite-difference sweep.

use ecgcl::autograd::{Mode, NormStats};
use ecgcl::Tensor;
use rand::Rng;

use ecgcl::network::TaskShape;

use super::{check_network, check_op, randn, rng, tiny_config};

pub const EPS: f64 = 1e-4;
pub const TOL: f64 = 1e-4;
pub const TRIALS: u64 = 8;
/// Whole-network step: small enough to stay off ReLU kinks, large enough that
/// loss rounding (about 1e-16) stays under the relative floor.
pub const FULL_EPS: f64 = 1e-5;

/// Pushes values away from the ReLU kink so that ±EPS never straddles it.
fn off_kink(mut t: Tensor<f64>) -> Tensor<f64> {
    t.data_mut().iter_mut().for_each(|v| {
        if v.abs() < 0.01 {
            *v += 0.02_f64.copysign(*v);
        }
    });
    t
}

fn run(name: &str, mut case: impl FnMut(u64) -> f64) -> u64 {
    for trial in 0..TRIALS {
        let e = case(trial);
        assert!(e <= TOL, "{name}, trial {trial}: relative error {e:e}");
    }
    TRIALS
}

/// Every operator, `TRIALS` random instances each.
pub fn all_ops() -> u64 {
    let mut n = 0;
    n += run("conv1d", |s| {
        let mut r = rng(s);
        let (b, cin, cout, k) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4), r.random_range(1..5));
        let stride = r.random_range(1..4);
        let pad = r.random_range(0..3);
        let l = r.random_range(k.max(2)..12);
        let ins = [randn(&mut r, &[b, cin, l]), randn(&mut r, &[cout, cin, k]), randn(&mut r, &[cout])];
        check_op(&ins, s, EPS, |g, v| g.conv1d(v[0], v[1], Some(v[2]), stride, pad))
    });
    n += run("conv_transpose1d", |s| {
        let mut r = rng(100 + s);
        let (b, cin, cout, k) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4), r.random_range(1..5));
        let stride = r.random_range(1..4);
        let l = r.random_range(1..8);
        let ins = [randn(&mut r, &[b, cin, l]), randn(&mut r, &[cin, cout, k]), randn(&mut r, &[cout])];
        check_op(&ins, s, EPS, |g, v| g.conv_transpose1d(v[0], v[1], Some(v[2]), stride))
    });
    n += run("interpolate", |s| {
        let mut r = rng(200 + s);
        let l = r.random_range(1..9);
        let target = r.random_range(1..20);
        let ins = [randn(&mut r, &[2, 2, l])];
        check_op(&ins, s, EPS, |g, v| g.interpolate(v[0], target))
    });
    n += run("batchnorm1d train", |s| {
        let mut r = rng(300 + s);
        let c = r.random_range(1..4);
        let ins = [randn(&mut r, &[3, c, 5]), randn(&mut r, &[c]), randn(&mut r, &[c])];
        check_op(&ins, s, EPS, |g, v| {
            let mut st = NormStats::identity(c);
            g.batchnorm1d(v[0], v[1], v[2], &mut st, Mode::Train)
        })
    });
    n += run("batchnorm1d eval", |s| {
        let mut r = rng(400 + s);
        let c = r.random_range(1..4);
        let ins = [randn(&mut r, &[2, c, 4]), randn(&mut r, &[c]), randn(&mut r, &[c])];
        let mean: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
        let var: Vec<f64> = (0..c).map(|_| r.random_range(0.2..2.0)).collect();
        check_op(&ins, s, EPS, |g, v| {
            let mut st = NormStats {
                mean: mean.clone(),
                var: var.clone(),
            };
            g.batchnorm1d(v[0], v[1], v[2], &mut st, Mode::Eval)
        })
    });
    n += run("relu", |s| {
        let ins = [off_kink(randn(&mut rng(500 + s), &[2, 3, 6]))];
        check_op(&ins, s, EPS, |g, v| Ok(g.relu(v[0])))
    });
    n += run("sigmoid", |s| {
        let ins = [randn(&mut rng(600 + s), &[2, 3, 6]).map(|v| 4.0 * v)];
        check_op(&ins, s, EPS, |g, v| Ok(g.sigmoid(v[0])))
    });
    n += run("global_avg_pool", |s| {
        let ins = [randn(&mut rng(700 + s), &[2, 3, 7])];
        check_op(&ins, s, EPS, |g, v| g.global_avg_pool(v[0]))
    });
    n += run("adaptive_avg_pool", |s| {
        let mut r = rng(800 + s);
        let l = r.random_range(2..15);
        let out = r.random_range(1..=l);
        let ins = [randn(&mut r, &[2, 2, l])];
        check_op(&ins, s, EPS, |g, v| g.adaptive_avg_pool(v[0], out))
    });
    n += run("add", |s| {
        let mut r = rng(900 + s);
        let ins = [randn(&mut r, &[2, 3, 4]), randn(&mut r, &[2, 3, 4])];
        check_op(&ins, s, EPS, |g, v| g.add(v[0], v[1]))
    });
    n += run("mul", |s| {
        let mut r = rng(1000 + s);
        let ins = [randn(&mut r, &[2, 3, 4]), randn(&mut r, &[2, 3, 4])];
        check_op(&ins, s, EPS, |g, v| g.mul(v[0], v[1]))
    });
    n += run("scale_channels", |s| {
        let mut r = rng(1100 + s);
        let ins = [randn(&mut r, &[2, 3, 5]), randn(&mut r, &[2, 3])];
        check_op(&ins, s, EPS, |g, v| g.scale_channels(v[0], v[1]))
    });
    n += run("concat_channels", |s| {
        let mut r = rng(1200 + s);
        let ins = [randn(&mut r, &[2, 1, 5]), randn(&mut r, &[2, 3, 5]), randn(&mut r, &[2, 2, 5])];
        check_op(&ins, s, EPS, |g, v| g.concat_channels(v))
    });
    n += run("fit_length", |s| {
        let mut r = rng(1300 + s);
        let l = r.random_range(1..8);
        let target = r.random_range(1..12);
        let ins = [randn(&mut r, &[2, 2, l])];
        check_op(&ins, s, EPS, |g, v| g.fit_length(v[0], target))
    });
    n += run("linear", |s| {
        let mut r = rng(1400 + s);
        let (i, o) = (r.random_range(1..6), r.random_range(1..5));
        let ins = [randn(&mut r, &[3, i]), randn(&mut r, &[o, i]), randn(&mut r, &[o])];
        check_op(&ins, s, EPS, |g, v| g.linear(v[0], v[1], Some(v[2])))
    });
    n += run("bce", |s| {
        let mut r = rng(1500 + s);
        let p = Tensor::from_vec(&[2, 5], (0..10).map(|_| r.random_range(0.05..0.95)).collect()).unwrap();
        let t = Tensor::from_vec(&[2, 5], (0..10).map(|_| f64::from(r.random_bool(0.5))).collect()).unwrap();
        check_op(&[p], s, EPS, |g, v| g.bce(v[0], &t))
    });
    n
}


/// Every parameter of the tiny network, batch of 3: `(worst, scalars, where)`.
pub fn full_graph(shape: TaskShape, seed: u64) -> (f64, usize, String) {
    check_network(tiny_config(), shape, 3, seed, FULL_EPS)
}
