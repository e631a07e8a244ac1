//! Seeded randomized comparisons against the brute-force oracles.

use ecgcl::autograd::Graph;
use ecgcl::train::{macro_auc, qrs_match};
use rand::Rng;

use super::{auc_pairs, conv1d_oracle, conv_t_oracle, max_matching, randn, rng};

/// Relative difference with a floor far below any value the sweeps produce.
pub fn rel(a: f64, o: f64) -> f64 {
    (a - o).abs() / o.abs().max(1e-9)
}

/// Worst relative error of `conv1d` against the loop oracle over `n` instances.
pub fn conv1d_sweep(n: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..n {
        let mut r = rng(10_000 + s);
        let (b, cin, cout, k): (usize, usize, usize, usize) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..5), r.random_range(1..6));
        let stride = r.random_range(1..4);
        let pad = r.random_range(0..3);
        let l = r.random_range(k.saturating_sub(2 * pad).max(1)..20);
        let x = randn(&mut r, &[b, cin, l]);
        let w = randn(&mut r, &[cout, cin, k]);
        let bias = randn(&mut r, &[cout]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(bias.clone()));
        let y = g.conv1d(xv, wv, Some(bv), stride, pad).unwrap();
        let o = conv1d_oracle(&x, &w, bias.data(), stride, pad);
        assert_eq!(g.value(y).len(), o.len());
        for (a, e) in g.value(y).data().iter().zip(&o) {
            worst = worst.max(rel(*a, *e));
        }
    }
    worst
}

/// Worst relative error of `conv_transpose1d` against the scatter oracle.
pub fn conv_t_sweep(n: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..n {
        let mut r = rng(20_000 + s);
        let (b, cin, cout, k): (usize, usize, usize, usize) = (r.random_range(1..4), r.random_range(1..5), r.random_range(1..5), r.random_range(1..6));
        let stride = r.random_range(1..5);
        let l = r.random_range(1..12);
        let x = randn(&mut r, &[b, cin, l]);
        let w = randn(&mut r, &[cin, cout, k]);
        let bias = randn(&mut r, &[cout]);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(bias.clone()));
        let y = g.conv_transpose1d(xv, wv, Some(bv), stride).unwrap();
        let o = conv_t_oracle(&x, &w, bias.data(), stride);
        assert_eq!(g.value(y).len(), o.len());
        for (a, e) in g.value(y).data().iter().zip(&o) {
            worst = worst.max(rel(*a, *e));
        }
    }
    worst
}

/// Random multi-label scores on a coarse grid (so ties occur) and labels.
pub fn auc_instance(seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let mut r = rng(seed);
    let classes = r.random_range(1..6);
    let samples = r.random_range(2..=200);
    let scores = (0..classes)
        .map(|_| (0..samples).map(|_| f64::from(r.random_range(0..20u8)) / 20.0).collect())
        .collect();
    let labels = (0..classes)
        .map(|_| {
            let p = r.random_range(0.05..0.95);
            (0..samples).map(|_| r.random_bool(p)).collect()
        })
        .collect();
    (scores, labels)
}

/// Whether `macro_auc` equals the pairwise oracle exactly on `n` instances.
pub fn auc_sweep(n: u64) -> bool {
    (0..n).all(|s| {
        let (scores, labels) = auc_instance(30_000 + s);
        let (per, mac) = macro_auc(&scores, &labels);
        let want: Vec<Option<f64>> = scores.iter().zip(&labels).map(|(s, l)| auc_pairs(s, l)).collect();
        let valid: Vec<f64> = want.iter().flatten().copied().collect();
        let want_mac = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
        per == want && mac == want_mac
    })
}

/// Truth with spacing above `2·tol` and predictions scattered around it.
pub fn match_instance(seed: u64) -> (Vec<usize>, Vec<usize>, usize) {
    let mut r = rng(seed);
    let tol = r.random_range(1..6);
    let mut truth = Vec::new();
    let mut t = r.random_range(0..10);
    for _ in 0..r.random_range(0..7) {
        truth.push(t);
        t += 2 * tol + 1 + r.random_range(0..10);
    }
    let end = t + 10;
    let mut pred: Vec<usize> = (0..r.random_range(0..8)).map(|_| r.random_range(0..end)).collect();
    for &q in &truth {
        if r.random_bool(0.6) {
            pred.push((q + r.random_range(0..=2 * tol)).saturating_sub(tol));
        }
    }
    pred.sort_unstable();
    pred.dedup();
    (pred, truth, tol)
}

/// Whether `qrs_match` finds the maximum matching on `n` instances.
pub fn match_sweep(n: u64) -> bool {
    (0..n).all(|s| {
        let (pred, truth, tol) = match_instance(40_000 + s);
        let c = qrs_match(&pred, &truth, tol);
        let best = max_matching(&pred, &truth, tol);
        c.tp == best && c.fp == pred.len() - best && c.fn_ == truth.len() - best
    })
}
