//! R-peak matching and ROC AUC on small hand-made inputs.
//!
//! cargo run --example metrics

use ecgcl::train::metrics::{auc, tolerance_samples};
use ecgcl::train::{macro_auc, qrs_match, seg_predictions};

fn main() {
    let fs = 500.0;
    let tol = tolerance_samples(fs);
    let truth = [500, 1000, 1500, 2000];
    let pred = [505, 1040, 1990, 2600];
    let m = qrs_match(&pred, &truth, tol);
    println!("tolerance {tol} samples: tp {} fp {} fn {}", m.tp, m.fp, m.fn_);
    println!("SEN {:.3}  PP {:.3}  F1 {:.3}", m.sen(), m.pp(), m.f1());

    // Runs of above-threshold positions collapse to their centroids, mapped
    // back to input samples.
    let probs = [0.1, 0.7, 0.9, 0.6, 0.2, 0.1, 0.8, 0.1];
    println!("segmentation output {probs:?} -> R-peaks at {:?}", seg_predictions(&probs));

    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [false, false, true, true];
    println!("AUC {:?}", auc(&scores, &labels));

    // One row per class, one column per sample. Class 2 never occurs and is
    // left out of the mean.
    let scores = vec![vec![0.9, 0.1, 0.8, 0.3], vec![0.2, 0.3, 0.6, 0.7], vec![0.5, 0.5, 0.1, 0.2]];
    let labels = vec![
        vec![true, false, true, false],
        vec![false, true, true, false],
        vec![false, false, false, false],
    ];
    let (per_class, mean) = macro_auc(&scores, &labels);
    println!("per-class {per_class:?}, macro {mean:?}");
}
