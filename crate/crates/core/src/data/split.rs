use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitScheme {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitScheme {
    fn default() -> Self {
        SplitScheme {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

/// Largest-remainder allocation of `n` items to the three fractions.
fn allocate(n: usize, s: &SplitScheme) -> [usize; 3] {
    let fr = [s.train, s.val, s.test];
    let raw: Vec<f64> = fr.iter().map(|f| f * n as f64).collect();
    let mut out = [0usize; 3];
    for i in 0..3 {
        out[i] = raw[i].floor() as usize;
    }
    let mut rest = n - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        if fr[i] > 0.0 {
            out[i] += 1;
            rest -= 1;
        }
    }
    out
}

/// Deterministic train/val/test split. With `by_patient`, whole patients are
/// assigned to one fold. `patient_of(item)` names the patient of an item.
pub fn split<R: Clone>(
    items: &[R],
    patient_of: impl Fn(&R) -> &str,
    scheme: SplitScheme,
    by_patient: bool,
    seed: u64,
) -> Result<(Vec<R>, Vec<R>, Vec<R>)> {
    let fr = [scheme.train, scheme.val, scheme.test];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config("split fractions must be in [0,1] and sum to 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: [Vec<R>; 3] = Default::default();
    if by_patient {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, it) in items.iter().enumerate() {
            groups.entry(patient_of(it)).or_default().push(i);
        }
        let needed = fr.iter().filter(|&&f| f > 0.0).count();
        if groups.len() < needed {
            return Err(Error::config(format!(
                "{} patients cannot fill {needed} patient-disjoint folds",
                groups.len()
            )));
        }
        let mut patients: Vec<&str> = groups.keys().copied().collect();
        patients.shuffle(&mut rng);
        let counts = allocate(patients.len(), &scheme);
        if counts.iter().zip(fr).any(|(&c, f)| f > 0.0 && c == 0) {
            return Err(Error::config("too few patients for the requested fractions"));
        }
        let mut it = patients.into_iter();
        for (fold, &c) in folds.iter_mut().zip(&counts) {
            let chosen: BTreeSet<&str> = it.by_ref().take(c).collect();
            fold.extend(items.iter().filter(|it| chosen.contains(patient_of(it))).cloned());
        }
    } else {
        let mut idx: Vec<usize> = (0..items.len()).collect();
        idx.shuffle(&mut rng);
        let counts = allocate(items.len(), &scheme);
        let mut it = idx.into_iter();
        for (fold, &c) in folds.iter_mut().zip(&counts) {
            let mut chosen: Vec<usize> = it.by_ref().take(c).collect();
            chosen.sort_unstable();
            fold.extend(chosen.into_iter().map(|i| items[i].clone()));
        }
    }
    let [a, b, c] = folds;
    Ok((a, b, c))
}
