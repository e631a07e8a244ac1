//! Plain-loop reimplementations of the network pieces, eval mode only.
//! They read the same named weights but share no code with the graph.

use ecgcl::autograd::{NormStats, BN_EPS};
use ecgcl::encoder::{BranchMerge, ResamplePath};
use ecgcl::nn::{ConvUnit, StatsTable};
use ecgcl::params::ParamStore;
use ecgcl::Tensor;

use super::{conv1d_oracle, conv_t_oracle};

/// `(batch, channels, length)` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Fm {
    pub b: usize,
    pub c: usize,
    pub l: usize,
    pub d: Vec<f64>,
}

impl Fm {
    pub fn from_tensor(t: &Tensor<f64>) -> Fm {
        let (b, c, l) = t.dims3().unwrap();
        Fm { b, c, l, d: t.data().to_vec() }
    }

    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::from_vec(&[self.b, self.c, self.l], self.d.clone()).unwrap()
    }

    pub fn at(&self, b: usize, c: usize, t: usize) -> f64 {
        self.d[(b * self.c + c) * self.l + t]
    }

    fn map(mut self, f: impl Fn(f64) -> f64) -> Fm {
        self.d.iter_mut().for_each(|v| *v = f(*v));
        self
    }
}

pub fn relu(x: Fm) -> Fm {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn add(a: &Fm, b: &Fm) -> Fm {
    assert_eq!((a.b, a.c, a.l), (b.b, b.c, b.l));
    Fm {
        d: a.d.iter().zip(&b.d).map(|(x, y)| x + y).collect(),
        ..a.clone()
    }
}

fn w(store: &ParamStore<f64>, name: &str) -> Tensor<f64> {
    store.get(name).unwrap().values.clone()
}

pub fn batchnorm_eval(x: &Fm, gamma: &[f64], beta: &[f64], s: &NormStats<f64>) -> Fm {
    let mut y = x.clone();
    for b in 0..x.b {
        for c in 0..x.c {
            let inv = 1.0 / (s.var[c] + BN_EPS).sqrt();
            for t in 0..x.l {
                y.d[(b * x.c + c) * x.l + t] = gamma[c] * (x.at(b, c, t) - s.mean[c]) * inv + beta[c];
            }
        }
    }
    y
}

pub fn unit(u: &ConvUnit, store: &ParamStore<f64>, stats: &StatsTable<f64>, x: &Fm) -> Fm {
    let kernel = w(store, &format!("{}.w", u.name));
    let bias = w(store, &format!("{}.b", u.name));
    let xt = x.to_tensor();
    let (d, c) = if u.transpose {
        (conv_t_oracle(&xt, &kernel, bias.data(), u.stride), kernel.shape()[1])
    } else {
        (conv1d_oracle(&xt, &kernel, bias.data(), u.stride, u.pad), kernel.shape()[0])
    };
    let l = d.len() / (x.b * c);
    let y = Fm { b: x.b, c, l, d };
    if !u.norm {
        return y;
    }
    let g = w(store, &format!("{}.bn.gamma", u.name));
    let be = w(store, &format!("{}.bn.beta", u.name));
    batchnorm_eval(&y, g.data(), be.data(), &stats[&format!("{}.bn", u.name)])
}

pub fn fit_length(x: &Fm, len: usize) -> Fm {
    let mut d = Vec::with_capacity(x.b * x.c * len);
    for row in x.d.chunks(x.l) {
        d.extend((0..len).map(|t| row.get(t).copied().unwrap_or(0.0)));
    }
    Fm { l: len, d, ..*x }
}

/// Linear interpolation with the first and last samples aligned.
pub fn interpolate(x: &Fm, len: usize) -> Fm {
    let mut d = Vec::with_capacity(x.b * x.c * len);
    for row in x.d.chunks(x.l) {
        for j in 0..len {
            if x.l == 1 || len == 1 {
                d.push(row[0]);
                continue;
            }
            let pos = j as f64 * (x.l - 1) as f64 / (len - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(x.l - 1);
            let f = pos - lo as f64;
            d.push(row[lo] * (1.0 - f) + row[hi] * f);
        }
    }
    Fm { l: len, d, ..*x }
}

pub fn concat(parts: &[Fm]) -> Fm {
    let (b, l) = (parts[0].b, parts[0].l);
    let c: usize = parts.iter().map(|p| p.c).sum();
    let mut d = Vec::with_capacity(b * c * l);
    for bi in 0..b {
        for p in parts {
            d.extend_from_slice(&p.d[bi * p.c * l..(bi + 1) * p.c * l]);
        }
    }
    Fm { b, c, l, d }
}

/// `(b, c)` channel means.
pub fn gap(x: &Fm) -> Vec<Vec<f64>> {
    (0..x.b)
        .map(|b| (0..x.c).map(|c| (0..x.l).map(|t| x.at(b, c, t)).sum::<f64>() / x.l as f64).collect())
        .collect()
}

pub fn linear(x: &[f64], wt: &Tensor<f64>, bias: &[f64]) -> Vec<f64> {
    let (o, i) = (wt.shape()[0], wt.shape()[1]);
    (0..o)
        .map(|r| bias[r] + (0..i).map(|k| wt.data()[r * i + k] * x[k]).sum::<f64>())
        .collect()
}

/// One input branch carried to an output branch of `target` length.
pub fn resample(path: &ResamplePath, store: &ParamStore<f64>, stats: &StatsTable<f64>, x: &Fm, target: usize) -> Fm {
    match path {
        ResamplePath::Identity => x.clone(),
        ResamplePath::Down(hops) => {
            let mut h = x.clone();
            for (i, hop) in hops.iter().enumerate() {
                if i > 0 {
                    h = relu(h);
                }
                h = unit(hop, store, stats, &h);
            }
            h
        }
        ResamplePath::Up { upsample, project } => {
            let h = unit(upsample, store, stats, x);
            fit_length(&unit(project, store, stats, &h), target)
        }
    }
}

pub fn merge(m: &BranchMerge, store: &ParamStore<f64>, stats: &StatsTable<f64>, branches: &[Fm]) -> Vec<Fm> {
    m.paths
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let target = branches[r].l;
            let sum = row
                .iter()
                .enumerate()
                .map(|(s, path)| resample(path, store, stats, &branches[s], target))
                .reduce(|a, b| add(&a, &b))
                .unwrap();
            relu(sum)
        })
        .collect()
}

/// Per-sample probabilities, `ceil(L/4)` each.
pub fn seg_decode(store: &ParamStore<f64>, branches: &[Fm]) -> Vec<Vec<f64>> {
    let l0 = branches[0].l;
    let mut parts = vec![branches[0].clone()];
    parts.extend(branches[1..].iter().map(|b| interpolate(b, l0)));
    let z = concat(&parts);
    let pooled = gap(&z);
    let proj_w = w(store, "seg.proj.w");
    let proj_b = w(store, "seg.proj.b").data()[0];
    (0..z.b)
        .map(|b| {
            let h: Vec<f64> = linear(&pooled[b], &w(store, "seg.se.fc1.w"), w(store, "seg.se.fc1.b").data())
                .into_iter()
                .map(|v| v.max(0.0))
                .collect();
            let gate: Vec<f64> = linear(&h, &w(store, "seg.se.fc2.w"), w(store, "seg.se.fc2.b").data())
                .into_iter()
                .map(sigmoid)
                .collect();
            // pooling to ceil(L/4) bins of one sample each is the identity
            (0..l0)
                .map(|t| {
                    let logit: f64 = proj_b + (0..z.c).map(|c| proj_w.data()[c] * gate[c] * z.at(b, c, t)).sum::<f64>();
                    sigmoid(logit)
                })
                .collect()
        })
        .collect()
}

pub fn cls_decode(
    fuse: &[ConvUnit],
    store: &ParamStore<f64>,
    stats: &StatsTable<f64>,
    branches: &[Fm],
) -> Vec<Vec<f64>> {
    let mut acc = branches[0].clone();
    for (i, u) in fuse.iter().enumerate() {
        acc = add(&unit(u, store, stats, &acc), &branches[i + 1]);
    }
    let head_w = w(store, "cls.head.w");
    let head_b = w(store, "cls.head.b");
    gap(&acc)
        .iter()
        .map(|p| linear(p, &head_w, head_b.data()).into_iter().map(sigmoid).collect())
        .collect()
}
