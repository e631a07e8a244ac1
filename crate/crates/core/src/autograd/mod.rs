//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operator application in creation order, which is
//! a valid topological order, so the backward sweep simply walks the tape in
//! reverse and visits each node once.

mod kernels;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use kernels::{interp_coord, pool_bin, ConvGeom};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BCE_CLAMP: f64 = 1e-7;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Running statistics of one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> NormStats<T> {
    pub fn identity(channels: usize) -> Self {
        NormStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(usize),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvT1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Interp {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    AdaptiveAvgPool {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ScaleChannels {
        x: Var,
        s: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    FitLength {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Bce {
        p: Var,
        target: Vec<T>,
    },
    WeightedSum {
        x: Var,
        coeffs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to every parameter slot.
#[derive(Debug)]
pub struct Gradients<T> {
    params: BTreeMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, slot: usize) -> Option<&Tensor<T>> {
        self.params.get(&slot)
    }

    pub fn take(&mut self, slot: usize) -> Option<Tensor<T>> {
        self.params.remove(&slot)
    }

    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.params.keys().copied()
    }
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Differentiable leaf. `slot` identifies it in the returned [`Gradients`].
    pub fn param(&mut self, t: Tensor<T>, slot: usize) -> Var {
        self.push(t, Op::Param(slot), true)
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (batch, in_ch, in_len) = self.value(x).dims3()?;
        let (out_ch, w_in, k) = self.value(w).dims3()?;
        if w_in != in_ch {
            return Err(Error::shape(format!(
                "conv1d: input has {in_ch} channels, kernel expects {w_in}"
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv1d: stride must be >= 1"));
        }
        if let Some(b) = b {
            if self.value(b).len() != out_ch {
                return Err(Error::shape("conv1d: bias length != output channels"));
            }
        }
        if in_len + 2 * padding < k {
            return Err(Error::shape(format!(
                "conv1d: non-positive output length (len {in_len}, pad {padding}, k {k})"
            )));
        }
        let out_len = (in_len + 2 * padding - k) / stride + 1;
        let geom = ConvGeom {
            batch,
            in_ch,
            in_len,
            out_ch,
            out_len,
            k,
            stride,
            pad: padding,
        };
        let mut y = vec![T::zero(); batch * out_ch * out_len];
        kernels::conv1d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut y,
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let t = Tensor::from_vec(&[batch, out_ch, out_len], y)?;
        Ok(self.push(t, Op::Conv1d { x, w, b, geom }, ng))
    }

    /// Transposed convolution with kernel layout `(in_ch, out_ch, k)`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (batch, in_ch, in_len) = self.value(x).dims3()?;
        let (w_in, out_ch, k) = self.value(w).dims3()?;
        if w_in != in_ch {
            return Err(Error::shape(format!(
                "conv_transpose1d: input has {in_ch} channels, kernel expects {w_in}"
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv_transpose1d: stride must be >= 1"));
        }
        if let Some(b) = b {
            if self.value(b).len() != out_ch {
                return Err(Error::shape("conv_transpose1d: bias length != output channels"));
            }
        }
        let out_len = (in_len - 1) * stride + k;
        let geom = ConvGeom {
            batch,
            in_ch,
            in_len,
            out_ch,
            out_len,
            k,
            stride,
            pad: 0,
        };
        let mut y = vec![T::zero(); batch * out_ch * out_len];
        kernels::conv_t_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &mut y,
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let t = Tensor::from_vec(&[batch, out_ch, out_len], y)?;
        Ok(self.push(t, Op::ConvT1d { x, w, b, geom }, ng))
    }

    /// Per-channel linear interpolation with aligned endpoints.
    pub fn interpolate(&mut self, x: Var, target_len: usize) -> Result<Var> {
        if target_len == 0 {
            return Err(Error::shape("interpolate: target length must be >= 1"));
        }
        let (b, c, l) = self.value(x).dims3()?;
        let xs = self.value(x).data();
        let mut y = Vec::with_capacity(b * c * target_len);
        for row in xs.chunks(l) {
            for j in 0..target_len {
                if l == target_len {
                    y.push(row[j]);
                    continue;
                }
                let (i0, f) = interp_coord(j, l, target_len);
                if l == 1 {
                    y.push(row[0]);
                } else {
                    let f = T::of(f);
                    y.push(row[i0] * (T::one() - f) + row[i0 + 1] * f);
                }
            }
        }
        let ng = self.ng(x);
        let t = Tensor::from_vec(&[b, c, target_len], y)?;
        Ok(self.push(t, Op::Interp { x }, ng))
    }

    /// Batch normalization over `(batch, length)` per channel.
    ///
    /// In [`Mode::Train`] the batch moments normalize the input and `stats`
    /// is updated in place with momentum [`BN_MOMENTUM`]; in [`Mode::Eval`]
    /// the stored statistics are used unchanged.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut NormStats<T>,
        mode: Mode,
    ) -> Result<Var> {
        let (b, c, l) = self.value(x).dims3()?;
        if stats.channels() != c || self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape(format!(
                "batchnorm1d: {c} channels vs stats {} / gamma {} / beta {}",
                stats.channels(),
                self.value(gamma).len(),
                self.value(beta).len()
            )));
        }
        let eps = T::of(BN_EPS);
        let xs = self.value(x).data();
        let n = b * l;
        let mut inv_std = vec![T::zero(); c];
        let mut means = vec![T::zero(); c];
        match mode {
            Mode::Train => {
                let nt = T::of(n as f64);
                let mom = T::of(BN_MOMENTUM);
                for ch in 0..c {
                    let mut s = T::zero();
                    for bi in 0..b {
                        s += xs[(bi * c + ch) * l..][..l].iter().copied().sum::<T>();
                    }
                    let mean = s / nt;
                    let mut ss = T::zero();
                    for bi in 0..b {
                        for &v in &xs[(bi * c + ch) * l..][..l] {
                            ss += (v - mean) * (v - mean);
                        }
                    }
                    let var = ss / nt;
                    means[ch] = mean;
                    inv_std[ch] = T::one() / (var + eps).sqrt();
                    let unbiased = if n > 1 { ss / T::of((n - 1) as f64) } else { var };
                    stats.mean[ch] = (T::one() - mom) * stats.mean[ch] + mom * mean;
                    stats.var[ch] = (T::one() - mom) * stats.var[ch] + mom * unbiased;
                }
            }
            Mode::Eval => {
                for ch in 0..c {
                    means[ch] = stats.mean[ch];
                    inv_std[ch] = T::one() / (stats.var[ch] + eps).sqrt();
                }
            }
        }
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vec![T::zero(); xs.len()];
        let mut y = vec![T::zero(); xs.len()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * l;
                for i in off..off + l {
                    let h = (xs[i] - means[ch]) * inv_std[ch];
                    xhat[i] = h;
                    y[i] = g[ch] * h + be[ch];
                }
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let t = Tensor::from_vec(&[b, c, l], y)?;
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
            ng,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let ng = self.ng(x);
        self.push(t, Op::Relu { x }, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(t, Op::Sigmoid { x }, ng)
    }

    /// `(batch, channels, length)` → `(batch, channels)` mean over length.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (b, c, l) = self.value(x).dims3()?;
        let lt = T::of(l as f64);
        let y: Vec<T> = self
            .value(x)
            .data()
            .chunks(l)
            .map(|row| row.iter().copied().sum::<T>() / lt)
            .collect();
        let ng = self.ng(x);
        let t = Tensor::from_vec(&[b, c], y)?;
        Ok(self.push(t, Op::GlobalAvgPool { x }, ng))
    }

    /// Mean over bins `[floor(i·L/out), floor((i+1)·L/out))`.
    pub fn adaptive_avg_pool(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let (b, c, l) = self.value(x).dims3()?;
        if out_len == 0 || out_len > l {
            return Err(Error::shape(format!(
                "adaptive_avg_pool: output length {out_len} not in 1..={l}"
            )));
        }
        let mut y = Vec::with_capacity(b * c * out_len);
        for row in self.value(x).data().chunks(l) {
            for i in 0..out_len {
                let (s, e) = pool_bin(i, l, out_len);
                let sum: T = row[s..e].iter().copied().sum();
                y.push(sum / T::of((e - s) as f64));
            }
        }
        let ng = self.ng(x);
        let t = Tensor::from_vec(&[b, c, out_len], y)?;
        Ok(self.push(t, Op::AdaptiveAvgPool { x }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add { a, b }, ng))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "mul: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p * q)
            .collect();
        let t = Tensor::from_vec(self.value(a).shape(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul { a, b }, ng))
    }

    /// `x (B,C,L) ⊙ s (B,C)` broadcast along length.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (b, c, l) = self.value(x).dims3()?;
        if self.value(s).shape() != [b, c] {
            return Err(Error::shape(format!(
                "scale_channels: weights {:?} vs map {:?}",
                self.value(s).shape(),
                [b, c, l]
            )));
        }
        let sv = self.value(s).data();
        let data = self
            .value(x)
            .data()
            .chunks(l)
            .zip(sv)
            .flat_map(|(row, &w)| row.iter().map(move |&v| v * w))
            .collect();
        let t = Tensor::from_vec(&[b, c, l], data)?;
        let ng = self.ng(x) || self.ng(s);
        Ok(self.push(t, Op::ScaleChannels { x, s }, ng))
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let (b, _, l) = self.value(*first).dims3()?;
        let mut total_c = 0;
        for &v in xs {
            let (vb, vc, vl) = self.value(v).dims3()?;
            if vb != b || vl != l {
                return Err(Error::shape(format!(
                    "concat: {:?} vs batch {b} length {l}",
                    self.value(v).shape()
                )));
            }
            total_c += vc;
        }
        let mut data = Vec::with_capacity(b * total_c * l);
        for bi in 0..b {
            for &v in xs {
                let (_, vc, _) = self.value(v).dims3()?;
                data.extend_from_slice(&self.value(v).data()[bi * vc * l..(bi + 1) * vc * l]);
            }
        }
        let ng = xs.iter().any(|&v| self.ng(v));
        let t = Tensor::from_vec(&[b, total_c, l], data)?;
        Ok(self.push(t, Op::Concat { xs: xs.to_vec() }, ng))
    }

    /// Truncate or zero-pad along length.
    pub fn fit_length(&mut self, x: Var, len: usize) -> Result<Var> {
        let (b, c, l) = self.value(x).dims3()?;
        if l == len {
            return Ok(x);
        }
        let mut data = Vec::with_capacity(b * c * len);
        for row in self.value(x).data().chunks(l) {
            let keep = l.min(len);
            data.extend_from_slice(&row[..keep]);
            data.extend(std::iter::repeat_n(T::zero(), len - keep));
        }
        let ng = self.ng(x);
        let t = Tensor::from_vec(&[b, c, len], data)?;
        Ok(self.push(t, Op::FitLength { x }, ng))
    }

    /// `x (B,F)`, `w (O,F)`, `b (O)` → `(B,O)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (bs, f) = self.value(x).dims2()?;
        let (o, wf) = self.value(w).dims2()?;
        if wf != f {
            return Err(Error::shape(format!("linear: input {f} features, weight expects {wf}")));
        }
        if let Some(b) = b {
            if self.value(b).len() != o {
                return Err(Error::shape("linear: bias length != outputs"));
            }
        }
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let mut y = Vec::with_capacity(bs * o);
        for row in xs.chunks(f) {
            for (oi, wrow) in ws.chunks(f).enumerate() {
                let mut acc = b.map_or(T::zero(), |b| self.value(b).data()[oi]);
                for (&a, &c) in row.iter().zip(wrow) {
                    acc += a * c;
                }
                y.push(acc);
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let t = Tensor::from_vec(&[bs, o], y)?;
        Ok(self.push(t, Op::Linear { x, w, b }, ng))
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 targets.
    /// Probabilities are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, target: &Tensor<T>) -> Result<Var> {
        if self.value(p).shape() != target.shape() {
            return Err(Error::shape(format!(
                "bce: predictions {:?} vs targets {:?}",
                self.value(p).shape(),
                target.shape()
            )));
        }
        let n = T::of(target.len() as f64);
        let loss = self
            .value(p)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&pv, &tv)| bce_term(pv, tv))
            .sum::<T>()
            / n;
        let ng = self.ng(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                target: target.data().to_vec(),
            },
            ng,
        ))
    }

    /// `Σ coeffs ⊙ x`, a scalar probe used for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, coeffs: &[T]) -> Result<Var> {
        if self.value(x).len() != coeffs.len() {
            return Err(Error::shape("weighted_sum: coefficient count mismatch"));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(coeffs)
            .map(|(&a, &c)| a * c)
            .sum();
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                coeffs: coeffs.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut params = BTreeMap::new();
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &dy, &mut grads, &mut params)?;
        }
        Ok(Gradients { params })
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        dy: &[T],
        grads: &mut [Option<Vec<T>>],
        params: &mut BTreeMap<usize, Tensor<T>>,
    ) -> Result<()> {
        let zeros = |v: Var| vec![T::zero(); self.value(v).len()];
        // Temporarily take an accumulator out of `grads`, fill it, put it back.
        macro_rules! acc {
            ($v:expr) => {
                if self.ng($v) {
                    Some(grads[$v.0].take().unwrap_or_else(|| zeros($v)))
                } else {
                    None
                }
            };
        }
        macro_rules! put {
            ($v:expr, $g:expr) => {
                if let Some(g) = $g {
                    grads[$v.0] = Some(g);
                }
            };
        }
        match &node.op {
            Op::Input => {}
            Op::Param(slot) => {
                let t = Tensor::from_vec(node.value.shape(), dy.to_vec())?;
                match params.get_mut(slot) {
                    Some(existing) => {
                        for (a, b) in existing.data_mut().iter_mut().zip(t.data()) {
                            *a += *b;
                        }
                    }
                    None => {
                        params.insert(*slot, t);
                    }
                }
            }
            Op::Conv1d { x, w, b, geom } | Op::ConvT1d { x, w, b, geom } => {
                let mut dx = acc!(*x);
                let mut dw = acc!(*w);
                let mut db = b.and_then(|b| acc!(b));
                let f = if matches!(node.op, Op::Conv1d { .. }) {
                    kernels::conv1d_backward::<T>
                } else {
                    kernels::conv_t_backward::<T>
                };
                f(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dy,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                put!(*x, dx);
                put!(*w, dw);
                if let Some(b) = b {
                    put!(*b, db);
                }
            }
            Op::Interp { x } => {
                let mut dx = acc!(*x);
                if let Some(d) = dx.as_mut() {
                    let l = self.value(*x).dims3()?.2;
                    let out = node.value.dims3()?.2;
                    for (drow, dyrow) in d.chunks_mut(l).zip(dy.chunks(out)) {
                        for (j, &g) in dyrow.iter().enumerate() {
                            if l == out {
                                drow[j] += g;
                            } else if l == 1 {
                                drow[0] += g;
                            } else {
                                let (i0, f) = interp_coord(j, l, out);
                                let f = T::of(f);
                                drow[i0] += g * (T::one() - f);
                                drow[i0 + 1] += g * f;
                            }
                        }
                    }
                }
                put!(*x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (b, c, l) = self.value(*x).dims3()?;
                let g = self.value(*gamma).data();
                let mut dgamma = acc!(*gamma);
                let mut dbeta = acc!(*beta);
                let mut dx = acc!(*x);
                let n = T::of((b * l) as f64);
                for ch in 0..c {
                    let mut sum_dy = T::zero();
                    let mut sum_dy_xhat = T::zero();
                    for bi in 0..b {
                        let off = (bi * c + ch) * l;
                        for i in off..off + l {
                            sum_dy += dy[i];
                            sum_dy_xhat += dy[i] * xhat[i];
                        }
                    }
                    if let Some(dg) = dgamma.as_mut() {
                        dg[ch] += sum_dy_xhat;
                    }
                    if let Some(dbt) = dbeta.as_mut() {
                        dbt[ch] += sum_dy;
                    }
                    if let Some(d) = dx.as_mut() {
                        let scale = g[ch] * inv_std[ch];
                        for bi in 0..b {
                            let off = (bi * c + ch) * l;
                            for i in off..off + l {
                                if *batch_stats {
                                    d[i] += scale * (dy[i] - sum_dy / n - xhat[i] * sum_dy_xhat / n);
                                } else {
                                    d[i] += scale * dy[i];
                                }
                            }
                        }
                    }
                }
                put!(*gamma, dgamma);
                put!(*beta, dbeta);
                put!(*x, dx);
            }
            Op::Relu { x } => {
                let mut dx = acc!(*x);
                if let Some(d) = dx.as_mut() {
                    for ((d, &g), &v) in d.iter_mut().zip(dy).zip(node.value.data()) {
                        if v > T::zero() {
                            *d += g;
                        }
                    }
                }
                put!(*x, dx);
            }
            Op::Sigmoid { x } => {
                let mut dx = acc!(*x);
                if let Some(d) = dx.as_mut() {
                    for ((d, &g), &s) in d.iter_mut().zip(dy).zip(node.value.data()) {
                        *d += g * s * (T::one() - s);
                    }
                }
                put!(*x, dx);
            }
            Op::GlobalAvgPool { x } => {
                let mut dx = acc!(*x);
                if let Some(d) = dx.as_mut() {
                    let l = self.value(*x).dims3()?.2;
                    let lt = T::of(l as f64);
                    for (row, &g) in d.chunks_mut(l).zip(dy) {
                        row.iter_mut().for_each(|v| *v += g / lt);
                    }
                }
                put!(*x, dx);
            }
            Op::AdaptiveAvgPool { x } => {
                let mut dx = acc!(*x);
                if let Some(d) = dx.as_mut() {
                    let l = self.value(*x).dims3()?.2;
                    let out = node.value.dims3()?.2;
                    for (row, dyrow) in d.chunks_mut(l).zip(dy.chunks(out)) {
                        for (i, &g) in dyrow.iter().enumerate() {
                            let (s, e) = pool_bin(i, l, out);
                            let share = g / T::of((e - s) as f64);
                            row[s..e].iter_mut().for_each(|v| *v += share);
                        }
                    }
                }
                put!(*x, dx);
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    let mut d = acc!(v);
                    if let Some(d) = d.as_mut() {
                        d.iter_mut().zip(dy).for_each(|(d, &g)| *d += g);
                    }
                    put!(v, d);
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let mut da = acc!(*a);
                if let Some(d) = da.as_mut() {
                    for i in 0..d.len() {
                        d[i] += dy[i] * bv[i];
                    }
                }
                put!(*a, da);
                let mut db = acc!(*b);
                if let Some(d) = db.as_mut() {
                    for i in 0..d.len() {
                        d[i] += dy[i] * av[i];
                    }
                }
                put!(*b, db);
            }
            Op::ScaleChannels { x, s } => {
                let l = self.value(*x).dims3()?.2;
                let xv = self.value(*x).data();
                let sv = self.value(*s).data();
                let mut dx = acc!(*x);
                if let Some(d) = dx.as_mut() {
                    for ((drow, dyrow), &w) in d.chunks_mut(l).zip(dy.chunks(l)).zip(sv) {
                        for (d, &g) in drow.iter_mut().zip(dyrow) {
                            *d += g * w;
                        }
                    }
                }
                put!(*x, dx);
                let mut ds = acc!(*s);
                if let Some(d) = ds.as_mut() {
                    for ((d, dyrow), xrow) in d.iter_mut().zip(dy.chunks(l)).zip(xv.chunks(l)) {
                        let mut acc = T::zero();
                        for (&g, &v) in dyrow.iter().zip(xrow) {
                            acc += g * v;
                        }
                        *d += acc;
                    }
                }
                put!(*s, ds);
            }
            Op::Concat { xs } => {
                let (b, total_c, l) = node.value.dims3()?;
                let mut ch_off = 0;
                for &v in xs {
                    let vc = self.value(v).dims3()?.1;
                    let mut d = acc!(v);
                    if let Some(d) = d.as_mut() {
                        for bi in 0..b {
                            let src = &dy[(bi * total_c + ch_off) * l..][..vc * l];
                            let dst = &mut d[bi * vc * l..][..vc * l];
                            dst.iter_mut().zip(src).for_each(|(d, &g)| *d += g);
                        }
                    }
                    put!(v, d);
                    ch_off += vc;
                }
            }
            Op::FitLength { x } => {
                let l = self.value(*x).dims3()?.2;
                let len = node.value.dims3()?.2;
                let keep = l.min(len);
                let mut dx = acc!(*x);
                if let Some(d) = dx.as_mut() {
                    for (drow, dyrow) in d.chunks_mut(l).zip(dy.chunks(len)) {
                        drow[..keep]
                            .iter_mut()
                            .zip(&dyrow[..keep])
                            .for_each(|(d, &g)| *d += g);
                    }
                }
                put!(*x, dx);
            }
            Op::Linear { x, w, b } => {
                let (_, f) = self.value(*x).dims2()?;
                let o = self.value(*w).dims2()?.0;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut dx = acc!(*x);
                if let Some(d) = dx.as_mut() {
                    for (drow, dyrow) in d.chunks_mut(f).zip(dy.chunks(o)) {
                        for (&g, wrow) in dyrow.iter().zip(wv.chunks(f)) {
                            for (d, &wq) in drow.iter_mut().zip(wrow) {
                                *d += g * wq;
                            }
                        }
                    }
                }
                put!(*x, dx);
                let mut dw = acc!(*w);
                if let Some(d) = dw.as_mut() {
                    for (xrow, dyrow) in xv.chunks(f).zip(dy.chunks(o)) {
                        for (drow, &g) in d.chunks_mut(f).zip(dyrow) {
                            for (d, &xq) in drow.iter_mut().zip(xrow) {
                                *d += g * xq;
                            }
                        }
                    }
                }
                put!(*w, dw);
                if let Some(b) = b {
                    let mut db = acc!(*b);
                    if let Some(d) = db.as_mut() {
                        for dyrow in dy.chunks(o) {
                            d.iter_mut().zip(dyrow).for_each(|(d, &g)| *d += g);
                        }
                    }
                    put!(*b, db);
                }
            }
            Op::Bce { p, target } => {
                let mut dp = acc!(*p);
                if let Some(d) = dp.as_mut() {
                    let n = T::of(target.len() as f64);
                    let pv = self.value(*p).data();
                    for i in 0..d.len() {
                        d[i] += dy[0] * bce_grad(pv[i], target[i]) / n;
                    }
                }
                put!(*p, dp);
            }
            Op::WeightedSum { x, coeffs } => {
                let mut dx = acc!(*x);
                if let Some(d) = dx.as_mut() {
                    d.iter_mut().zip(coeffs).for_each(|(d, &c)| *d += dy[0] * c);
                }
                put!(*x, dx);
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn clamp_prob<T: Real>(p: T) -> T {
    let lo = T::of(BCE_CLAMP);
    p.max(lo).min(T::one() - lo)
}

fn bce_term<T: Real>(p: T, t: T) -> T {
    let p = clamp_prob(p);
    -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
}

// The clamp bounds the value but the gradient is taken at the clamped point
// rather than zeroed, so saturated sigmoids still receive a learning signal.
fn bce_grad<T: Real>(p: T, t: T) -> T {
    let p = clamp_prob(p);
    -(t / p) + (T::one() - t) / (T::one() - p)
}
