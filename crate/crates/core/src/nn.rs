//! Layer descriptors and the forward-pass context that binds named weights
//! onto a [`Graph`].

use std::collections::{BTreeMap, HashMap};

use crate::autograd::{Gradients, Graph, Mode, NormStats, Var};
use crate::error::{Error, Result};
use crate::params::{Init, ParamSpec, ParamStore, Role};
use crate::tensor::{Real, Tensor};

/// Running statistics for every normalization layer, keyed by layer name.
pub type StatsTable<T> = BTreeMap<String, NormStats<T>>;

/// Anything that can hand out the (effective) value of a named weight.
pub trait Weights<T> {
    fn weight(&self, name: &str) -> Result<Tensor<T>>;
}

impl<T: Real> Weights<T> for ParamStore<T> {
    fn weight(&self, name: &str) -> Result<Tensor<T>> {
        Ok(self.get(name)?.values.clone())
    }
}

/// A graph under construction together with the weights and normalization
/// statistics it reads.
pub struct Forward<'a, T: Real> {
    pub graph: Graph<T>,
    weights: &'a dyn Weights<T>,
    stats: &'a mut StatsTable<T>,
    mode: Mode,
    bound: HashMap<String, Var>,
    slots: Vec<String>,
}

impl<'a, T: Real> Forward<'a, T> {
    pub fn new(weights: &'a dyn Weights<T>, stats: &'a mut StatsTable<T>, mode: Mode) -> Self {
        Forward {
            graph: Graph::new(),
            weights,
            stats,
            mode,
            bound: HashMap::new(),
            slots: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Graph leaf for a named weight, created on first use.
    pub fn bind(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.weights.weight(name)?;
        let slot = self.slots.len();
        self.slots.push(name.to_string());
        let v = self.graph.param(t, slot);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn batchnorm(&mut self, x: Var, name: &str) -> Result<Var> {
        let gamma = self.bind(&format!("{name}.gamma"))?;
        let beta = self.bind(&format!("{name}.beta"))?;
        let stats = self
            .stats
            .get_mut(name)
            .ok_or_else(|| Error::Lookup(format!("no normalization statistics for `{name}`")))?;
        self.graph.batchnorm1d(x, gamma, beta, stats, self.mode)
    }

    /// Gradients keyed by weight name.
    pub fn named_grads(&self, loss: Var) -> Result<BTreeMap<String, Tensor<T>>> {
        let mut g: Gradients<T> = self.graph.backward(loss)?;
        let slots: Vec<usize> = g.slots().collect();
        Ok(slots
            .into_iter()
            .filter_map(|s| g.take(s).map(|t| (self.slots[s].clone(), t)))
            .collect())
    }
}

/// Convolution (optionally transposed) with bias and optional batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvUnit {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub transpose: bool,
    pub norm: bool,
    pub kernel_role: Role,
}

impl ConvUnit {
    /// `k=3`, padding 1: keeps length at stride 1, gives `ceil(L/2)` at stride 2.
    pub fn k3(name: String, in_ch: usize, out_ch: usize, stride: usize, role: Role) -> Self {
        ConvUnit {
            name,
            in_ch,
            out_ch,
            k: 3,
            stride,
            pad: 1,
            transpose: false,
            norm: true,
            kernel_role: role,
        }
    }

    pub fn pointwise(name: String, in_ch: usize, out_ch: usize, norm: bool, role: Role) -> Self {
        ConvUnit {
            name,
            in_ch,
            out_ch,
            k: 1,
            stride: 1,
            pad: 0,
            transpose: false,
            norm,
            kernel_role: role,
        }
    }

    /// Non-overlapping transposed convolution upsampling by `factor`.
    pub fn upsample(name: String, in_ch: usize, out_ch: usize, factor: usize, role: Role) -> Self {
        ConvUnit {
            name,
            in_ch,
            out_ch,
            k: factor,
            stride: factor,
            pad: 0,
            transpose: true,
            norm: false,
            kernel_role: role,
        }
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        if self.transpose {
            vec![self.in_ch, self.out_ch, self.k]
        } else {
            vec![self.out_ch, self.in_ch, self.k]
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        let fan_in = if self.transpose {
            self.in_ch * self.k / self.stride
        } else {
            self.in_ch * self.k
        };
        out.push(ParamSpec {
            name: format!("{}.w", self.name),
            shape: self.kernel_shape(),
            role: self.kernel_role,
            init: Init::He { fan_in },
        });
        out.push(ParamSpec {
            name: format!("{}.b", self.name),
            shape: vec![self.out_ch],
            role: Role::Exclusive,
            init: Init::Zeros,
        });
        if self.norm {
            out.push(ParamSpec {
                name: format!("{}.bn.gamma", self.name),
                shape: vec![self.out_ch],
                role: Role::Exclusive,
                init: Init::Ones,
            });
            out.push(ParamSpec {
                name: format!("{}.bn.beta", self.name),
                shape: vec![self.out_ch],
                role: Role::Exclusive,
                init: Init::Zeros,
            });
        }
    }

    pub fn norm_layers(&self, out: &mut Vec<(String, usize)>) {
        if self.norm {
            out.push((format!("{}.bn", self.name), self.out_ch));
        }
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.bind(&format!("{}.w", self.name))?;
        let b = f.bind(&format!("{}.b", self.name))?;
        let y = if self.transpose {
            f.graph.conv_transpose1d(x, w, Some(b), self.stride)?
        } else {
            f.graph.conv1d(x, w, Some(b), self.stride, self.pad)?
        };
        if self.norm {
            f.batchnorm(y, &format!("{}.bn", self.name))
        } else {
            Ok(y)
        }
    }
}

/// Two-layer residual block: conv-BN-ReLU-conv-BN, identity skip, ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub conv1: ConvUnit,
    pub conv2: ConvUnit,
}

impl ResBlock {
    pub fn new(name: &str, ch: usize, role: Role) -> Self {
        ResBlock {
            conv1: ConvUnit::k3(format!("{name}.c1"), ch, ch, 1, role),
            conv2: ConvUnit::k3(format!("{name}.c2"), ch, ch, 1, role),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.conv1.specs(out);
        self.conv2.specs(out);
    }

    pub fn norm_layers(&self, out: &mut Vec<(String, usize)>) {
        self.conv1.norm_layers(out);
        self.conv2.norm_layers(out);
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(f, x)?;
        let h = f.graph.relu(h);
        let h = self.conv2.forward(f, h)?;
        let s = f.graph.add(h, x)?;
        Ok(f.graph.relu(s))
    }
}

/// Fully connected layer on `(batch, features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub kernel_role: Role,
}

impl Dense {
    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: format!("{}.w", self.name),
            shape: vec![self.outputs, self.inputs],
            role: self.kernel_role,
            init: Init::He { fan_in: self.inputs },
        });
        out.push(ParamSpec {
            name: format!("{}.b", self.name),
            shape: vec![self.outputs],
            role: Role::Exclusive,
            init: Init::Zeros,
        });
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.bind(&format!("{}.w", self.name))?;
        let b = f.bind(&format!("{}.b", self.name))?;
        f.graph.linear(x, w, Some(b))
    }
}
