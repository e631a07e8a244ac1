//! Segmentation and classification heads on top of the encoder branches.

use crate::autograd::Var;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::nn::{ConvUnit, Dense, Forward};
use crate::params::{Family, ParamSpec, Role};
use crate::tensor::Real;

pub const SE_REDUCTION: usize = 4;
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Squeeze-and-excitation: GAP → fc(÷r) → ReLU → fc(×r) → sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct SeModule {
    pub reduce: Dense,
    pub expand: Dense,
}

impl SeModule {
    pub fn new(name: &str, channels: usize, role: Role) -> Self {
        let hidden = channels.div_ceil(SE_REDUCTION);
        SeModule {
            reduce: Dense {
                name: format!("{name}.fc1"),
                inputs: channels,
                outputs: hidden,
                kernel_role: role,
            },
            expand: Dense {
                name: format!("{name}.fc2"),
                inputs: hidden,
                outputs: channels,
                kernel_role: role,
            },
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.reduce.specs(out);
        self.expand.specs(out);
    }

    /// Channel weights `(B, C)` in `(0, 1)`.
    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, z: Var) -> Result<Var> {
        let pooled = f.graph.global_avg_pool(z)?;
        let h = self.reduce.forward(f, pooled)?;
        let h = f.graph.relu(h);
        let h = self.expand.forward(f, h)?;
        Ok(f.graph.sigmoid(h))
    }
}

fn check_branches<T: Real>(f: &Forward<'_, T>, branches: &[Var], cfg: &EncoderConfig) -> Result<usize> {
    if branches.len() != 4 {
        return Err(Error::shape(format!("decoder needs 4 branches, got {}", branches.len())));
    }
    let (_, c0, l0) = f.graph.value(branches[0]).dims3()?;
    let mut len = l0;
    for (r, &b) in branches.iter().enumerate() {
        let (_, c, l) = f.graph.value(b).dims3()?;
        if c != cfg.branch_channels(r) || l != len {
            return Err(Error::shape(format!(
                "branch {r} is {c}×{l}, expected {}×{len}",
                cfg.branch_channels(r)
            )));
        }
        len = len.div_ceil(2);
    }
    debug_assert_eq!(c0, cfg.base_channels);
    Ok(l0)
}

/// Interpolate low resolutions up, concatenate, SE re-weight, per-position
/// linear map to one logit, sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct SegDecoder {
    pub config: EncoderConfig,
    pub se: SeModule,
    pub project: ConvUnit,
}

impl SegDecoder {
    pub fn new(config: EncoderConfig) -> Self {
        let role = Role::Shared(Family::Seg);
        let fused = 15 * config.base_channels;
        SegDecoder {
            config,
            se: SeModule::new("seg.se", fused, role),
            project: ConvUnit::pointwise("seg.proj".into(), fused, 1, false, role),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        self.se.specs(&mut out);
        self.project.specs(&mut out);
        out
    }

    /// `(B, 1, ceil(L/4))` probabilities.
    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, branches: &[Var]) -> Result<Var> {
        let l0 = check_branches(f, branches, &self.config)?;
        let mut parts = vec![branches[0]];
        for &b in &branches[1..] {
            parts.push(f.graph.interpolate(b, l0)?);
        }
        let z = f.graph.concat_channels(&parts)?;
        let w = self.se.forward(f, z)?;
        let zhat = f.graph.scale_channels(z, w)?;
        let pooled = f.graph.adaptive_avg_pool(zhat, l0)?;
        let logits = self.project.forward(f, pooled)?;
        Ok(f.graph.sigmoid(logits))
    }
}

/// Progressive strided fusion toward the lowest resolution, GAP, linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsDecoder {
    pub config: EncoderConfig,
    pub fuse: Vec<ConvUnit>,
}

impl ClsDecoder {
    pub fn new(config: EncoderConfig) -> Self {
        let role = Role::Shared(Family::Cls);
        let fuse = (0..3)
            .map(|i| {
                ConvUnit::k3(
                    format!("cls.sconv{i}"),
                    config.branch_channels(i),
                    config.branch_channels(i + 1),
                    2,
                    role,
                )
            })
            .collect();
        ClsDecoder { config, fuse }
    }

    pub fn head(&self, classes: usize) -> Dense {
        Dense {
            name: "cls.head".into(),
            inputs: self.config.branch_channels(3),
            outputs: classes,
            kernel_role: Role::Exclusive,
        }
    }

    pub fn specs(&self, classes: usize) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        for u in &self.fuse {
            u.specs(&mut out);
        }
        self.head(classes).specs(&mut out);
        out
    }

    pub fn norm_layers(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for u in &self.fuse {
            u.norm_layers(&mut out);
        }
        out
    }

    /// `(B, classes)` probabilities.
    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, branches: &[Var], classes: usize) -> Result<Var> {
        check_branches(f, branches, &self.config)?;
        let mut acc = branches[0];
        for (i, sconv) in self.fuse.iter().enumerate() {
            let down = sconv.forward(f, acc)?;
            acc = f.graph.add(down, branches[i + 1])?;
        }
        let pooled = f.graph.global_avg_pool(acc)?;
        let logits = self.head(classes).forward(f, pooled)?;
        Ok(f.graph.sigmoid(logits))
    }
}
