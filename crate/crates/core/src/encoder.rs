//! Four-stage multi-resolution encoder.
//!
//! Stage 1 embeds the input at a quarter of its length and refines it with
//! residual blocks. Each of stages 2–4 adds a half-resolution branch with
//! twice the channels, runs blocks on every branch and then fuses all
//! branches into each other.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{ConvUnit, Forward, ResBlock};
use crate::params::{Family, Init, ParamSpec, Role};
use crate::tensor::Real;

/// Channel count the lead adapter projects every input onto.
pub const STANDARD_LEADS: usize = 12;
pub const STAGES: usize = 4;
pub const MIN_INPUT_LEN: usize = 32;

const SHARED: Role = Role::Shared(Family::Encoder);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub base_channels: usize,
    #[serde(default = "default_blocks")]
    pub blocks_per_stage: usize,
    #[serde(default = "default_leads")]
    pub input_leads: usize,
}

fn default_blocks() -> usize {
    4
}

fn default_leads() -> usize {
    STANDARD_LEADS
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            base_channels: 8,
            blocks_per_stage: 4,
            input_leads: STANDARD_LEADS,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.blocks_per_stage == 0 || self.input_leads == 0 {
            return Err(Error::config(
                "base_channels, blocks_per_stage and input_leads must all be positive",
            ));
        }
        Ok(())
    }

    pub fn branch_channels(&self, r: usize) -> usize {
        self.base_channels << r
    }
}

/// `ceil(n / 2)`, the length produced by every stride-2 operator.
pub fn half(n: usize) -> usize {
    n.div_ceil(2)
}

/// Length of branch `r` for an input of `len` samples.
pub fn branch_len(len: usize, r: usize) -> usize {
    (0..r + 2).fold(len, |l, _| half(l))
}

/// How one input branch reaches one output branch inside a merge.
#[derive(Debug, Clone, PartialEq)]
pub enum ResamplePath {
    Identity,
    /// Chained stride-2 convolutions, ReLU between hops.
    Down(Vec<ConvUnit>),
    /// Transposed-convolution upsampling, then a 1×1 projection.
    Up { upsample: ConvUnit, project: ConvUnit },
}

impl ResamplePath {
    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var, target_len: usize) -> Result<Var> {
        match self {
            ResamplePath::Identity => Ok(x),
            ResamplePath::Down(hops) => {
                let mut h = x;
                for (i, hop) in hops.iter().enumerate() {
                    if i > 0 {
                        h = f.graph.relu(h);
                    }
                    h = hop.forward(f, h)?;
                }
                Ok(h)
            }
            ResamplePath::Up { upsample, project } => {
                let h = upsample.forward(f, x)?;
                let h = project.forward(f, h)?;
                f.graph.fit_length(h, target_len)
            }
        }
    }

    fn units(&self) -> Vec<&ConvUnit> {
        match self {
            ResamplePath::Identity => vec![],
            ResamplePath::Down(h) => h.iter().collect(),
            ResamplePath::Up { upsample, project } => vec![upsample, project],
        }
    }
}

/// Cross-resolution fusion: `out[r] = ReLU(Σ_s path[r][s](in[s]))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchMerge {
    pub paths: Vec<Vec<ResamplePath>>,
}

impl BranchMerge {
    pub fn new(prefix: &str, cfg: &EncoderConfig, branches: usize) -> Self {
        let paths = (0..branches)
            .map(|r| {
                (0..branches)
                    .map(|s| {
                        if s == r {
                            ResamplePath::Identity
                        } else if s < r {
                            ResamplePath::Down(
                                (s..r)
                                    .map(|h| {
                                        ConvUnit::k3(
                                            format!("{prefix}.{s}to{r}.h{}", h - s),
                                            cfg.branch_channels(h),
                                            cfg.branch_channels(h + 1),
                                            2,
                                            SHARED,
                                        )
                                    })
                                    .collect(),
                            )
                        } else {
                            let ch = cfg.branch_channels(r);
                            ResamplePath::Up {
                                upsample: ConvUnit::upsample(
                                    format!("{prefix}.{s}to{r}.up"),
                                    cfg.branch_channels(s),
                                    ch,
                                    1 << (s - r),
                                    SHARED,
                                ),
                                project: ConvUnit::pointwise(
                                    format!("{prefix}.{s}to{r}.proj"),
                                    ch,
                                    ch,
                                    true,
                                    SHARED,
                                ),
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        BranchMerge { paths }
    }

    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, branches: &[Var]) -> Result<Vec<Var>> {
        if branches.len() < 2 || branches.len() != self.paths.len() {
            return Err(Error::Contract(format!(
                "branch merge built for {} branches, got {}",
                self.paths.len(),
                branches.len()
            )));
        }
        let mut out = Vec::with_capacity(branches.len());
        for (r, row) in self.paths.iter().enumerate() {
            let target_len = f.graph.value(branches[r]).dims3()?.2;
            let mut acc: Option<Var> = None;
            for (s, path) in row.iter().enumerate() {
                let contrib = path.forward(f, branches[s], target_len)?;
                acc = Some(match acc {
                    None => contrib,
                    Some(a) => f.graph.add(a, contrib)?,
                });
            }
            let summed = acc.expect("at least two branches");
            out.push(f.graph.relu(summed));
        }
        Ok(out)
    }

    fn units(&self) -> Vec<&ConvUnit> {
        self.paths.iter().flatten().flat_map(ResamplePath::units).collect()
    }
}

/// Adds branch `r+1` from branch `r`: stride-2 conv doubling channels, BN, ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPartition {
    pub conv: ConvUnit,
}

impl BranchPartition {
    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, branches: &mut Vec<Var>) -> Result<()> {
        if branches.len() >= STAGES {
            return Err(Error::Contract(format!(
                "branch partition: already {} branches",
                branches.len()
            )));
        }
        let last = *branches.last().ok_or_else(|| Error::Contract("no branch to partition".into()))?;
        let h = self.conv.forward(f, last)?;
        branches.push(f.graph.relu(h));
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub partition: Option<BranchPartition>,
    /// `blocks[r]` runs on branch `r`.
    pub blocks: Vec<Vec<ResBlock>>,
    pub merge: Option<BranchMerge>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrEncoder {
    pub config: EncoderConfig,
    pub embed: [ConvUnit; 2],
    pub stages: Vec<Stage>,
}

impl MrEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let c = config.base_channels;
        let embed = [
            ConvUnit::k3("enc.embed1".into(), STANDARD_LEADS, c, 2, SHARED),
            ConvUnit::k3("enc.embed2".into(), c, c, 2, SHARED),
        ];
        let stages = (0..STAGES)
            .map(|s| {
                let branches = s + 1;
                let partition = (s > 0).then(|| BranchPartition {
                    conv: ConvUnit::k3(
                        format!("enc.s{}.part", s + 1),
                        config.branch_channels(s - 1),
                        config.branch_channels(s),
                        2,
                        SHARED,
                    ),
                });
                let blocks = (0..branches)
                    .map(|r| {
                        (0..config.blocks_per_stage)
                            .map(|i| {
                                ResBlock::new(
                                    &format!("enc.s{}.r{r}.blk{i}", s + 1),
                                    config.branch_channels(r),
                                    SHARED,
                                )
                            })
                            .collect()
                    })
                    .collect();
                let merge = (s > 0).then(|| BranchMerge::new(&format!("enc.s{}.merge", s + 1), &config, branches));
                Stage {
                    partition,
                    blocks,
                    merge,
                }
            })
            .collect();
        Ok(MrEncoder {
            config,
            embed,
            stages,
        })
    }

    /// Specs of the task-exclusive 1×1 lead adapter for `leads` input leads.
    pub fn adapter_specs(leads: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec {
                name: "enc.adapter.w".into(),
                shape: vec![STANDARD_LEADS, leads, 1],
                role: Role::Exclusive,
                init: Init::He { fan_in: leads },
            },
            ParamSpec {
                name: "enc.adapter.b".into(),
                shape: vec![STANDARD_LEADS],
                role: Role::Exclusive,
                init: Init::Zeros,
            },
        ]
    }

    fn units(&self) -> Vec<&ConvUnit> {
        let mut u: Vec<&ConvUnit> = self.embed.iter().collect();
        for st in &self.stages {
            if let Some(p) = &st.partition {
                u.push(&p.conv);
            }
            for b in st.blocks.iter().flatten() {
                u.push(&b.conv1);
                u.push(&b.conv2);
            }
            if let Some(m) = &st.merge {
                u.extend(m.units());
            }
        }
        u
    }

    /// Every parameter of the encoder for a task with `leads` input leads.
    pub fn specs(&self, leads: usize) -> Vec<ParamSpec> {
        let mut out = Self::adapter_specs(leads);
        for u in self.units() {
            u.specs(&mut out);
        }
        out
    }

    pub fn norm_layers(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for u in self.units() {
            u.norm_layers(&mut out);
        }
        out
    }

    /// Adapter + two stride-2 convolutions: `(B, N, L)` → `(B, C, ceil(L/4))`.
    pub fn embed<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (_, leads, len) = f.graph.value(x).dims3()?;
        if len < MIN_INPUT_LEN {
            return Err(Error::shape(format!(
                "input length {len} below minimum {MIN_INPUT_LEN}"
            )));
        }
        let aw = f.bind("enc.adapter.w")?;
        let adapter_leads = f.graph.value(aw).shape()[1];
        if adapter_leads != leads {
            return Err(Error::config(format!(
                "lead adapter `enc.adapter` expects {adapter_leads} leads, input has {leads}"
            )));
        }
        let ab = f.bind("enc.adapter.b")?;
        let mut h = f.graph.conv1d(x, aw, Some(ab), 1, 0)?;
        for e in &self.embed {
            h = e.forward(f, h)?;
            h = f.graph.relu(h);
        }
        Ok(h)
    }

    /// Full encoder: returns `[z0, z1, z2, z3]`.
    pub fn forward<T: Real>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Vec<Var>> {
        let mut branches = vec![self.embed(f, x)?];
        for st in &self.stages {
            if let Some(p) = &st.partition {
                p.forward(f, &mut branches)?;
            }
            for (r, blocks) in st.blocks.iter().enumerate() {
                for b in blocks {
                    branches[r] = b.forward(f, branches[r])?;
                }
            }
            if let Some(m) = &st.merge {
                branches = m.forward(f, &branches)?;
            }
        }
        Ok(branches)
    }
}
