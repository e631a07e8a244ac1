//! Single-file model persistence.
//!
//! Layout:
//!
//! ```text
//! ECGCL-CHECKPOINT\n
//! <header byte length, decimal>\n
//! <header: compact JSON>
//! <body: raw arrays at the offsets listed in the header>
//! ```
//!
//! Body arrays are little-endian `f32` values, `u8` owner ids, or bit masks
//! packed LSB-first. Loading a saved model restores every value bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::NormStats;
use crate::cl::{ClModel, OwnershipMap, PickConfig, PickMask, Regime, SparsitySchedule, Stage, TaskRecord};
use crate::data::Preprocess;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::network::TaskShape;
use crate::params::{ParamStore, Parameter};
use crate::tensor::Tensor;

pub const MAGIC: &str = "ECGCL-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    F32,
    U8,
    Bits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub kind: ArrayKind,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub id: u8,
    pub name: String,
    pub shape: TaskShape,
    pub classes: Vec<u32>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub encoder: EncoderConfig,
    pub regime: Regime,
    pub seed: u64,
    pub pick: PickConfig,
    pub schedule: Option<SparsitySchedule>,
    pub preprocess: Preprocess,
    pub tasks: Vec<TaskEntry>,
    pub arrays: Vec<ArrayEntry>,
}

/// A model plus the settings needed to reuse it on new data.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ClModel,
    pub schedule: Option<SparsitySchedule>,
    pub preprocess: Preprocess,
}

#[derive(Default)]
struct Body {
    bytes: Vec<u8>,
    arrays: Vec<ArrayEntry>,
}

impl Body {
    fn push(&mut self, name: String, kind: ArrayKind, shape: &[usize], data: Vec<u8>) {
        self.arrays.push(ArrayEntry {
            name,
            kind,
            shape: shape.to_vec(),
            offset: self.bytes.len(),
            bytes: data.len(),
        });
        self.bytes.extend(data);
    }

    fn f32s(&mut self, name: String, shape: &[usize], v: &[f32]) {
        let data = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        self.push(name, ArrayKind::F32, shape, data);
    }
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

fn task_prefix(id: u8) -> String {
    format!("task{id}")
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.model;
        if let Some(r) = m.records.iter().find(|r| r.stage != Stage::Complete) {
            return Err(Error::Contract(format!("task {} is not complete", r.id)));
        }
        let mut body = Body::default();
        for (name, p) in m.shared.iter() {
            body.f32s(format!("shared/{name}"), p.values.shape(), p.values.data());
        }
        for (name, o) in m.owners.layers() {
            body.push(format!("owners/{name}"), ArrayKind::U8, &[o.len()], o.clone());
        }
        for r in &m.records {
            let pre = task_prefix(r.id);
            for (name, bits) in r.pick.layers() {
                body.push(format!("{pre}/pick/{name}"), ArrayKind::Bits, &[bits.len()], pack_bits(bits));
            }
            for (name, p) in r.exclusive.iter() {
                body.f32s(format!("{pre}/param/{name}"), p.values.shape(), p.values.data());
            }
            for (layer, s) in &r.stats {
                body.f32s(format!("{pre}/stats/{layer}/mean"), &[s.channels()], &s.mean);
                body.f32s(format!("{pre}/stats/{layer}/var"), &[s.channels()], &s.var);
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            encoder: *m.network.config(),
            regime: m.regime,
            seed: m.seed,
            pick: m.pick.clone(),
            schedule: self.schedule.clone(),
            preprocess: self.preprocess.clone(),
            tasks: m
                .records
                .iter()
                .map(|r| TaskEntry {
                    id: r.id,
                    name: r.name.clone(),
                    shape: r.shape,
                    classes: r.classes.clone(),
                    fingerprint: r.fingerprint.clone(),
                })
                .collect(),
            arrays: body.arrays,
        };
        let json = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = format!("{MAGIC}\n{}\n", json.len()).into_bytes();
        out.extend(json.as_bytes());
        out.extend(body.bytes);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(m.to_string());
        let magic_end = MAGIC.len() + 1;
        if bytes.len() < magic_end || &bytes[..magic_end] != format!("{MAGIC}\n").as_bytes() {
            return Err(fmt("missing checkpoint magic line"));
        }
        let nl = bytes[magic_end..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fmt("missing header length"))?;
        let len: usize = std::str::from_utf8(&bytes[magic_end..magic_end + nl])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fmt("bad header length"))?;
        let hstart = magic_end + nl + 1;
        let body = bytes
            .get(hstart + len..)
            .ok_or_else(|| fmt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[hstart..hstart + len]).map_err(|e| Error::Format(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                header.format_version
            )));
        }
        let mut arrays: BTreeMap<&str, (&ArrayEntry, &[u8])> = BTreeMap::new();
        for a in &header.arrays {
            let data = body
                .get(a.offset..a.offset + a.bytes)
                .ok_or_else(|| Error::Format(format!("array `{}` runs past the end of the file", a.name)))?;
            arrays.insert(a.name.as_str(), (a, data));
        }
        let get = |name: &str, kind: ArrayKind| -> Result<(&ArrayEntry, &[u8])> {
            let (e, d) = arrays
                .get(name)
                .copied()
                .ok_or_else(|| Error::Format(format!("missing array `{name}`")))?;
            if e.kind != kind {
                return Err(Error::Format(format!("array `{name}` has kind {:?}", e.kind)));
            }
            Ok((e, d))
        };
        let f32s = |name: &str| -> Result<Tensor<f32>> {
            let (e, d) = get(name, ArrayKind::F32)?;
            let v = d
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Tensor::from_vec(&e.shape, v).map_err(|_| Error::Format(format!("array `{name}` has the wrong size")))
        };

        let mut model = ClModel::new(header.encoder, header.seed)?
            .with_regime(header.regime)
            .with_pick(header.pick.clone());
        let names: Vec<String> = model.shared.names().cloned().collect();
        let mut shared = ParamStore::new();
        let mut owners = BTreeMap::new();
        for name in names {
            let mut p = Parameter::new(f32s(&format!("shared/{name}"))?);
            p.set_trainable(false);
            shared.insert(&name, p);
            let (_, o) = get(&format!("owners/{name}"), ArrayKind::U8)?;
            owners.insert(name, o.to_vec());
        }
        model.shared = shared;
        model.owners = OwnershipMap::from_layers(owners);
        for t in &header.tasks {
            let pre = task_prefix(t.id);
            let mut pick = BTreeMap::new();
            let mut exclusive = ParamStore::new();
            let mut stats = BTreeMap::new();
            for spec in model.network.exclusive_specs(&t.shape) {
                exclusive.insert(&spec.name, Parameter::new(f32s(&format!("{pre}/param/{}", spec.name))?));
            }
            for (layer, _) in model.network.norm_layers(&t.shape) {
                let mean = f32s(&format!("{pre}/stats/{layer}/mean"))?.into_data();
                let var = f32s(&format!("{pre}/stats/{layer}/var"))?.into_data();
                stats.insert(layer, NormStats { mean, var });
            }
            let prefix = format!("{pre}/pick/");
            for (name, (e, d)) in arrays.range(prefix.as_str()..) {
                let Some(layer) = name.strip_prefix(&prefix) else {
                    break;
                };
                let n: usize = e.shape.iter().product();
                if d.len() != n.div_ceil(8) || e.kind != ArrayKind::Bits {
                    return Err(Error::Format(format!("bad pick mask `{name}`")));
                }
                pick.insert(layer.to_string(), unpack_bits(d, n));
            }
            model.records.push(TaskRecord {
                id: t.id,
                name: t.name.clone(),
                shape: t.shape,
                classes: t.classes.clone(),
                pick: PickMask::from_bits(pick),
                stats,
                exclusive,
                fingerprint: t.fingerprint.clone(),
                stage: Stage::Complete,
            });
        }
        model.owners.check_partition(model.records.len() as u8)?;
        Ok(Checkpoint {
            model,
            schedule: header.schedule,
            preprocess: header.preprocess,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Checkpoint::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
