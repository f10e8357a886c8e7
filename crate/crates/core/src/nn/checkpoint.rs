//! Binary checkpoint format.
//!
//! `"CRCK"`, `u32` version, `u32` tensor count, then per tensor: `u32` name
//! length, UTF-8 name, `u32` rank, `u32` dims, little-endian `f32` data. All
//! integers are little-endian. Optimizer state and scalar metadata ride along
//! as extra tensors under reserved name prefixes. The four optimizer settings
//! are kept exact: each `f64` is stored as its high and low 32 bits.

use std::collections::BTreeMap;
use std::path::Path;

use super::{DenseLayer, ModelParams, ModelShape, OptimizerConfig, RmsProp};
use crate::error::{CorefError, Result};

const MAGIC: &[u8; 4] = b"CRCK";
const VERSION: u32 = 1;
const OPTIMIZER_PREFIX: &str = "__rmsprop__.";
const OPTIMIZER_CONFIG: &str = "__rmsprop__";
const META_PREFIX: &str = "__meta__.";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CorefError::Checkpoint("file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CorefError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CorefError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CorefError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            let raw = r.take(len.checked_mul(4).ok_or_else(|| {
                CorefError::Checkpoint(format!("tensor {name} is too large"))
            })?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(CorefError::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn push_layers(&mut self, prefix: &str, params: &ModelParams) {
        for (name, l) in params.layers() {
            let (r, c) = l.weight.dim();
            self.tensors.push(NamedTensor {
                name: format!("{prefix}{name}.weight"),
                dims: vec![r, c],
                data: l.weight.iter().map(|&v| v as f32).collect(),
            });
            self.tensors.push(NamedTensor {
                name: format!("{prefix}{name}.bias"),
                dims: vec![l.bias.len()],
                data: l.bias.iter().map(|&v| v as f32).collect(),
            });
        }
    }

    fn read_layers(&self, prefix: &str, shape: &ModelShape) -> Result<ModelParams> {
        let mut params = ModelParams::zeros(shape);
        for (name, layer) in params.layers_mut() {
            fill(self, &format!("{prefix}{name}"), layer)?;
        }
        Ok(params)
    }

    fn infer_shape(&self) -> Result<ModelShape> {
        let dims = |name: &str| -> Result<&[usize]> {
            let t = self
                .get(name)
                .ok_or_else(|| CorefError::Checkpoint(format!("missing tensor {name}")))?;
            if t.dims.len() != 2 {
                return Err(CorefError::Checkpoint(format!("{name} is not a matrix")));
            }
            Ok(&t.dims)
        };
        let p0 = dims("pair.0.weight")?;
        let a0 = dims("anaphoricity.0.weight")?;
        let p1 = dims("pair.1.weight")?;
        let p2 = dims("pair.2.weight")?;
        Ok(ModelShape {
            pair_input: p0[1],
            anaphoricity_input: a0[1],
            hidden1: p0[0],
            hidden2: p1[0],
            output: p2[0],
        })
    }
}

fn fill(ck: &Checkpoint, name: &str, layer: &mut DenseLayer) -> Result<()> {
    let (r, c) = layer.weight.dim();
    let w = tensor(ck, &format!("{name}.weight"), &[r, c])?;
    let b = tensor(ck, &format!("{name}.bias"), &[r])?;
    layer
        .weight
        .iter_mut()
        .zip(&w.data)
        .for_each(|(d, &s)| *d = s as f64);
    layer.bias.iter_mut().zip(&b.data).for_each(|(d, &s)| *d = s as f64);
    Ok(())
}

fn tensor<'a>(ck: &'a Checkpoint, name: &str, dims: &[usize]) -> Result<&'a NamedTensor> {
    let t = ck
        .get(name)
        .ok_or_else(|| CorefError::Checkpoint(format!("missing tensor {name}")))?;
    if t.dims != dims {
        return Err(CorefError::Shape {
            tensor: name.to_string(),
            expected: dims.to_vec(),
            found: t.dims.clone(),
        });
    }
    Ok(t)
}

fn split_f64(v: f64) -> [f32; 2] {
    let b = v.to_bits();
    [f32::from_bits((b >> 32) as u32), f32::from_bits(b as u32)]
}

fn join_f64(halves: &[f32]) -> f64 {
    f64::from_bits(((halves[0].to_bits() as u64) << 32) | halves[1].to_bits() as u64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedCheckpoint {
    pub params: ModelParams,
    pub optimizer: Option<RmsProp>,
    pub meta: BTreeMap<String, f64>,
}

impl LoadedCheckpoint {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let shape = ck.infer_shape()?;
        Self::with_shape(ck, &shape)
    }

    /// Reads the checkpoint, requiring every tensor to match `shape`.
    pub fn with_shape(ck: &Checkpoint, shape: &ModelShape) -> Result<Self> {
        let params = ck.read_layers("", shape)?;
        let optimizer = match ck.get(OPTIMIZER_CONFIG) {
            Some(cfg) if cfg.data.len() == 8 => Some(RmsProp {
                config: OptimizerConfig {
                    learning_rate: join_f64(&cfg.data[0..2]),
                    rho: join_f64(&cfg.data[2..4]),
                    epsilon: join_f64(&cfg.data[4..6]),
                    l2: join_f64(&cfg.data[6..8]),
                },
                accumulator: ck.read_layers(OPTIMIZER_PREFIX, shape)?,
            }),
            Some(_) => return Err(CorefError::Checkpoint("malformed optimizer config".into())),
            None => None,
        };
        let meta = ck
            .tensors
            .iter()
            .filter_map(|t| {
                t.name
                    .strip_prefix(META_PREFIX)
                    .and_then(|k| t.data.first().map(|&v| (k.to_string(), v as f64)))
            })
            .collect();
        Ok(LoadedCheckpoint {
            params,
            optimizer,
            meta,
        })
    }
}

pub fn build_checkpoint(
    params: &ModelParams,
    optimizer: Option<&RmsProp>,
    meta: &BTreeMap<String, f64>,
) -> Checkpoint {
    let mut ck = Checkpoint::default();
    ck.push_layers("", params);
    if let Some(opt) = optimizer {
        let c = opt.config;
        ck.tensors.push(NamedTensor {
            name: OPTIMIZER_CONFIG.to_string(),
            dims: vec![4, 2],
            data: [c.learning_rate, c.rho, c.epsilon, c.l2]
                .iter()
                .flat_map(|&v| split_f64(v))
                .collect(),
        });
        ck.push_layers(OPTIMIZER_PREFIX, &opt.accumulator);
    }
    for (k, &v) in meta {
        ck.tensors.push(NamedTensor {
            name: format!("{META_PREFIX}{k}"),
            dims: vec![1],
            data: vec![v as f32],
        });
    }
    ck
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ModelParams,
    optimizer: Option<&RmsProp>,
    meta: &BTreeMap<String, f64>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = build_checkpoint(params, optimizer, meta).to_bytes();
    std::fs::write(path, bytes).map_err(|e| CorefError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CorefError::io(path, e))?;
    LoadedCheckpoint::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)
}
