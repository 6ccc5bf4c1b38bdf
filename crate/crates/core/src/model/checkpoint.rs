//! Binary checkpoint format.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header,
//! then every parameter tensor as little-endian `f64`, followed by the Adam
//! moments when optimizer state is present.

use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::{ClassifierArch, ClassifierParams};
use super::{ArchSpec, DetectorParams, ParamSet};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"KWSDCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// `"detector"` or `"classifier"`.
    pub kind: String,
    pub arch: serde_json::Value,
    pub config_hash: String,
    pub config: String,
    /// Completed epochs.
    pub epoch: usize,
    pub tensor_lens: Vec<usize>,
    /// Adam step count when optimizer moments follow the parameters.
    pub adam_step: Option<u64>,
}

type Tensors = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<Vec<f64>>,
    /// `(m, v)` per tensor.
    pub moments: Option<(Tensors, Tensors)>,
}

fn to_f64<F: Scalar>(t: &[F]) -> Vec<f64> {
    t.iter().map(|v| v.to_f64_lossy()).collect()
}

fn from_f64<F: Scalar>(t: &[f64]) -> Vec<F> {
    t.iter().map(|&v| F::lit(v)).collect()
}

impl Checkpoint {
    pub fn capture<F: Scalar, P: ParamSet<F>>(
        kind: &str,
        arch: serde_json::Value,
        params: &P,
        cfg: &PipelineConfig,
        epoch: usize,
        adam: Option<&Adam<F>>,
    ) -> Self {
        let params: Vec<Vec<f64>> = params.tensors().iter().map(|t| to_f64(t)).collect();
        Self {
            header: CheckpointHeader {
                kind: kind.to_string(),
                arch,
                config_hash: cfg.model_hash(),
                config: cfg.to_config_string(),
                epoch,
                tensor_lens: params.iter().map(Vec::len).collect(),
                adam_step: adam.map(|a| a.step),
            },
            params,
            moments: adam.map(|a| {
                (
                    a.m.iter().map(|t| to_f64(t)).collect(),
                    a.v.iter().map(|t| to_f64(t)).collect(),
                )
            }),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::to_vec(&self.header)?;
        let mut buf = Vec::with_capacity(header.len() + 8 * self.header.tensor_lens.iter().sum::<usize>() + 20);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        let mut push = |ts: &[Vec<f64>]| {
            for t in ts {
                for v in t {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        };
        push(&self.params);
        if let Some((m, v)) = &self.moments {
            push(m);
            push(v);
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
        let mut data = &body[hlen..];
        let total: usize = header.tensor_lens.iter().sum();
        let groups = if header.adam_step.is_some() { 3 } else { 1 };
        if data.len() != groups * total * 8 {
            return Err(bad(&format!(
                "expected {} tensor bytes, found {}",
                groups * total * 8,
                data.len()
            )));
        }
        let mut take = || -> Vec<Vec<f64>> {
            header
                .tensor_lens
                .iter()
                .map(|&n| {
                    let (head, rest) = data.split_at(n * 8);
                    data = rest;
                    head.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect()
                })
                .collect()
        };
        let params = take();
        let moments = header.adam_step.map(|_| {
            let m = take();
            let v = take();
            (m, v)
        });
        if params.iter().flatten().any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        Ok(Self {
            header,
            params,
            moments,
        })
    }

    /// The configuration the model was trained with.
    pub fn config(&self) -> Result<PipelineConfig> {
        PipelineConfig::parse_str(&self.header.config)
    }

    /// Errors unless `cfg` agrees with the checkpoint on every
    /// model-relevant key.
    pub fn check_config(&self, cfg: &PipelineConfig) -> Result<()> {
        if cfg.model_hash() != self.header.config_hash {
            return Err(Error::Checkpoint(
                "configuration does not match the one the checkpoint was trained with".into(),
            ));
        }
        Ok(())
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.header.kind
            )));
        }
        Ok(())
    }

    pub fn restore<F: Scalar, P: ParamSet<F>>(&self, params: &mut P) -> Result<()> {
        let mut dst = params.tensors_mut();
        if dst.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.params.len(),
                dst.len()
            )));
        }
        for (k, (d, s)) in dst.iter_mut().zip(&self.params).enumerate() {
            if d.len() != s.len() {
                return Err(Error::Checkpoint(format!("tensor {k} length mismatch")));
            }
            d.iter_mut().zip(s).for_each(|(a, &b)| *a = F::lit(b));
        }
        Ok(())
    }

    /// Optimizer state for resuming training, if saved.
    pub fn adam<F: Scalar>(&self, lr: f64) -> Option<Adam<F>> {
        let (m, v) = self.moments.as_ref()?;
        Some(Adam {
            lr: F::lit(lr),
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            eps: F::lit(1e-8),
            step: self.header.adam_step?,
            m: m.iter().map(|t| from_f64(t)).collect(),
            v: v.iter().map(|t| from_f64(t)).collect(),
        })
    }

    pub fn detector<F: Scalar>(&self) -> Result<DetectorParams<F>> {
        self.expect_kind("detector")?;
        let arch: ArchSpec = serde_json::from_value(self.header.arch.clone())
            .map_err(|e| Error::Checkpoint(format!("architecture: {e}")))?;
        let mut p = DetectorParams::init(&arch, 1.0, 0)?;
        self.restore(&mut p)?;
        Ok(p)
    }

    pub fn classifier<F: Scalar>(&self) -> Result<ClassifierParams<F>> {
        self.expect_kind("classifier")?;
        let arch: ClassifierArch = serde_json::from_value(self.header.arch.clone())
            .map_err(|e| Error::Checkpoint(format!("architecture: {e}")))?;
        let mut p = ClassifierParams::init(&arch, 0)?;
        self.restore(&mut p)?;
        Ok(p)
    }
}

pub fn save_detector<F: Scalar>(
    path: impl AsRef<Path>,
    params: &DetectorParams<F>,
    cfg: &PipelineConfig,
    epoch: usize,
    adam: Option<&Adam<F>>,
) -> Result<()> {
    let arch = serde_json::to_value(&params.arch)?;
    Checkpoint::capture("detector", arch, params, cfg, epoch, adam).write(path)
}

pub fn save_classifier<F: Scalar>(
    path: impl AsRef<Path>,
    params: &ClassifierParams<F>,
    cfg: &PipelineConfig,
    epoch: usize,
    adam: Option<&Adam<F>>,
) -> Result<()> {
    let arch = serde_json::to_value(&params.arch)?;
    Checkpoint::capture("classifier", arch, params, cfg, epoch, adam).write(path)
}
