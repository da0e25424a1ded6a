//! Checkpoint container: a format-version byte, a JSON model-config header
//! with explicit field names, the parameter tensors as little-endian f64
//! with declared names and shapes, then JSON training provenance.
//!
//! ```text
//! [u8 version=1]
//! [u32le len][header json {"config": {..}}]
//! [u32le n_tensors] then per tensor:
//!     [u16le name_len][name utf-8][u8 ndim][u32le dims..][f64le data..]
//! [u32le len][provenance json]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use hitmat_core::loss::LossVariant;
use hitmat_core::model::{layout, ModelCheckpoint, ModelConfig, Parameters, Phase, Provenance};

pub const FORMAT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct HeaderWire {
    config: ConfigWire,
}

#[derive(Serialize, Deserialize)]
struct ConfigWire {
    vocab_size: usize,
    d_model: usize,
    n_layers: usize,
    n_heads: usize,
    d_ff: usize,
    max_len: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ProvenanceWire {
    phase: String,
    loss_variant: Option<String>,
    beta: Option<f64>,
    lr0: f64,
    total_steps: usize,
    epochs: usize,
    step: usize,
    validation_loss: f64,
}

fn push_block(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

pub fn save_checkpoint(path: &Path, ckpt: &ModelCheckpoint) -> Result<(), CliError> {
    let cfg = &ckpt.config;
    let header = HeaderWire {
        config: ConfigWire {
            vocab_size: cfg.vocab_size,
            d_model: cfg.d_model,
            n_layers: cfg.n_layers,
            n_heads: cfg.n_heads,
            d_ff: cfg.d_ff,
            max_len: cfg.max_len,
            seed: cfg.seed,
        },
    };
    let mut out = Vec::new();
    out.push(FORMAT_VERSION);
    push_block(&mut out, serde_json::to_string(&header).expect("header json").as_bytes());

    let specs = layout(cfg);
    out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
    let data = ckpt.params.data();
    for spec in &specs {
        out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.push(spec.shape.len() as u8);
        for &d in &spec.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &data[spec.offset..spec.offset + spec.len()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    let p = &ckpt.provenance;
    let prov = ProvenanceWire {
        phase: p.phase.to_string(),
        loss_variant: p.loss_variant.map(|v| v.to_string()),
        beta: p.beta,
        lr0: p.lr0,
        total_steps: p.total_steps,
        epochs: p.epochs,
        step: p.step,
        validation_loss: p.validation_loss,
    };
    push_block(&mut out, serde_json::to_string(&prov).expect("provenance json").as_bytes());
    super::write_atomic(path, &out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        if self.at + n > self.bytes.len() {
            return Err(CliError::io(format!("{}: truncated checkpoint", self.path.display())));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CliError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn block(&mut self) -> Result<&'a [u8], CliError> {
        let len = self.u32()? as usize;
        self.take(len)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let mut r = Reader { bytes: &bytes, at: 0, path };
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(CliError::io(format!(
            "{}: unsupported checkpoint format version {version}",
            path.display()
        )));
    }
    let header: HeaderWire = serde_json::from_slice(r.block()?)
        .map_err(|e| CliError::io(format!("{}: bad header: {e}", path.display())))?;
    let c = header.config;
    let cfg = ModelConfig {
        vocab_size: c.vocab_size,
        d_model: c.d_model,
        n_layers: c.n_layers,
        n_heads: c.n_heads,
        d_ff: c.d_ff,
        max_len: c.max_len,
        seed: c.seed,
    };
    cfg.validate()?;

    let specs = layout(&cfg);
    let n_tensors = r.u32()? as usize;
    if n_tensors != specs.len() {
        return Err(CliError::io(format!(
            "{}: expected {} tensors, found {n_tensors}",
            path.display(),
            specs.len()
        )));
    }
    let total: usize = specs.iter().map(|s| s.len()).sum();
    let mut data = vec![0.0f64; total];
    for spec in &specs {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CliError::io(format!("{}: bad tensor name", path.display())))?;
        if name != spec.name {
            return Err(CliError::io(format!(
                "{}: tensor {name:?} where {:?} expected",
                path.display(),
                spec.name
            )));
        }
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        if shape != spec.shape {
            return Err(CliError::io(format!(
                "{}: tensor {name:?} shape {shape:?} does not match config {:?}",
                path.display(),
                spec.shape
            )));
        }
        let raw = r.take(spec.len() * 8)?;
        for (i, chunk) in raw.chunks_exact(8).enumerate() {
            data[spec.offset + i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }

    let prov: ProvenanceWire = serde_json::from_slice(r.block()?)
        .map_err(|e| CliError::io(format!("{}: bad provenance: {e}", path.display())))?;
    let phase = match prov.phase.as_str() {
        "pretrained" => Phase::Pretrained,
        "fine-tuned" => Phase::FineTuned,
        other => {
            return Err(CliError::io(format!("{}: unknown phase {other:?}", path.display())))
        }
    };
    let loss_variant = match prov.loss_variant.as_deref() {
        None => None,
        Some(name) => Some(LossVariant::parse(name).ok_or_else(|| {
            CliError::io(format!("{}: unknown loss variant {name:?}", path.display()))
        })?),
    };
    let params = Parameters::from_flat(&cfg, data)?;
    Ok(ModelCheckpoint {
        config: cfg,
        params,
        provenance: Provenance {
            phase,
            loss_variant,
            beta: prov.beta,
            lr0: prov.lr0,
            total_steps: prov.total_steps,
            epochs: prov.epochs,
            step: prov.step,
            validation_loss: prov.validation_loss,
        },
    })
}
