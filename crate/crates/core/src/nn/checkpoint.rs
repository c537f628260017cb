//! `CFNN` model checkpoints.
//!
//! ```text
//! "CFNN" | version u32 | input_len u32 | input_channels u32 | n_layers u32
//! | per layer: kind u8 | activation u8 | a u32 | b u32 | c u32 | rate f64
//! | n_params u64 | params f32[n_params] | meta_len u64 | meta (UTF-8 JSON)
//! ```
//! `(a, b, c)` are `(inputs, outputs, 0)` for dense, `(in, out, kernel)` for
//! conv1d and `(window, 0, 0)` for max-pool.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{Activation, LayerSpec, Shape};
use super::model::SurrogateModel;
use super::train::TrainingSchedule;
use crate::dataset::format::{read_exact, read_f32s, read_u32, read_u64, write_f32s};
use crate::report::ArchitectureName;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CFNN";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to re-derive a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: Option<ArchitectureName>,
    pub schedule: TrainingSchedule,
    pub init_seed: u64,
    pub split_seed: u64,
    pub dataset_config_hash: String,
}

fn encode(spec: &LayerSpec) -> (u8, u8, [u32; 3], f64) {
    let act = |a: Activation| match a {
        Activation::Linear => 0u8,
        Activation::Relu => 1,
    };
    match *spec {
        LayerSpec::Dense { inputs, outputs, activation } => {
            (0, act(activation), [inputs as u32, outputs as u32, 0], 0.0)
        }
        LayerSpec::Conv1d { in_channels, out_channels, kernel, activation } => {
            (1, act(activation), [in_channels as u32, out_channels as u32, kernel as u32], 0.0)
        }
        LayerSpec::Dropout { rate } => (2, 0, [0; 3], rate),
        LayerSpec::MaxPool1d { window } => (3, 0, [window as u32, 0, 0], 0.0),
        LayerSpec::Flatten => (4, 0, [0; 3], 0.0),
    }
}

fn decode(kind: u8, act: u8, d: [u32; 3], rate: f64) -> Result<LayerSpec> {
    let activation = match act {
        0 => Activation::Linear,
        1 => Activation::Relu,
        other => return Err(Error::Format(format!("unknown activation code {other}"))),
    };
    let [a, b, c] = d.map(|v| v as usize);
    Ok(match kind {
        0 => LayerSpec::Dense { inputs: a, outputs: b, activation },
        1 => LayerSpec::Conv1d { in_channels: a, out_channels: b, kernel: c, activation },
        2 => LayerSpec::Dropout { rate },
        3 => LayerSpec::MaxPool1d { window: a },
        4 => LayerSpec::Flatten,
        other => return Err(Error::Format(format!("unknown layer kind {other}"))),
    })
}

pub fn write_checkpoint(model: &SurrogateModel<f32>, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint_to(model, meta, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_checkpoint_to<W: Write>(model: &SurrogateModel<f32>, meta: &CheckpointMeta, w: &mut W) -> Result<()> {
    let input = model.input_shape();
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(input.len as u32).to_le_bytes())?;
    w.write_all(&(input.channels as u32).to_le_bytes())?;
    w.write_all(&(model.layers().len() as u32).to_le_bytes())?;
    for layer in model.layers() {
        let (kind, act, dims, rate) = encode(&layer.spec);
        w.write_all(&[kind, act])?;
        for d in dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&rate.to_le_bytes())?;
    }
    w.write_all(&(model.param_count() as u64).to_le_bytes())?;
    write_f32s(w, model.params())?;
    let json = serde_json::to_vec(meta)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(SurrogateModel<f32>, CheckpointMeta)> {
    read_checkpoint_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_checkpoint_from<R: Read>(r: &mut R) -> Result<(SurrogateModel<f32>, CheckpointMeta)> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"CFNN\"")));
    }
    let version = read_u32(r, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let input = Shape { len: read_u32(r, "input length")? as usize, channels: read_u32(r, "input channels")? as usize };
    let n_layers = read_u32(r, "layer count")? as usize;
    let mut specs = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let mut head = [0u8; 2];
        read_exact(r, &mut head, "layer table")?;
        let dims = [read_u32(r, "layer table")?, read_u32(r, "layer table")?, read_u32(r, "layer table")?];
        let mut rate = [0u8; 8];
        read_exact(r, &mut rate, "layer table")?;
        specs.push(decode(head[0], head[1], dims, f64::from_le_bytes(rate))?);
    }
    let n_params = read_u64(r, "parameter count")? as usize;
    let params = read_f32s(r, n_params, "parameters")?;
    let len = read_u64(r, "metadata length")? as usize;
    let mut json = vec![0u8; len];
    read_exact(r, &mut json, "metadata")?;
    let meta: CheckpointMeta = serde_json::from_slice(&json)
        .map_err(|e| Error::Format(format!("checkpoint metadata is not valid JSON: {e}")))?;
    let mut model = SurrogateModel::from_parts(input, &specs, params).map_err(|e| Error::Format(e.to_string()))?;
    if let Some(arch) = meta.architecture {
        model = model.with_architecture(arch);
    }
    Ok((model, meta))
}
