//! Checkpoint format: a little-endian binary weights file plus a JSON
//! sidecar (`<path>.json`) describing the scenario and training settings.
//!
//! The binary header pins everything a loader must agree on: magic, format
//! version, system, age-input flag, gate order, layer sizes, and the init
//! seed. Weights round-trip bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{input_dim, LaaModel, LaaParams, TrainConfig, HIDDEN};
use crate::nn::{FcParams, LstmParams, Mat, GATE_ORDER};
use crate::sim::{AgeMode, ScenarioConfig, SystemKind};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LAAW0001";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub crate_version: String,
}

impl CheckpointMeta {
    pub fn new(scenario: ScenarioConfig, train: TrainConfig) -> Self {
        CheckpointMeta {
            scenario,
            train,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64_slice(w: &mut impl Write, s: &[f64]) -> Result<()> {
    write_u64(w, s.len() as u64)?;
    for v in s {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64_slice(r: &mut impl Read, expect_len: usize, what: &str) -> Result<Vec<f64>> {
    let len = read_u64(r)? as usize;
    if len != expect_len {
        return Err(bad(format!("{what}: stored length {len}, expected {expect_len}")));
    }
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn save_checkpoint(model: &LaaModel, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    if meta.scenario.system != model.system {
        return Err(bad("metadata system does not match the model"));
    }
    if (meta.scenario.age != AgeMode::None) != model.with_ages {
        return Err(bad("metadata age mode does not match the model's input layout"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, FORMAT_VERSION)?;
    w.write_all(&[
        match model.system {
            SystemKind::Linear => 0u8,
            SystemKind::Cartpole => 1u8,
        },
        model.with_ages as u8,
        GATE_ORDER.len() as u8,
    ])?;
    w.write_all(GATE_ORDER.as_bytes())?;
    write_u32(&mut w, model.params.n_x() as u32)?;
    write_u32(&mut w, HIDDEN as u32)?;
    write_u32(&mut w, model.params.n_o() as u32)?;
    write_u64(&mut w, model.init_seed)?;
    let tensors = model.params.tensors();
    write_u32(&mut w, tensors.len() as u32)?;
    for t in tensors {
        write_f64_slice(&mut w, t)?;
    }
    write_f64_slice(&mut w, &model.scaling)?;
    w.flush()?;

    let mut j = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(&mut j, meta)
        .map_err(|e| bad(format!("sidecar serialization: {e}")))?;
    j.write_all(b"\n")?;
    j.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(LaaModel, CheckpointMeta)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a weights file (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("format version {version}, this build reads {FORMAT_VERSION}")));
    }
    let mut hdr = [0u8; 3];
    r.read_exact(&mut hdr)?;
    let system = match hdr[0] {
        0 => SystemKind::Linear,
        1 => SystemKind::Cartpole,
        other => return Err(bad(format!("unknown system tag {other}"))),
    };
    let with_ages = match hdr[1] {
        0 => false,
        1 => true,
        other => return Err(bad(format!("bad age flag {other}"))),
    };
    let mut gate = vec![0u8; hdr[2] as usize];
    r.read_exact(&mut gate)?;
    if gate != GATE_ORDER.as_bytes() {
        return Err(bad(format!(
            "gate order {:?} differs from this build's {GATE_ORDER:?}",
            String::from_utf8_lossy(&gate)
        )));
    }
    let n_x = read_u32(&mut r)? as usize;
    let n_h = read_u32(&mut r)? as usize;
    let n_o = read_u32(&mut r)? as usize;
    if n_x != input_dim(system, with_ages) || n_h != HIDDEN || n_o != system.est_dim() {
        return Err(bad(format!(
            "layer sizes ({n_x},{n_h},{n_o}) do not fit {} with_ages={with_ages}",
            system.name()
        )));
    }
    let init_seed = read_u64(&mut r)?;
    let n_tensors = read_u32(&mut r)? as usize;
    if n_tensors != 8 {
        return Err(bad(format!("expected 8 tensors, found {n_tensors}")));
    }
    let w_ih = read_f64_slice(&mut r, 4 * n_h * n_x, "lstm input weights")?;
    let w_hh = read_f64_slice(&mut r, 4 * n_h * n_h, "lstm recurrent weights")?;
    let b_ih = read_f64_slice(&mut r, 4 * n_h, "lstm input bias")?;
    let b_hh = read_f64_slice(&mut r, 4 * n_h, "lstm recurrent bias")?;
    let fc1_w = read_f64_slice(&mut r, n_h * n_h, "hidden layer weights")?;
    let fc1_b = read_f64_slice(&mut r, n_h, "hidden layer bias")?;
    let fc2_w = read_f64_slice(&mut r, n_o * n_h, "head weights")?;
    let fc2_b = read_f64_slice(&mut r, n_o, "head bias")?;
    let scaling = read_f64_slice(&mut r, n_x, "input scaling")?;
    if scaling.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(bad("input scaling entries must be positive and finite"));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad("trailing bytes after weights"));
    }

    let params = LaaParams {
        lstm: LstmParams {
            n_x,
            n_h,
            w_ih: Mat { rows: 4 * n_h, cols: n_x, data: w_ih },
            w_hh: Mat { rows: 4 * n_h, cols: n_h, data: w_hh },
            b_ih,
            b_hh,
        },
        fc1: FcParams { w: Mat { rows: n_h, cols: n_h, data: fc1_w }, b: fc1_b },
        fc2: FcParams { w: Mat { rows: n_o, cols: n_h, data: fc2_w }, b: fc2_b },
    };
    let model = LaaModel::from_parts(params, scaling, system, with_ages, init_seed);

    let sidecar = sidecar_path(path);
    let meta: CheckpointMeta = serde_json::from_reader(BufReader::new(
        File::open(&sidecar).map_err(|e| bad(format!("sidecar {}: {e}", sidecar.display())))?,
    ))
    .map_err(|e| bad(format!("sidecar parse: {e}")))?;
    if meta.scenario.system != system {
        return Err(bad("sidecar system disagrees with the weights header"));
    }
    if (meta.scenario.age != AgeMode::None) != with_ages {
        return Err(bad("sidecar age mode disagrees with the weights header"));
    }
    Ok((model, meta))
}
