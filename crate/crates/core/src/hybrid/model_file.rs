//! Model files: magic `FLDMODEL`, format version, the config as key/value
//! strings, then named tensors (rank, dims, values), then a CRC-32.

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{LoadError, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::{Model, ModelConfig, ModelParams};

const MAGIC: &[u8; 8] = b"FLDMODEL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

fn named_tensors(p: &ModelParams) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    if let Some(g) = &p.fastgrnn {
        out.push(("fastgrnn.w".into(), g.w.clone()));
        out.push(("fastgrnn.u".into(), g.u.clone()));
        out.push(("fastgrnn.b_z".into(), g.b_z.clone()));
        out.push(("fastgrnn.b_h".into(), g.b_h.clone()));
        out.push(("fastgrnn.zeta_raw".into(), Tensor::scalar(g.zeta_raw)));
        out.push(("fastgrnn.nu_raw".into(), Tensor::scalar(g.nu_raw)));
    }
    for (i, b) in p.fcn.iter().enumerate() {
        out.push((format!("fcn.{i}.kernels"), b.kernels.clone()));
        out.push((format!("fcn.{i}.bias"), b.bias.clone()));
        out.push((format!("fcn.{i}.gamma"), b.bn_gamma.clone()));
        out.push((format!("fcn.{i}.beta"), b.bn_beta.clone()));
        out.push((format!("fcn.{i}.running_mean"), b.bn.running_mean.clone()));
        out.push((format!("fcn.{i}.running_var"), b.bn.running_var.clone()));
    }
    out.push(("head.weights".into(), p.head_weights.clone()));
    out.push(("head.bias".into(), p.head_bias.clone()));
    out.push(("scaler.mean".into(), Tensor::vector(p.scaler.mean.clone())));
    out.push(("scaler.std".into(), Tensor::vector(p.scaler.std.clone())));
    out
}

fn slot<'a>(p: &'a mut ModelParams, name: &str) -> Option<&'a mut Tensor> {
    let (branch, rest) = name.split_once('.')?;
    match branch {
        "fastgrnn" => {
            let g = p.fastgrnn.as_mut()?;
            match rest {
                "w" => Some(&mut g.w),
                "u" => Some(&mut g.u),
                "b_z" => Some(&mut g.b_z),
                "b_h" => Some(&mut g.b_h),
                _ => None,
            }
        }
        "fcn" => {
            let (idx, field) = rest.split_once('.')?;
            let b = p.fcn.get_mut(idx.parse::<usize>().ok()?)?;
            match field {
                "kernels" => Some(&mut b.kernels),
                "bias" => Some(&mut b.bias),
                "gamma" => Some(&mut b.bn_gamma),
                "beta" => Some(&mut b.bn_beta),
                "running_mean" => Some(&mut b.bn.running_mean),
                "running_var" => Some(&mut b.bn.running_var),
                _ => None,
            }
        }
        "head" => match rest {
            "weights" => Some(&mut p.head_weights),
            "bias" => Some(&mut p.head_bias),
            _ => None,
        },
        _ => None,
    }
}

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, MODEL_FORMAT_VERSION);
    let pairs = model.config.to_pairs();
    w.u32(pairs.len() as u32);
    for (k, v) in &pairs {
        w.str(k);
        w.str(v);
    }
    let tensors = named_tensors(&model.params);
    w.u32(tensors.len() as u32);
    for (name, t) in &tensors {
        w.str(name);
        w.u32(t.rank() as u32);
        for &d in t.shape() {
            w.u64(d as u64);
        }
        w.f64s(t.data());
    }
    w.finish()
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model, LoadError> {
    let mut r = Reader::open(bytes, MAGIC, "model", MODEL_FORMAT_VERSION)?;
    let mut cfg = ModelConfig::default();
    for _ in 0..r.u32()? {
        let key = r.str()?;
        let value = r.str()?;
        cfg.set(&key, &value)
            .map_err(|e| LoadError::Corrupt(format!("config: {e}")))?;
    }
    cfg.validate()
        .map_err(|e| LoadError::Corrupt(format!("config: {e}")))?;
    let mut params = ModelParams::init(&cfg, &mut RngState::new(0))
        .map_err(|e| LoadError::Corrupt(e.to_string()))?;
    let expected: Vec<(String, Tensor)> = named_tensors(&params);
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(LoadError::Corrupt(format!(
            "expected {} tensors, found {count}",
            expected.len()
        )));
    }
    for (want_name, want) in &expected {
        let name = r.str()?;
        if &name != want_name {
            return Err(LoadError::Corrupt(format!(
                "expected tensor `{want_name}`, found `{name}`"
            )));
        }
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(LoadError::Corrupt(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        if shape != want.shape() {
            return Err(LoadError::Shape {
                name,
                expected: want.shape().to_vec(),
                found: shape,
            });
        }
        let data = r.f64s(want.numel())?;
        match name.as_str() {
            "fastgrnn.zeta_raw" => params.fastgrnn.as_mut().unwrap().zeta_raw = data[0],
            "fastgrnn.nu_raw" => params.fastgrnn.as_mut().unwrap().nu_raw = data[0],
            "scaler.mean" => params.scaler.mean = data,
            "scaler.std" => params.scaler.std = data,
            _ => {
                let dst = slot(&mut params, &name)
                    .ok_or_else(|| LoadError::Corrupt(format!("unknown tensor `{name}`")))?;
                dst.data_mut().copy_from_slice(&data);
            }
        }
    }
    r.expect_end()?;
    Ok(Model {
        config: cfg,
        params,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    Ok(model_from_bytes(&bytes)?)
}
