//! Single-file checkpoint format.
//!
//! Layout: one line of JSON (the header), then raw little-endian row-major
//! tensor data. The header maps each tensor name to its shape, dtype and
//! byte offset into the data section. Round-trips are bit-exact for f64.
//!
//! A checkpoint carries the trainable parameters, the optimizer moments,
//! the step counter, a config echo and the vocabulary, so decoding needs
//! nothing but the checkpoint file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::tensor::Tensor;

const FORMAT_TAG: &str = "mem2mem-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    step: u64,
    config: serde_json::Value,
    vocab: Vec<String>,
    tensors: BTreeMap<String, TensorEntry>,
}

pub struct Checkpoint {
    pub params: BTreeMap<String, Tensor>,
    pub adam: AdamState,
    pub config: serde_json::Value,
    pub vocab: Vec<String>,
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut tensors = BTreeMap::new();
    let mut payload: Vec<u8> = Vec::new();

    let push = |name: String, shape: Vec<usize>, data: &[f64],
                    tensors: &mut BTreeMap<String, TensorEntry>,
                    payload: &mut Vec<u8>| {
        let offset = payload.len() as u64;
        for v in data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        tensors.insert(name, TensorEntry { shape, dtype: "f64".into(), offset });
    };

    for (name, t) in &ckpt.params {
        push(format!("param.{name}"), t.shape().to_vec(), t.data(), &mut tensors, &mut payload);
    }
    for (name, m) in &ckpt.adam.m {
        push(format!("adam.m.{name}"), vec![m.len()], m, &mut tensors, &mut payload);
    }
    for (name, v) in &ckpt.adam.v {
        push(format!("adam.v.{name}"), vec![v.len()], v, &mut tensors, &mut payload);
    }

    let header = Header {
        format: FORMAT_TAG.into(),
        step: ckpt.adam.step,
        config: ckpt.config.clone(),
        vocab: ckpt.vocab.clone(),
        tensors,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(Error::Checkpoint("missing header terminator".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.format != FORMAT_TAG {
        return Err(Error::Checkpoint(format!("unknown format `{}`", header.format)));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;

    let read_tensor = |entry: &TensorEntry| -> Result<Vec<f64>> {
        let numel: usize = entry.shape.iter().product();
        let width = match entry.dtype.as_str() {
            "f64" => 8,
            "f32" => 4,
            other => return Err(Error::Checkpoint(format!("unknown dtype `{other}`"))),
        };
        let start = entry.offset as usize;
        let end = start + numel * width;
        if end > payload.len() {
            return Err(Error::Checkpoint("truncated data section".into()));
        }
        let bytes = &payload[start..end];
        let mut out = Vec::with_capacity(numel);
        for chunk in bytes.chunks_exact(width) {
            out.push(if width == 8 {
                f64::from_le_bytes(chunk.try_into().unwrap())
            } else {
                f32::from_le_bytes(chunk.try_into().unwrap()) as f64
            });
        }
        Ok(out)
    };

    let mut params = BTreeMap::new();
    let mut adam = AdamState { step: header.step, ..AdamState::default() };
    for (name, entry) in &header.tensors {
        let data = read_tensor(entry)?;
        if let Some(p) = name.strip_prefix("param.") {
            params.insert(p.to_string(), Tensor::new(entry.shape.clone(), data)?);
        } else if let Some(p) = name.strip_prefix("adam.m.") {
            adam.m.insert(p.to_string(), data);
        } else if let Some(p) = name.strip_prefix("adam.v.") {
            adam.v.insert(p.to_string(), data);
        } else {
            return Err(Error::Checkpoint(format!("unknown tensor section `{name}`")));
        }
    }
    Ok(Checkpoint { params, adam, config: header.config, vocab: header.vocab })
}
