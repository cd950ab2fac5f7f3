//! Model checkpoints: a text manifest (config, seed, tensor shapes) followed
//! by one 32-bit little-endian payload, same single-file scheme as the grid
//! formats. Bytes are a pure function of the parameters.

use std::path::Path;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::geogrid::io::{decode_payload, parse_kv, parse_num, push_kv, split_file};
use crate::neural::params::{EncoderConfig, ModelParams};

const MAGIC: &str = "lews model-checkpoint v1";

/// Serialize to the single-file checkpoint format.
pub fn checkpoint_bytes(params: &ModelParams<f32>) -> Vec<u8> {
    let cfg = &params.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    push_kv(&mut out, "seed", &params.seed.to_string());
    for (key, value) in config_fields(cfg) {
        push_kv(&mut out, key, &value.to_string());
    }
    for (name, tensor) in params.entries() {
        let shape: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        push_kv(&mut out, "tensor", &format!("{name} {}", shape.join("x")));
    }
    out.extend_from_slice(b"---\n");
    for (_, tensor) in params.entries() {
        for &v in tensor.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(params))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(&display, e))?;
    let (manifest, payload) = split_file(&bytes, &display)?;

    let mut lines = manifest.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != MAGIC {
        return Err(Error::format(&display, format!("bad magic line {magic:?}")));
    }
    let kv = parse_kv(lines, &display)?;
    let seed: u64 = parse_num(&kv, "seed", &display)?;
    let cfg = EncoderConfig {
        terrain_in: parse_num(&kv, "terrain_in", &display)?,
        terrain_hidden: parse_num(&kv, "terrain_hidden", &display)?,
        terrain_out: parse_num(&kv, "terrain_out", &display)?,
        rain_hidden: parse_num(&kv, "rain_hidden", &display)?,
        rain_out: parse_num(&kv, "rain_out", &display)?,
        token_dim: parse_num(&kv, "token_dim", &display)?,
        heads: parse_num(&kv, "heads", &display)?,
        ff_width: parse_num(&kv, "ff_width", &display)?,
        layers: parse_num(&kv, "layers", &display)?,
        seq_len: parse_num(&kv, "seq_len", &display)?,
        head_hidden: parse_num(&kv, "head_hidden", &display)?,
    };

    let mut tensors: Vec<(String, Vec<usize>)> = Vec::new();
    for (k, v) in kv.iter().filter(|(k, _)| k == "tensor") {
        debug_assert_eq!(k, "tensor");
        let (name, dims) = v
            .split_once(' ')
            .ok_or_else(|| Error::format(&display, format!("bad tensor line {v:?}")))?;
        let shape = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::format(&display, format!("bad tensor shape {dims:?}")))?;
        tensors.push((name.to_string(), shape));
    }

    let total: usize = tensors.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let words = decode_payload(payload, total, &display)?;
    let mut offset = 0;
    let mut entries = std::collections::BTreeMap::new();
    for (name, shape) in tensors {
        let len: usize = shape.iter().product();
        let arr = ArrayD::from_shape_vec(shape, words[offset..offset + len].to_vec())
            .map_err(|_| Error::format(&display, format!("tensor {name} shape mismatch")))?;
        entries.insert(name, arr);
        offset += len;
    }
    ModelParams::from_entries(&cfg, seed, entries)
}

fn config_fields(cfg: &EncoderConfig) -> [(&'static str, usize); 11] {
    [
        ("terrain_in", cfg.terrain_in),
        ("terrain_hidden", cfg.terrain_hidden),
        ("terrain_out", cfg.terrain_out),
        ("rain_hidden", cfg.rain_hidden),
        ("rain_out", cfg.rain_out),
        ("token_dim", cfg.token_dim),
        ("heads", cfg.heads),
        ("ff_width", cfg.ff_width),
        ("layers", cfg.layers),
        ("seq_len", cfg.seq_len),
        ("head_hidden", cfg.head_hidden),
    ]
}
