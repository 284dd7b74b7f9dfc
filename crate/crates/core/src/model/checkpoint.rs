//! Directory checkpoints: `manifest.txt` plus one little-endian blob.
//!
//! ```text
//! # mvpformer checkpoint v1
//! config n_layers=2
//! ...
//! lora rank=8 alpha=16
//! classifier mode=channel_mean classes=2 channels=4
//! forecaster horizon=96
//! tensor encoder.bias f64 32 0 256
//! ```
//!
//! Tensor lines carry the name, dtype, `x`-joined shape, byte offset and
//! byte length inside `tensors.bin`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ClassifierSpec, LoraConfig, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const HEADER: &str = "# mvpformer checkpoint v1";
pub const MANIFEST: &str = "manifest.txt";
pub const BLOB: &str = "tensors.bin";

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn save_checkpoint(model: &Model, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = format!("{HEADER}\n");
    for (k, v) in model.config().pairs() {
        manifest.push_str(&format!("config {k}={v}\n"));
    }
    if let Some(l) = model.lora() {
        manifest.push_str(&format!("lora rank={} alpha={}\n", l.rank, l.alpha));
    }
    if let Some(c) = model.classifier() {
        manifest.push_str(&format!("classifier mode={} classes={} channels={}\n", c.mode, c.classes, c.channels));
    }
    if let Some(h) = model.forecast_horizon() {
        manifest.push_str(&format!("forecaster horizon={h}\n"));
    }
    let mut blob = Vec::new();
    for (name, t) in model.params() {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        manifest.push_str(&format!("tensor {name} f64 {} {offset} {}\n", shape.join("x"), blob.len() - offset));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    fs::write(dir.join(BLOB), blob)?;
    Ok(())
}

fn fields(rest: &str) -> Result<BTreeMap<&str, &str>> {
    rest.split_whitespace()
        .map(|kv| kv.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {kv:?}"))))
        .collect()
}

fn field<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    map.get(key).ok_or_else(|| bad(format!("missing {key}")))?.parse().map_err(|_| bad(format!("bad value for {key}")))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Model> {
    let dir = dir.as_ref();
    let manifest = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| bad(format!("cannot read {}: {e}", dir.join(MANIFEST).display())))?;
    let blob = fs::read(dir.join(BLOB))?;
    let mut lines = manifest.lines();
    if lines.next() != Some(HEADER) {
        return Err(bad("not a checkpoint manifest"));
    }
    let mut config = ModelConfig::toy();
    let mut lora = None;
    let mut classifier = None;
    let mut horizon = None;
    let mut params = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let at = |msg: String| bad(format!("manifest line {}: {msg}", i + 2));
        let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
        match kind {
            "config" => {
                let (k, v) = rest.split_once('=').ok_or_else(|| at("expected key=value".into()))?;
                if !config.set(k, v)? {
                    return Err(at(format!("unknown config key {k}")));
                }
            }
            "lora" => {
                let f = fields(rest)?;
                lora = Some(LoraConfig { rank: field(&f, "rank")?, alpha: field(&f, "alpha")? });
            }
            "classifier" => {
                let f = fields(rest)?;
                let mode: String = field(&f, "mode")?;
                classifier = Some(ClassifierSpec {
                    mode: mode.parse()?,
                    classes: field(&f, "classes")?,
                    channels: field(&f, "channels")?,
                });
            }
            "forecaster" => horizon = Some(field(&fields(rest)?, "horizon")?),
            "tensor" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let [name, dtype, shape, offset, nbytes] = parts[..] else {
                    return Err(at("expected: name dtype shape offset nbytes".into()));
                };
                if dtype != "f64" {
                    return Err(at(format!("unsupported dtype {dtype}")));
                }
                let shape: Vec<usize> = shape
                    .split('x')
                    .map(|d| d.parse().map_err(|_| at(format!("bad shape {shape}"))))
                    .collect::<Result<_>>()?;
                let offset: usize = offset.parse().map_err(|_| at("bad offset".into()))?;
                let nbytes: usize = nbytes.parse().map_err(|_| at("bad length".into()))?;
                let bytes =
                    blob.get(offset..offset + nbytes).ok_or_else(|| at(format!("{name} lies outside the blob")))?;
                let data: Vec<f64> =
                    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
                let t = Tensor::from_vec(&shape, data).map_err(|e| at(e.to_string()))?;
                params.insert(name.to_string(), t);
            }
            "" => {}
            other => return Err(at(format!("unknown entry {other}"))),
        }
    }
    Model::from_parts(config, params, lora, classifier, horizon)
}
