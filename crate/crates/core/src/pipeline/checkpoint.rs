//! Checkpoints: a text manifest plus one little-endian f32 blob.
//!
//! ```text
//! ORTHOCT-CHECKPOINT 1
//! blob stage1.ckpt.bin
//! meta epoch 4
//! tensor coarse.head.kernel f32le 0 32 1 8 1 1 1
//! ```
//!
//! Each `tensor` line gives the name, dtype, byte offset, byte length and
//! shape. Meta values run to the end of their line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::fileio::{f32_from_le, f32_le_bytes, read, write_atomic};
use crate::networks::NetworkParams;
use crate::{Error, Result};

use super::optim::OptimizerState;

const MAGIC: &str = "ORTHOCT-CHECKPOINT 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

/// Path of the blob that accompanies `manifest`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut name = manifest.file_name().unwrap_or_default().to_os_string();
    name.push(".bin");
    manifest.with_file_name(name)
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_owned(), value.to_string());
    }

    pub fn set_json<V: Serialize>(&mut self, key: &str, value: &V) -> Result<()> {
        let s = serde_json::to_string(value)
            .map_err(|e| Error::Config(format!("serializing {key}: {e}")))?;
        self.set_meta(key, s);
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::ParamMismatch(format!("checkpoint lacks meta `{key}`")))
    }

    pub fn meta_parsed<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::ParamMismatch(format!("bad checkpoint meta {key} = {raw:?}")))
    }

    pub fn json<V: DeserializeOwned>(&self, key: &str) -> Result<V> {
        serde_json::from_str(self.meta(key)?)
            .map_err(|e| Error::Config(format!("checkpoint meta `{key}`: {e}")))
    }

    /// Stores every tensor of `params` under `prefix.`.
    pub fn put_params(&mut self, prefix: &str, params: &NetworkParams<f32>) {
        for (k, t) in params.iter() {
            self.tensors.insert(format!("{prefix}.{k}"), t.clone());
        }
    }

    /// Collects the tensors under `prefix.` and checks them against the
    /// layout of `template`.
    pub fn take_params(
        &self,
        prefix: &str,
        template: &NetworkParams<f32>,
    ) -> Result<NetworkParams<f32>> {
        let lead = format!("{prefix}.");
        let mut out = NetworkParams::new();
        for (k, t) in self.tensors.range(lead.clone()..) {
            let Some(rest) = k.strip_prefix(&lead) else {
                break;
            };
            out.insert(rest, t.clone())?;
        }
        template
            .check_same_layout(&out)
            .map_err(|e| Error::ParamMismatch(format!("checkpoint group `{prefix}`: {e}")))?;
        Ok(out)
    }

    pub fn put_optimizer(&mut self, prefix: &str, state: &OptimizerState<f32>) {
        self.put_params(&format!("{prefix}.m"), &state.first);
        self.put_params(&format!("{prefix}.v"), &state.second);
        self.set_meta(&format!("{prefix}.step"), state.step);
    }

    pub fn take_optimizer(
        &self,
        prefix: &str,
        template: &NetworkParams<f32>,
    ) -> Result<OptimizerState<f32>> {
        Ok(OptimizerState {
            first: self.take_params(&format!("{prefix}.m"), template)?,
            second: self.take_params(&format!("{prefix}.v"), template)?,
            step: self.meta_parsed(&format!("{prefix}.step"))?,
        })
    }

    /// Writes the blob, then the manifest, each atomically.
    pub fn save(&self, manifest: &Path) -> Result<()> {
        let blob = blob_path(manifest);
        let blob_name = blob
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("bad checkpoint path {}", manifest.display())))?;
        let mut text = format!("{MAGIC}\nblob {blob_name}\n");
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::Config(format!(
                    "meta `{k}` cannot be stored on one line"
                )));
            }
            text.push_str(&format!("meta {k} {v}\n"));
        }
        let mut bytes = Vec::new();
        for (k, t) in &self.tensors {
            if k.contains(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "tensor name {k:?} contains whitespace"
                )));
            }
            let shape: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
            text.push_str(&format!(
                "tensor {k} f32le {} {} {}\n",
                bytes.len(),
                t.len() * 4,
                shape.join(" ")
            ));
            bytes.extend(f32_le_bytes(t.data().iter().copied()));
        }
        write_atomic(&blob, &bytes)?;
        write_atomic(manifest, text.as_bytes())
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let raw = read(manifest)?;
        let text = std::str::from_utf8(&raw).map_err(|_| Error::Header {
            path: manifest.to_path_buf(),
            reason: "manifest is not UTF-8".into(),
        })?;
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::BadMagic {
                path: manifest.to_path_buf(),
                expected: MAGIC,
            });
        }
        let bad = |reason: String| Error::Header {
            path: manifest.to_path_buf(),
            reason,
        };
        let mut ckpt = Checkpoint::new();
        let mut blob_name = None;
        let mut entries = Vec::new();
        for line in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "blob" => blob_name = Some(rest.to_owned()),
                "meta" => {
                    let (k, v) = rest
                        .split_once(' ')
                        .ok_or_else(|| bad(format!("meta line without value: {line:?}")))?;
                    ckpt.meta.insert(k.to_owned(), v.to_owned());
                }
                "tensor" => {
                    let f: Vec<&str> = rest.split_whitespace().collect();
                    if f.len() < 5 || f[1] != "f32le" {
                        return Err(bad(format!("bad tensor line {line:?}")));
                    }
                    let num = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|_| bad(format!("bad number {s:?} in {line:?}")))
                    };
                    let offset = num(f[2])?;
                    let nbytes = num(f[3])?;
                    let shape = f[4..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
                    entries.push((f[0].to_owned(), offset, nbytes, shape));
                }
                "" => {}
                other => return Err(bad(format!("unknown manifest key {other:?}"))),
            }
        }
        let blob_name = blob_name.ok_or_else(|| bad("missing `blob` line".into()))?;
        let blob_file = manifest.with_file_name(blob_name);
        let blob = read(&blob_file)?;
        let expected: usize = entries.iter().map(|e| e.2).sum();
        if blob.len() != expected {
            return Err(Error::ByteCountMismatch {
                path: blob_file,
                expected: expected / 4,
                found: blob.len() / 4,
            });
        }
        for (name, offset, nbytes, shape) in entries {
            let n: usize = shape.iter().product();
            if nbytes != n * 4 || offset + nbytes > blob.len() {
                return Err(bad(format!(
                    "tensor {name}: {nbytes} bytes at {offset} does not fit shape {shape:?}"
                )));
            }
            let t = Tensor::new(shape, f32_from_le(&blob[offset..offset + nbytes]))?;
            ckpt.tensors.insert(name, t);
        }
        Ok(ckpt)
    }
}
