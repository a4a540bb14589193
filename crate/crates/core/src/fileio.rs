//! Small helpers shared by the on-disk formats.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    let ctx = || format!("writing {}", path.display());
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(ctx(), e))?;
    f.write_all(bytes).map_err(|e| Error::io(ctx(), e))?;
    f.sync_all().map_err(|e| Error::io(ctx(), e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(ctx(), e)
    })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

pub(crate) fn f32_le_bytes(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub(crate) fn f32_from_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Text header of `key value...` lines terminated by a `data` line, followed
/// by a binary payload.
pub(crate) struct Header<'a> {
    pub path: &'a Path,
    pub lines: Vec<(String, Vec<String>)>,
    pub payload: &'a [u8],
}

pub(crate) const DATA_MARKER: &str = "data";

impl<'a> Header<'a> {
    pub fn parse(path: &'a Path, bytes: &'a [u8], magic: &'static str) -> Result<Self> {
        let first = bytes.iter().position(|&b| b == b'\n');
        let magic_ok = first.is_some_and(|i| &bytes[..i] == magic.as_bytes());
        if !magic_ok {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: magic,
            });
        }
        let mut pos = first.unwrap() + 1;
        let mut lines = Vec::new();
        loop {
            let Some(len) = bytes[pos..].iter().position(|&b| b == b'\n') else {
                return Err(Error::TruncatedPayload {
                    path: path.to_path_buf(),
                });
            };
            let line = std::str::from_utf8(&bytes[pos..pos + len]).map_err(|_| Error::Header {
                path: path.to_path_buf(),
                reason: "header is not UTF-8".into(),
            })?;
            pos += len + 1;
            if line == DATA_MARKER {
                break;
            }
            let mut parts = line.split_whitespace().map(str::to_owned);
            let key = parts.next().ok_or_else(|| Error::Header {
                path: path.to_path_buf(),
                reason: "empty header line".into(),
            })?;
            lines.push((key, parts.collect()));
        }
        Ok(Self {
            path,
            lines,
            payload: &bytes[pos..],
        })
    }

    pub fn err(&self, reason: impl Into<String>) -> Error {
        Error::Header {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn values(&self, key: &str) -> Result<&[String]> {
        self.lines
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| self.err(format!("missing `{key}`")))
    }

    pub fn parsed<const N: usize, V: std::str::FromStr>(&self, key: &str) -> Result<[V; N]> {
        let raw = self.values(key)?;
        if raw.len() != N {
            return Err(self.err(format!("`{key}` needs {N} values, found {}", raw.len())));
        }
        let parsed: Vec<V> = raw
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|_| self.err(format!("bad `{key}` value {s:?}")))
            })
            .collect::<Result<_>>()?;
        parsed
            .try_into()
            .map_err(|_| self.err(format!("bad `{key}`")))
    }

    pub fn single(&self, key: &str) -> Result<&str> {
        let [v] = self.values(key)? else {
            return Err(self.err(format!("`{key}` needs one value")));
        };
        Ok(v)
    }

    /// Decodes the payload as `expected` little-endian f32 values.
    pub fn f32_payload(&self, expected: usize) -> Result<Vec<f32>> {
        if self.single("dtype")? != "f32le" {
            return Err(self.err("only dtype f32le is supported"));
        }
        if !self.payload.len().is_multiple_of(4) {
            return Err(Error::TruncatedPayload {
                path: self.path.to_path_buf(),
            });
        }
        let found = self.payload.len() / 4;
        if found != expected {
            return Err(Error::ByteCountMismatch {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(f32_from_le(self.payload))
    }
}
