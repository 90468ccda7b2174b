//! Versioned binary container for trained networks.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "LMMIXCT\0"
//! version  u32
//! hlen     u32      length of the JSON header
//! header   hlen bytes: {"kind", "config", "tensors": [{"name", "shape"}]}
//! data     every tensor in header order, f32 little-endian, row-major
//! ```
//!
//! A sidecar `<file>.manifest` lists one tensor per line as
//! `name<TAB>shape<TAB>sha256-of-its-bytes`, with shape written `AxB`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LMMIXCT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { name, shape, data })
    }

    fn bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|x| x.to_le_bytes()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: serde_json::Value,
    tensors: Vec<TensorHeader>,
}

/// A model file: a kind tag, a JSON configuration and named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

impl Container {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::invalid(format!("container has no tensor `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorHeader {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let hjson = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
        out.extend_from_slice(&hjson);
        for t in &self.tensors {
            out.extend_from_slice(&t.bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Format {
            path: path.display().to_string(),
            message,
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a model container (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported container version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let hend = 16 + hlen;
        if bytes.len() < hend {
            return Err(bad("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[16..hend])
            .map_err(|e| bad(format!("bad header: {e}")))?;
        let mut pos = hend;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for th in header.tensors {
            let n: usize = th.shape.iter().product();
            let end = pos + 4 * n;
            if bytes.len() < end {
                return Err(bad(format!("truncated data for tensor `{}`", th.name)));
            }
            let data = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor {
                name: th.name,
                shape: th.shape,
                data,
            });
            pos = end;
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Container {
            kind: header.kind,
            config: header.config,
            tensors,
        })
    }

    pub fn manifest(&self) -> String {
        let mut s = String::new();
        for t in &self.tensors {
            let digest = Sha256::digest(t.bytes());
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            s.push_str(&format!("{}\t{}\t{}\n", t.name, shape_str(&t.shape), hex));
        }
        s
    }

    /// Writes the container and its manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        let mpath = manifest_path(path);
        std::fs::write(&mpath, self.manifest()).map_err(|e| Error::io(&mpath, e))?;
        Ok(())
    }

    /// Reads a container; when a manifest exists next to it, every checksum
    /// must match.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let c = Self::from_bytes(&bytes, path)?;
        let mpath = manifest_path(path);
        if mpath.exists() {
            let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
            if text != c.manifest() {
                return Err(Error::Format {
                    path: path.display().to_string(),
                    message: "tensor checksums do not match the manifest".into(),
                });
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            kind: "test".into(),
            config: serde_json::json!({"d": 2}),
            tensors: vec![
                Tensor::new("a", vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-30, 7.0]).unwrap(),
                Tensor::new("b", vec![1], vec![f32::MAX]).unwrap(),
            ],
        }
    }

    #[test]
    fn round_trip_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let c = sample();
        c.save(&p).unwrap();
        assert_eq!(Container::load(&p).unwrap(), c);
        let manifest = std::fs::read_to_string(manifest_path(&p)).unwrap();
        assert!(manifest.starts_with("a\t2x3\t"));
        assert_eq!(manifest.lines().count(), 2);
    }

    #[test]
    fn detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        sample().save(&p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(Container::load(&p), Err(Error::Format { .. })));
        bytes[8] = 9;
        assert!(Container::from_bytes(&bytes, &p).is_err());
        assert!(Container::from_bytes(&bytes[..n - 2], &p).is_err());
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new("x", vec![2, 2], vec![0.0; 3]).is_err());
    }
}
