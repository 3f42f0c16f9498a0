//! Named-tensor weight archive with an embedded architecture manifest.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset   size   field
//! 0        8      magic "AVTSEWTS"
//! 8        4      format version (u32) = 1
//! 12       4      manifest length M (u32)
//! 16       M      manifest, UTF-8 JSON
//! 16+M     4      CRC-32 of the manifest bytes
//! ..       4      tensor count N (u32)
//! ..              N directory entries:
//!                   u16 name length, name bytes (UTF-8),
//!                   u8 dtype (0 = float32), u8 rank, rank x u32 dims,
//!                   u64 payload offset (from payload start), u64 payload bytes,
//!                   u32 CRC-32 of the payload bytes
//! ..              payloads, float32 little-endian, in directory order
//! end-4    4      CRC-32 of every preceding byte
//! ```

mod arch;
mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use arch::{parameter_count, parameter_table, ParamKind, ParamSpec};
pub use manifest::{AudioConfig, Manifest, TseConfig, VvadConfig};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AVTSEWTS";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Architecture manifest plus every named float32 tensor it requires.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    manifest: Manifest,
    entries: BTreeMap<String, Tensor<f32>>,
}

impl WeightSet {
    /// Empty set; fails [`WeightSet::validate`] until populated.
    pub fn new(manifest: Manifest) -> Self {
        WeightSet {
            manifest,
            entries: BTreeMap::new(),
        }
    }

    /// Seeded random weights: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights
    /// and biases, mild perturbations around identity for normalizations.
    pub fn init_random(manifest: Manifest, seed: u64) -> Result<Self> {
        manifest.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ws = WeightSet::new(manifest);
        for p in parameter_table(&ws.manifest) {
            let mut draw = |lo: f32, hi: f32| -> Vec<f32> {
                (0..p.numel()).map(|_| rng.gen_range(lo..hi)).collect()
            };
            let data = match p.kind {
                ParamKind::Weight { fan_in } | ParamKind::Bias { fan_in } => {
                    let b = 1.0 / (fan_in as f32).sqrt();
                    draw(-b, b)
                }
                ParamKind::NormGain => draw(0.9, 1.1),
                ParamKind::NormBias | ParamKind::RunningMean => draw(-0.1, 0.1),
                ParamKind::RunningVar => draw(0.8, 1.2),
                ParamKind::PreluSlope => vec![0.25; p.numel()],
            };
            ws.entries
                .insert(p.name.clone(), Tensor::from_vec(&p.shape, data)?);
        }
        Ok(ws)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.entries.insert(name.into(), t);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<f32>> {
        self.entries.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<f32>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Fetches `name`, checks its shape, and converts to the compute scalar.
    pub fn tensor<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let t = self.get(name)?;
        if t.dims() != shape {
            return Err(Error::TensorShape {
                name: name.into(),
                expected: shape.to_vec(),
                found: t.dims().to_vec(),
            });
        }
        Ok(t.cast())
    }

    /// Checks the tensor set against the architecture the manifest describes.
    pub fn validate(&self) -> Result<()> {
        self.manifest.validate()?;
        let table = parameter_table(&self.manifest);
        for p in &table {
            let t = self.get(&p.name)?;
            if t.dims() != p.shape.as_slice() {
                return Err(Error::TensorShape {
                    name: p.name.clone(),
                    expected: p.shape.clone(),
                    found: t.dims().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(Error::NonFinite("weight tensor"));
            }
        }
        if !self.manifest.allow_extra_tensors && self.entries.len() != table.len() {
            let known: std::collections::HashSet<_> = table.iter().map(|p| p.name.as_str()).collect();
            if let Some(extra) = self.entries.keys().find(|k| !known.contains(k.as_str())) {
                return Err(Error::UnexpectedTensor(extra.clone()));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let manifest = self.manifest.to_json().into_bytes();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&crc32fast::hash(&manifest).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());

        let mut payload = Vec::new();
        for (name, t) in &self.entries {
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(t.dims().len() as u8);
            for &d in t.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&crc32fast::hash(&bytes).to_le_bytes());
            payload.extend_from_slice(&bytes);
        }
        out.extend_from_slice(&payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 + 4 + 4 + 4 + 4 {
            return Err(Error::Format(format!("truncated: {} bytes", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            // Localize the damage; structural parse errors (e.g. truncation) win.
            let parsed = parse(bytes)?;
            if let Some(e) = parsed.first_bad_region(bytes) {
                return Err(e);
            }
            return Err(Error::Checksum {
                region: "header/directory/trailer".into(),
                start: 0,
                end: bytes.len() as u64,
                stored,
                computed,
            });
        }
        let parsed = parse(bytes)?;
        if let Some(e) = parsed.first_bad_region(bytes) {
            return Err(e);
        }
        parsed.into_weight_set(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct DirEntry {
    name: String,
    dims: Vec<usize>,
    offset: u64,
    len: u64,
    crc: u32,
}

struct Parsed {
    version: u32,
    manifest_range: (usize, usize),
    manifest_crc: u32,
    entries: Vec<DirEntry>,
    payload_start: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        // the trailing checksum is never part of the structure
        let limit = self.bytes.len() - 4;
        if self.pos + n > limit {
            return Err(Error::Format(format!(
                "truncated: need {} bytes at offset {}, have {}",
                n,
                self.pos,
                limit.saturating_sub(self.pos)
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
}

fn parse(bytes: &[u8]) -> Result<Parsed> {
    let mut c = Cursor { bytes, pos: 8 };
    let version = c.u32()?;
    let mlen = c.u32()? as usize;
    let mstart = c.pos;
    c.take(mlen)?;
    let manifest_crc = c.u32()?;
    let n = c.u32()? as usize;
    let mut entries = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let nl = c.u16()? as usize;
        let name = String::from_utf8(c.take(nl)?.to_vec())
            .map_err(|_| Error::Format(format!("tensor name at offset {} is not UTF-8", c.pos - nl)))?;
        let dtype = c.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("tensor `{name}`: unknown dtype {dtype}")));
        }
        let rank = c.u8()? as usize;
        let dims = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = c.u64()?;
        let len = c.u64()?;
        let crc = c.u32()?;
        entries.push(DirEntry {
            name,
            dims,
            offset,
            len,
            crc,
        });
    }
    let payload_start = c.pos;
    let payload_len = bytes.len() - 4 - payload_start;
    for e in &entries {
        if e.offset.checked_add(e.len).is_none_or(|end| end > payload_len as u64) {
            return Err(Error::Format(format!(
                "truncated: tensor `{}` payload {}..{} beyond {} payload bytes",
                e.name,
                e.offset,
                e.offset.saturating_add(e.len),
                payload_len
            )));
        }
    }
    Ok(Parsed {
        version,
        manifest_range: (mstart, mstart + mlen),
        manifest_crc,
        entries,
        payload_start,
    })
}

impl Parsed {
    fn first_bad_region(&self, bytes: &[u8]) -> Option<Error> {
        let (a, b) = self.manifest_range;
        let computed = crc32fast::hash(&bytes[a..b]);
        if computed != self.manifest_crc {
            return Some(Error::Checksum {
                region: "manifest".into(),
                start: a as u64,
                end: b as u64,
                stored: self.manifest_crc,
                computed,
            });
        }
        for e in &self.entries {
            let s = self.payload_start + e.offset as usize;
            let t = s + e.len as usize;
            let computed = crc32fast::hash(&bytes[s..t]);
            if computed != e.crc {
                return Some(Error::Checksum {
                    region: format!("tensor `{}`", e.name),
                    start: s as u64,
                    end: t as u64,
                    stored: e.crc,
                    computed,
                });
            }
        }
        None
    }

    fn into_weight_set(self, bytes: &[u8]) -> Result<WeightSet> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "format version {} (this build reads {FORMAT_VERSION})",
                self.version
            )));
        }
        let (a, b) = self.manifest_range;
        let text = std::str::from_utf8(&bytes[a..b])
            .map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
        let manifest = Manifest::from_json(text)?;
        let mut ws = WeightSet::new(manifest);
        for e in self.entries {
            let numel: usize = e.dims.iter().product();
            if numel * 4 != e.len as usize {
                return Err(Error::Format(format!(
                    "tensor `{}`: {} payload bytes for shape {:?}",
                    e.name, e.len, e.dims
                )));
            }
            let s = self.payload_start + e.offset as usize;
            let data: Vec<f32> = bytes[s..s + e.len as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4")))
                .collect();
            let t = Tensor::from_vec(&e.dims, data)
                .map_err(|err| Error::Format(format!("tensor `{}`: {err}", e.name)))?;
            if ws.entries.insert(e.name.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor `{}`", e.name)));
            }
        }
        ws.validate()?;
        Ok(ws)
    }
}
