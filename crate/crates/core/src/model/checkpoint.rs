//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "L3DMCKPT"
//! version    u32      = 1
//! rng_seed   u64
//! activation u8       0 identity, 1 relu, 2 tanh
//! input_dim  u32
//! n_hidden   u32, then n_hidden x u32 widths
//! feature_dim u32, proj_dim u32, num_classes u32
//! n_params   u32
//! per param: rank u32, rank x u32 dims, numel x f64
//! ```
//!
//! Identical parameters always serialize to identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, Architecture, L3Model};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"L3DMCKPT";
pub const VERSION: u32 = 1;

/// Header fields of a checkpoint, as shown by `inspect`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub version: u32,
    pub rng_seed: u64,
    pub architecture: Architecture,
    pub parameter_arrays: usize,
    pub parameter_count: usize,
    pub fingerprint: u64,
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
        Activation::Tanh => 2,
    }
}

fn u32_of(n: usize) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Format(format!("{n} does not fit the checkpoint's u32 field")))
}

pub fn to_bytes(model: &L3Model) -> Result<Vec<u8>> {
    let arch = model.architecture();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.rng_seed().to_le_bytes());
    out.push(activation_code(arch.activation));
    out.extend_from_slice(&u32_of(arch.input_dim)?);
    out.extend_from_slice(&u32_of(arch.hidden.len())?);
    for &h in &arch.hidden {
        out.extend_from_slice(&u32_of(h)?);
    }
    out.extend_from_slice(&u32_of(arch.feature_dim)?);
    out.extend_from_slice(&u32_of(arch.proj_dim)?);
    out.extend_from_slice(&u32_of(arch.num_classes)?);
    let params = model.parameters();
    out.extend_from_slice(&u32_of(params.len())?);
    for p in params {
        out.extend_from_slice(&u32_of(p.shape().len())?);
        for &d in p.shape() {
            out.extend_from_slice(&u32_of(d)?);
        }
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn parse(bytes: &[u8]) -> Result<(u32, u64, Architecture, Vec<Tensor>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let seed = r.u64()?;
    let activation = match r.u8()? {
        0 => Activation::Identity,
        1 => Activation::Relu,
        2 => Activation::Tanh,
        other => return Err(Error::Format(format!("unknown activation code {other}"))),
    };
    let input_dim = r.u32()?;
    let n_hidden = r.u32()?;
    let hidden = (0..n_hidden).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let feature_dim = r.u32()?;
    let proj_dim = r.u32()?;
    let num_classes = r.u32()?;
    let arch = Architecture { input_dim, hidden, feature_dim, proj_dim, activation, num_classes };
    let n_params = r.u32()?;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((version, seed, arch, params))
}

pub fn from_bytes(bytes: &[u8]) -> Result<L3Model> {
    let (_, seed, arch, params) = parse(bytes)?;
    L3Model::from_parameters(arch, seed, params)
}

pub fn save(model: &L3Model, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<L3Model> {
    from_bytes(&fs::read(path)?)
}

pub fn inspect(path: &Path) -> Result<CheckpointInfo> {
    let bytes = fs::read(path)?;
    let (version, _, _, params) = parse(&bytes)?;
    let model = from_bytes(&bytes)?;
    Ok(CheckpointInfo {
        version,
        rng_seed: model.rng_seed(),
        architecture: model.architecture().clone(),
        parameter_arrays: params.len(),
        parameter_count: model.num_parameters(),
        fingerprint: model.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> L3Model {
        let mut arch = Architecture::new(3, 2);
        arch.hidden = vec![4];
        arch.feature_dim = 4;
        arch.proj_dim = 2;
        let mut m = L3Model::new(arch, 77).unwrap();
        m.expand_classifier(3).unwrap();
        m
    }

    #[test]
    fn bytes_round_trip() {
        let m = model();
        let bytes = to_bytes(&m).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut bytes = to_bytes(&model()).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(from_bytes(&bytes).is_err());
    }

    #[test]
    fn save_load_inspect() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
        let info = inspect(&path).unwrap();
        assert_eq!(info.rng_seed, 77);
        assert_eq!(info.architecture.num_classes, 3);
        assert_eq!(info.fingerprint, m.fingerprint());
    }
}
