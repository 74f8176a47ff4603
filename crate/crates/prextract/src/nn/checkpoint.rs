//! Versioned binary checkpoint container.
//!
//! Layout: magic `PXCP`, format version (u32 LE), architecture name,
//! shape table (entry name + dims), then raw little-endian f64 parameter
//! blocks in shape-table order. Serialization is deterministic, so an
//! unchanged model re-serializes byte-identically.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::nn::ParamSet;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PXCP";
const VERSION: u32 = 1;

pub fn to_bytes(arch_name: &str, params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    write_str(&mut out, arch_name);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        write_str(&mut out, name);
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, tensor) in params.iter() {
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(String, ParamSet)> {
    let mut cur = bytes;
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut cur)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let arch_name = read_str(&mut cur)?;
    let count = read_u32(&mut cur)? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_str(&mut cur)?;
        let ndim = read_u32(&mut cur)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut cur)? as usize);
        }
        table.push((name, shape));
    }
    let mut params = ParamSet::new();
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut buf = [0u8; 8];
            cur.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("truncated data for '{name}'")))?;
            data.push(f64::from_le_bytes(buf));
        }
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    if !cur.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameter blocks",
            cur.len()
        )));
    }
    Ok((arch_name, params))
}

pub fn save(path: &Path, arch_name: &str, params: &ParamSet) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(arch_name, params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(String, ParamSet)> {
    from_bytes(&std::fs::read(path)?)
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let mut buf = [0u8; 4];
    cur.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated u32".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(cur: &mut &[u8]) -> Result<u64> {
    let mut buf = [0u8; 8];
    cur.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated u64".into()))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_str(cur: &mut &[u8]) -> Result<String> {
    let len = read_u32(cur)? as usize;
    if cur.len() < len {
        return Err(Error::Checkpoint("truncated string".into()));
    }
    let (s, rest) = cur.split_at(len);
    *cur = rest;
    String::from_utf8(s.to_vec()).map_err(|_| Error::Checkpoint("non-utf8 name".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::classifier;
    use crate::nn::Network;

    #[test]
    fn round_trip_is_byte_identical() {
        let net = Network::init(classifier("mlp-s", &[1, 8, 8], 16, 4).unwrap(), 12).unwrap();
        let bytes = to_bytes(&net.arch.name, &net.params);
        let (name, params) = from_bytes(&bytes).unwrap();
        assert_eq!(name, net.arch.name);
        assert_eq!(params, net.params);
        assert_eq!(to_bytes(&name, &params), bytes);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let net = Network::init(classifier("mlp-s", &[1, 8, 8], 16, 4).unwrap(), 12).unwrap();
        let mut bytes = to_bytes(&net.arch.name, &net.params);
        bytes[0] = b'X';
        assert!(from_bytes(&bytes).is_err());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let net = Network::init(classifier("mlp-s", &[1, 8, 8], 16, 4).unwrap(), 12).unwrap();
        let bytes = to_bytes(&net.arch.name, &net.params);
        assert!(from_bytes(&bytes[..bytes.len() - 5]).is_err());
    }
}
