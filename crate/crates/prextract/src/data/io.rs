//! Manifest-driven directory ingestion and the packed dataset file format.

use crate::data::{DatasetSplit, LabeledSample, Regime, Sample};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

/// Ingest a directory of image files described by a tab-separated manifest
/// with one record per line: `id<TAB>relative-path<TAB>label<TAB>split`,
/// where split is `victim_train`, `proxy`, or `test`. Proxy records ignore
/// their label field. Output ordering is deterministic (ascending id).
pub fn ingest_directory(
    root: &Path,
    manifest: &Path,
    num_classes: Option<usize>,
    regime: Regime,
) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| Error::Dataset(format!("cannot read manifest {}: {e}", manifest.display())))?;
    let mut seen = BTreeSet::new();
    let mut victim_train = Vec::new();
    let mut proxy = Vec::new();
    let mut test = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Dataset(format!(
                "manifest line {}: expected 4 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let id: u64 = fields[0].parse().map_err(|_| {
            Error::Dataset(format!("manifest line {}: bad id '{}'", lineno + 1, fields[0]))
        })?;
        if !seen.insert(id) {
            return Err(Error::Dataset(format!("duplicate id {id} in manifest")));
        }
        let image = load_image(&root.join(fields[1]))?;
        let sample = Sample::new(id, image)?;
        match fields[3] {
            "proxy" => proxy.push(sample),
            split @ ("victim_train" | "test") => {
                let label: usize = fields[2].parse().map_err(|_| {
                    Error::Dataset(format!(
                        "manifest line {}: bad label '{}'",
                        lineno + 1,
                        fields[2]
                    ))
                })?;
                if let Some(n) = num_classes {
                    if label >= n {
                        return Err(Error::Dataset(format!(
                            "manifest line {}: label {label} out of range [0, {n})",
                            lineno + 1
                        )));
                    }
                }
                let labeled = LabeledSample::new(sample, label, None)?;
                if split == "victim_train" {
                    victim_train.push(labeled);
                } else {
                    test.push(labeled);
                }
            }
            other => {
                return Err(Error::Dataset(format!(
                    "manifest line {}: unknown split '{other}'",
                    lineno + 1
                )))
            }
        }
    }
    victim_train.sort_by_key(|s| s.sample.id);
    proxy.sort_by_key(|s| s.id);
    test.sort_by_key(|s| s.sample.id);
    let split = DatasetSplit { victim_train, proxy, test, regime };
    split.validate()?;
    Ok(split)
}

fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Dataset(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px.0[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

const PACKED_MAGIC: &[u8; 4] = b"PXDS";
const PACKED_VERSION: u32 = 1;
const DTYPE_F32: u8 = 4;

/// Write samples as a packed binary file: header (count, shape, dtype)
/// followed by contiguous little-endian float32 samples.
pub fn write_packed(path: &Path, samples: &[Sample]) -> Result<()> {
    let shape = samples
        .first()
        .map(|s| s.image.shape().to_vec())
        .ok_or_else(|| Error::Dataset("write_packed on empty sample list".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(PACKED_MAGIC);
    out.extend_from_slice(&PACKED_VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in &shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(DTYPE_F32);
    for s in samples {
        if s.image.shape() != shape.as_slice() {
            return Err(Error::Dataset(format!(
                "sample {} shape {:?} differs from first sample {:?}",
                s.id,
                s.image.shape(),
                shape
            )));
        }
        for &v in s.image.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a packed dataset file; sample ids are assigned by position.
pub fn read_packed(path: &Path) -> Result<Vec<Sample>> {
    let bytes = std::fs::read(path)?;
    let mut cur = bytes.as_slice();
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic)
        .map_err(|_| Error::Dataset("packed file: truncated header".into()))?;
    if &magic != PACKED_MAGIC {
        return Err(Error::Dataset("packed file: bad magic".into()));
    }
    let version = read_u32(&mut cur)?;
    if version != PACKED_VERSION {
        return Err(Error::Dataset(format!("packed file: unsupported version {version}")));
    }
    let count = read_u64(&mut cur)? as usize;
    let ndim = read_u32(&mut cur)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u64(&mut cur)? as usize);
    }
    let mut dtype = [0u8; 1];
    cur.read_exact(&mut dtype)
        .map_err(|_| Error::Dataset("packed file: truncated dtype".into()))?;
    if dtype[0] != DTYPE_F32 {
        return Err(Error::Dataset(format!("packed file: unsupported dtype {}", dtype[0])));
    }
    let per: usize = shape.iter().product();
    let mut samples = Vec::with_capacity(count);
    for id in 0..count {
        let mut data = Vec::with_capacity(per);
        for _ in 0..per {
            let mut buf = [0u8; 4];
            cur.read_exact(&mut buf)
                .map_err(|_| Error::Dataset("packed file: truncated sample data".into()))?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        samples.push(Sample::new(id as u64, Tensor::new(shape.clone(), data)?)?);
    }
    Ok(samples)
}

fn read_u32(cur: &mut &[u8]) -> Result<u32> {
    let mut buf = [0u8; 4];
    cur.read_exact(&mut buf)
        .map_err(|_| Error::Dataset("packed file: truncated u32".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(cur: &mut &[u8]) -> Result<u64> {
    let mut buf = [0u8; 8];
    cur.read_exact(&mut buf)
        .map_err(|_| Error::Dataset("packed file: truncated u64".into()))?;
    Ok(u64::from_le_bytes(buf))
}
