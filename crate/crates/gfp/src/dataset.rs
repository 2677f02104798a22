//! `GFPD` dataset files.
//!
//! Header: the magic bytes `GFPD`, then `version`, `count`, `channels`,
//! `height`, `width`, `classes` as little-endian `u32`. Each of the `count`
//! records is `c*h*w` little-endian `f32` values followed by a `u32` label.

use gfp_core::Dataset;

pub const MAGIC: &[u8; 4] = b"GFPD";
pub const VERSION: u32 = 1;
const HEADER: usize = 4 + 6 * 4;

#[derive(Debug, PartialEq, Eq, thiserror::Error)]
pub enum DatasetError {
    #[error("not a GFPD file")]
    BadMagic,
    #[error("unsupported GFPD version {0}")]
    Version(u32),
    #[error("file has {actual} bytes, header implies {expected}")]
    Length { expected: u64, actual: u64 },
    #[error("record {index} has label {label}, but there are {classes} classes")]
    BadLabel {
        index: usize,
        label: u32,
        classes: u32,
    },
    #[error("zero-sized dimension in header")]
    ZeroDim,
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> Result<Dataset, DatasetError> {
    if bytes.len() < HEADER {
        return Err(if bytes.starts_with(MAGIC) || bytes.len() < 4 {
            DatasetError::Length {
                expected: HEADER as u64,
                actual: bytes.len() as u64,
            }
        } else {
            DatasetError::BadMagic
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(DatasetError::Version(version));
    }
    let [count, c, h, w, classes] = [8, 12, 16, 20, 24].map(|at| u32_at(bytes, at));
    if c == 0 || h == 0 || w == 0 || classes == 0 {
        return Err(DatasetError::ZeroDim);
    }
    let per = c as u64 * h as u64 * w as u64;
    let record = 4 * per + 4;
    let expected = HEADER as u64 + count as u64 * record;
    if bytes.len() as u64 != expected {
        return Err(DatasetError::Length {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let mut images = Vec::with_capacity((count as u64 * per) as usize);
    let mut labels = Vec::with_capacity(count as usize);
    for (i, rec) in bytes[HEADER..].chunks_exact(record as usize).enumerate() {
        let (px, lab) = rec.split_at(rec.len() - 4);
        images.extend(
            px.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
        );
        let label = u32::from_le_bytes(lab.try_into().unwrap());
        if label >= classes {
            return Err(DatasetError::BadLabel {
                index: i,
                label,
                classes,
            });
        }
        labels.push(label as usize);
    }
    Ok(Dataset::new(
        [c as usize, h as usize, w as usize],
        classes as usize,
        images,
        labels,
    )
    .expect("sizes checked"))
}

pub fn encode(data: &Dataset) -> Vec<u8> {
    let [c, h, w] = data.dims();
    let mut out = Vec::with_capacity(HEADER + data.len() * (4 * data.sample_len() + 4));
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        data.len() as u32,
        c as u32,
        h as u32,
        w as u32,
        data.classes() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..data.len() {
        for v in data.image(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(data.label(i) as u32).to_le_bytes());
    }
    out
}
