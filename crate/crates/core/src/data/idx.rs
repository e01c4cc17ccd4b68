//! IDX containers (MNIST, Fashion-MNIST): big-endian magic `0x0000_08NN`
//! where `NN` is the number of dimensions, then one big-endian `u32` per
//! dimension, then `u8` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parse an IDX buffer with the given magic, returning dims and payload.
pub fn parse_idx(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len() as u64, "truncated IDX magic"));
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if found != magic {
        return Err(Error::format(
            0,
            format!("IDX magic {found:#010x}, expected {magic:#010x}"),
        ));
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::format(
            bytes.len() as u64,
            "truncated IDX dimensions",
        ));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < count {
        return Err(Error::format(
            bytes.len() as u64,
            format!(
                "IDX payload truncated: dims {dims:?} need {count} bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > count {
        return Err(Error::format(
            (header + count) as u64,
            "trailing bytes after IDX payload",
        ));
    }
    Ok((dims, payload))
}

/// Images as `[N, 1, H, W]` scaled to `[0, 1]`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = read_file(path.as_ref())?;
    let (dims, payload) = parse_idx(&bytes, IMAGES_MAGIC)?;
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(vec![dims[0], 1, dims[1], dims[2]], data)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let bytes = read_file(path.as_ref())?;
    let (_, payload) = parse_idx(&bytes, LABELS_MAGIC)?;
    Ok(payload.to_vec())
}

pub fn encode_idx_images(images: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = images.dims4()?;
    if c != 1 {
        return Err(Error::shape(format!(
            "IDX images are single-channel, got {c}"
        )));
    }
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [n, h, w] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub(crate) fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 255, 51, 102, 1, 2, 3, 4]);
        b
    }

    #[test]
    fn hand_built_images() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img");
        std::fs::write(&p, fixture()).unwrap();
        let t = read_idx_images(&p).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert_eq!(&t.data()[..4], &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(t.data()[7], 4.0 / 255.0);
        assert_eq!(encode_idx_images(&t).unwrap(), fixture());
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let labels = encode_idx_labels(&[1, 2, 3]);
        match parse_idx(&labels, IMAGES_MAGIC) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        let mut short = fixture();
        short.truncate(20);
        match parse_idx(&short, IMAGES_MAGIC) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("{other:?}"),
        }
        assert!(parse_idx(&fixture()[..10], IMAGES_MAGIC).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let bytes = encode_idx_labels(&[7, 0, 9]);
        let (dims, payload) = parse_idx(&bytes, LABELS_MAGIC).unwrap();
        assert_eq!(dims, vec![3]);
        assert_eq!(payload, &[7, 0, 9]);
    }
}
