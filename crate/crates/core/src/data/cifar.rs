//! CIFAR-10 binary batches: 10000 records of one label byte followed by a
//! 32x32 image stored as R, G and B planes.

use std::path::Path;

use crate::data::idx::read_file;
use crate::error::{Error, Result};
use crate::linalg::Tensor;

pub const SIDE: usize = 32;
pub const PIXELS: usize = 3 * SIDE * SIDE;
pub const RECORD: usize = 1 + PIXELS;
pub const CLASSES: usize = 10;

/// Decode records into images `[N, 3, 32, 32]` in `[0, 1]` and labels.
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Tensor, Vec<u8>)> {
    if !bytes.len().is_multiple_of(RECORD) {
        let whole = bytes.len() / RECORD * RECORD;
        return Err(Error::format(
            whole as u64,
            format!(
                "truncated CIFAR-10 record ({} trailing bytes)",
                bytes.len() - whole
            ),
        ));
    }
    let n = bytes.len() / RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * PIXELS);
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(Error::format(
                (i * RECORD) as u64,
                format!("label {} out of range", rec[0]),
            ));
        }
        labels.push(rec[0]);
        data.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    Ok((Tensor::new(vec![n, 3, SIDE, SIDE], data)?, labels))
}

pub fn read_cifar10(path: impl AsRef<Path>) -> Result<(Tensor, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    parse_cifar10(&bytes).map_err(|e| match e {
        Error::Format { offset, reason } => Error::Format {
            offset,
            reason: format!("{}: {reason}", path.display()),
        },
        e => e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_planes() {
        let mut bytes = vec![0u8; 2 * RECORD];
        bytes[0] = 3;
        bytes[1] = 255; // R at (0, 0)
        bytes[1 + 1024 + 33] = 51; // G at (1, 1)
        bytes[RECORD] = 9;
        let (t, labels) = parse_cifar10(&bytes).unwrap();
        assert_eq!(t.shape(), &[2, 3, 32, 32]);
        assert_eq!(labels, vec![3, 9]);
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[1024 + 33], 0.2);
    }

    #[test]
    fn rejects_bad_records() {
        assert!(matches!(
            parse_cifar10(&vec![0u8; RECORD + 5]),
            Err(Error::Format { offset, .. }) if offset == RECORD as u64
        ));
        let mut bytes = vec![0u8; 2 * RECORD];
        bytes[RECORD] = 10;
        assert!(matches!(
            parse_cifar10(&bytes),
            Err(Error::Format { offset, .. }) if offset == RECORD as u64
        ));
    }
}
