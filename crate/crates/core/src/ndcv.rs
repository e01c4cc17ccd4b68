//! Little-endian `f64` matrix container.
//!
//! Each record is a 16-byte header (`b"NDCV"`, version, rows, cols as `u32`)
//! followed by `rows * cols` values in row-major order. Files may hold several
//! records back to back.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"NDCV";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 16;

pub fn write_matrix(w: &mut impl Write, m: &Matrix) -> std::io::Result<()> {
    let dims = |v: usize| {
        u32::try_from(v)
            .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "matrix too large"))
    };
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&dims(m.rows())?.to_le_bytes())?;
    w.write_all(&dims(m.cols())?.to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Read one record starting at byte `offset` of the stream. Returns `None` on a
/// clean end of stream, and advances `offset` past the record.
pub fn read_matrix(r: &mut impl Read, offset: &mut u64) -> Result<Option<Matrix>> {
    let mut header = [0u8; 16];
    let got = read_full(r, &mut header).map_err(|e| Error::format(*offset, e.to_string()))?;
    if got == 0 {
        return Ok(None);
    }
    if got < header.len() {
        return Err(Error::format(*offset + got as u64, "truncated NDCV header"));
    }
    if &header[..4] != MAGIC {
        return Err(Error::format(*offset, "bad magic, expected NDCV"));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::format(
            *offset + 4,
            format!("unsupported NDCV version {version}"),
        ));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let start = *offset + HEADER_BYTES;
    let mut payload = vec![0u8; rows * cols * 8];
    let got = read_full(r, &mut payload).map_err(|e| Error::format(start, e.to_string()))?;
    if got < payload.len() {
        return Err(Error::format(
            start + got as u64,
            format!("truncated payload for {rows}x{cols} matrix"),
        ));
    }
    *offset = start + payload.len() as u64;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some(Matrix::from_vec(rows, cols, data)?))
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

pub fn save(path: impl AsRef<Path>, matrices: &[&Matrix]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for m in matrices {
        write_matrix(&mut w, m).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Matrix>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut offset = 0;
    let mut out = Vec::new();
    while let Some(m) = read_matrix(&mut r, &mut offset)? {
        out.push(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;

    #[test]
    fn round_trip_several_records() {
        let mut rng = SeededRng::new(51);
        let a = rng.gaussian_matrix(3, 5);
        let b = Matrix::identity(4);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &a).unwrap();
        write_matrix(&mut buf, &b).unwrap();
        assert_eq!(buf.len(), 16 + 15 * 8 + 16 + 16 * 8);
        assert_eq!(&buf[..4], b"NDCV");
        assert_eq!(&buf[8..12], &3u32.to_le_bytes());

        let mut cur = &buf[..];
        let mut off = 0;
        assert_eq!(read_matrix(&mut cur, &mut off).unwrap().unwrap(), a);
        assert_eq!(read_matrix(&mut cur, &mut off).unwrap().unwrap(), b);
        assert!(read_matrix(&mut cur, &mut off).unwrap().is_none());
        assert_eq!(off, buf.len() as u64);
    }

    #[test]
    fn corrupt_inputs_report_offsets() {
        let mut buf = Vec::new();
        write_matrix(&mut buf, &Matrix::identity(2)).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        let mut off = 0;
        match read_matrix(&mut &bad[..], &mut off) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        let truncated = &buf[..buf.len() - 3];
        match read_matrix(&mut &truncated[..], &mut 0) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16 + 29),
            other => panic!("{other:?}"),
        }
        let mut versioned = buf.clone();
        versioned[4] = 9;
        assert!(matches!(
            read_matrix(&mut &versioned[..], &mut 0),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ndcv");
        let m = Matrix::from_rows(&[[1.5, -2.0], [0.25, 1e-300]]);
        save(&p, &[&m, &m]).unwrap();
        assert_eq!(load(&p).unwrap(), vec![m.clone(), m]);
        assert!(matches!(
            load(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
