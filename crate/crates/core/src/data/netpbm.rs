//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::path::Path;

use crate::data::idx::{read_file, to_byte};
use crate::error::{Error, Result};
use crate::linalg::Tensor;

/// Decode P5/P6 into `[C, H, W]` in `[0, 1]`.
pub fn parse_netpbm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let magic = token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::format(
                0,
                format!("unsupported netpbm magic {other:?}"),
            ))
        }
    };
    let mut field = |name: &str| -> Result<usize> {
        let at = pos;
        let t = token(bytes, &mut pos)?;
        t.parse()
            .map_err(|_| Error::format(at as u64, format!("bad {name} {t:?}")))
    };
    let w = field("width")?;
    let h = field("height")?;
    let maxval = field("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(
            pos as u64,
            format!("maxval {maxval} not 8-bit"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = channels * h * w;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::format(
            bytes.len() as u64,
            format!("raster truncated, need {need} bytes"),
        )
    })?;
    let scale = 1.0 / maxval as f64;
    let mut data = vec![0.0; need];
    // interleaved RGB -> planes
    for (i, &b) in raster.iter().enumerate() {
        let (pix, c) = (i / channels, i % channels);
        data[c * h * w + pix] = f64::from(b) * scale;
    }
    Tensor::new(vec![channels, h, w], data)
}

fn token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::format(*pos as u64, "truncated netpbm header")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_netpbm(path: impl AsRef<Path>) -> Result<Tensor> {
    parse_netpbm(&read_file(path.as_ref())?)
}

/// Encode a `h x w` plane as P5, min-max stretched to the full 8-bit range.
pub fn encode_pgm(plane: &[f64], h: usize, w: usize) -> Result<Vec<u8>> {
    if plane.len() != h * w {
        return Err(Error::shape(format!(
            "plane has {} values, expected {h}x{w}",
            plane.len()
        )));
    }
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(plane.iter().map(|&v| to_byte((v - lo) / span)));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, plane: &[f64], h: usize, w: usize) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(plane, h, w)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_planes_and_comments() {
        let mut b = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        b.extend_from_slice(&[255, 0, 51, 0, 255, 102]);
        let t = parse_netpbm(&b).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn pgm_round_trip() {
        let plane = [0.0, 0.5, 1.0, 0.25];
        let bytes = encode_pgm(&plane, 2, 2).unwrap();
        let t = parse_netpbm(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        for (a, b) in t.data().iter().zip(plane) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
    }

    #[test]
    fn truncated_raster() {
        let b = b"P5 4 4 255\n\x00\x01".to_vec();
        assert!(matches!(
            parse_netpbm(&b),
            Err(Error::Format { offset: 13, .. })
        ));
        assert!(parse_netpbm(b"P3 1 1 255\n1").is_err());
    }
}
