//! Grayscale PFM depth maps: `Pf`, rows stored bottom-to-top, 32-bit
//! floats, byte order given by the sign of the scale line. Invalid pixels
//! are written as 0 and masked out on read (valid means finite and > 0).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::depth::DepthMap;
use crate::{Error, Result};

pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    let (h, w) = (depth.height(), depth.width());
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "Pf\n{w} {h}\n-1.0\n")?;
    for row in (0..h).rev() {
        for col in 0..w {
            let v = if depth.mask()[[row, col]] {
                depth.values()[[row, col]] as f32
            } else {
                0.0
            };
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read one whitespace-terminated header token.
fn read_token(reader: &mut impl Read) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        reader.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(byte[0]);
        if token.len() > 32 {
            return Err(Error::Validation("oversized PFM header token".into()));
        }
    }
    String::from_utf8(token).map_err(|_| Error::Validation("non-UTF8 PFM header".into()))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let mut reader = BufReader::new(File::open(path)?);
    let magic = read_token(&mut reader)?;
    if magic != "Pf" {
        return Err(Error::Validation(format!(
            "expected grayscale PFM magic 'Pf', got '{magic}'"
        )));
    }
    let w: usize = read_token(&mut reader)?
        .parse()
        .map_err(|_| Error::Validation("bad PFM width".into()))?;
    let h: usize = read_token(&mut reader)?
        .parse()
        .map_err(|_| Error::Validation("bad PFM height".into()))?;
    let scale: f64 = read_token(&mut reader)?
        .parse()
        .map_err(|_| Error::Validation("bad PFM scale".into()))?;
    if w == 0 || h == 0 || w.saturating_mul(h) > 1 << 28 {
        return Err(Error::Validation(format!("unreasonable PFM size {w}x{h}")));
    }
    let little_endian = scale < 0.0;
    let mut data = vec![0u8; w * h * 4];
    reader.read_exact(&mut data)?;
    let mut values = Array2::zeros((h, w));
    for row in 0..h {
        // PFM stores the bottom row first.
        let src_row = h - 1 - row;
        for col in 0..w {
            let off = (src_row * w + col) * 4;
            let bytes: [u8; 4] = data[off..off + 4].try_into().expect("4 bytes");
            let v = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
            values[[row, col]] = v as f64;
        }
    }
    Ok(DepthMap::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_and_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.pfm");
        let mut values = Array2::from_shape_fn((5, 7), |(r, c)| 0.5 + r as f64 + 0.125 * c as f64);
        values[[2, 3]] = f64::NAN;
        values[[4, 0]] = -2.0;
        let depth = DepthMap::new(values);
        write_pfm(&path, &depth).unwrap();
        let back = read_pfm(&path).unwrap();
        assert_eq!(back.mask(), depth.mask());
        for (a, b) in back.values().iter().zip(depth.values().iter()) {
            if b.is_finite() && *b > 0.0 {
                assert_eq!(*a, *b as f32 as f64);
            }
        }
    }

    #[test]
    fn rejects_color_pfm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(read_pfm(&path).is_err());
    }
}
