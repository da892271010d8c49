//! CHYP raw image container: a 16-byte header (magic "CHYP", then H, W, C
//! as little-endian u32) followed by H*W*C little-endian f32 values stored
//! planar (all of channel 0, then channel 1, ...).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

pub const CHYP_MAGIC: &[u8; 4] = b"CHYP";

pub fn write_chyp(path: &Path, pixels: &Array3<f64>) -> Result<()> {
    let (h, w, c) = pixels.dim();
    let mut buf = Vec::with_capacity(16 + h * w * c * 4);
    buf.extend_from_slice(CHYP_MAGIC);
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&(c as u32).to_le_bytes());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                buf.extend_from_slice(&(pixels[(y, x, ch)] as f32).to_le_bytes());
            }
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_chyp(path: &Path) -> Result<Array3<f64>> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[0..4] != CHYP_MAGIC {
        return Err(Error::BadImageFile {
            path: path.to_path_buf(),
            msg: "bad magic, expected CHYP".into(),
        });
    }
    let h = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    if c != 3 {
        return Err(Error::BadImageFile {
            path: path.to_path_buf(),
            msg: format!("expected 3 channels, found {c}"),
        });
    }
    let mut data = vec![0u8; h * w * c * 4];
    f.read_exact(&mut data).map_err(|e| Error::io(path, e))?;
    let mut pixels = Array3::zeros((h, w, c));
    let mut off = 0;
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = f32::from_le_bytes(data[off..off + 4].try_into().unwrap());
                pixels[(y, x, ch)] = v as f64;
                off += 4;
            }
        }
    }
    Ok(pixels)
}
