//! Single-channel portable float maps.
//!
//! Written little-endian (negative scale) with rows stored bottom to top, as
//! the format prescribes. Big-endian files are accepted on read.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn write_pfm<W: Write>(mut w: W, map: &Tensor<f32>) -> Result<()> {
    if map.channels() != 1 {
        return Err(Error::shape(format!("PFM needs one channel, got {}", map.channels())));
    }
    let (h, wd) = (map.height(), map.width());
    let mut bytes = format!("Pf\n{wd} {h}\n-1.0\n").into_bytes();
    bytes.reserve(h * wd * 4);
    for y in (0..h).rev() {
        for x in 0..wd {
            bytes.extend_from_slice(&map.at(y, x, 0).to_le_bytes());
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_pfm<R: Read>(mut r: R) -> Result<Tensor<f32>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |d: String| Error::format("PFM", d);
    let mut pos = 0;
    let magic = header_token(&bytes, &mut pos).ok_or_else(|| bad("empty file".into()))?;
    if magic != "Pf" {
        return Err(bad(format!("unsupported magic {magic:?}")));
    }
    let mut num = |what: &str| -> Result<String> { header_token(&bytes, &mut pos).ok_or_else(|| bad(format!("missing {what}"))) };
    let w: usize = num("width")?.parse().map_err(|e| bad(format!("width: {e}")))?;
    let h: usize = num("height")?.parse().map_err(|e| bad(format!("height: {e}")))?;
    let scale: f64 = num("scale")?.parse().map_err(|e| bad(format!("scale: {e}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad(format!("scale {scale}")));
    }
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != w * h * 4 {
        return Err(bad(format!("{} data bytes for {w}x{h}", data.len())));
    }
    let little = scale < 0.0;
    let mut out = Tensor::zeros(h, w, 1);
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, x) = (k / w, k % w);
        out.set(h - 1 - row, x, 0, v);
    }
    Ok(out)
}

pub fn write_pfm_file(path: &Path, map: &Tensor<f32>) -> Result<()> {
    let mut buf = Vec::new();
    write_pfm(&mut buf, map)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_pfm_file(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    read_pfm(bytes.as_slice())
}
