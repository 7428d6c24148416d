//! Grayscale PFM depth maps (32-bit float, little-endian, rows bottom-up).

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::img::ImagePlane;

pub fn write_pfm(path: &Path, img: &ImagePlane) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "Pf\n{} {}\n-1.0\n", img.width, img.height).map_err(|e| Error::io(path, e))?;
    // PFM scanlines run bottom to top.
    let mut buf = Vec::with_capacity(img.width * img.height * 4);
    for y in (0..img.height).rev() {
        for x in 0..img.width {
            buf.extend_from_slice(&(img.at(x, y) as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<ImagePlane> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if line.trim() != "Pf" {
        return Err(Error::parse(path, "expected grayscale PFM magic 'Pf'"));
    }
    line.clear();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let dims: Vec<usize> = line
        .split_whitespace()
        .filter_map(|t| t.parse().ok())
        .collect();
    if dims.len() != 2 {
        return Err(Error::parse(path, format!("bad dimensions line '{}'", line.trim())));
    }
    let (width, height) = (dims[0], dims[1]);
    line.clear();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let scale: f64 = line
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, format!("bad scale '{}'", line.trim())))?;
    if scale >= 0.0 {
        return Err(Error::parse(path, "big-endian PFM not supported"));
    }
    let mut raw = vec![0u8; width * height * 4];
    r.read_exact(&mut raw)
        .map_err(|e| Error::parse(path, format!("truncated body: {e}")))?;
    let mut img = ImagePlane::zeros(width, height);
    let mut off = 0;
    for y in (0..height).rev() {
        for x in 0..width {
            let v = f32::from_le_bytes(raw[off..off + 4].try_into().unwrap());
            *img.at_mut(x, y) = v as f64;
            off += 4;
        }
    }
    Ok(img)
}
