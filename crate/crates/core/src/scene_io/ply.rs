//! Minimal binary little-endian PLY reader/writer covering the two layouts
//! this project uses: colored point clouds and Gaussian checkpoints.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropType {
    F32,
    U8,
    I32,
}

impl PropType {
    fn parse(s: &str) -> Option<PropType> {
        match s {
            "float" | "float32" => Some(PropType::F32),
            "uchar" | "uint8" => Some(PropType::U8),
            "int" | "int32" => Some(PropType::I32),
            _ => None,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            PropType::F32 => "float",
            PropType::U8 => "uchar",
            PropType::I32 => "int",
        }
    }

    fn size(&self) -> usize {
        match self {
            PropType::F32 => 4,
            PropType::U8 => 1,
            PropType::I32 => 4,
        }
    }
}

/// A parsed vertex element: named columns of f64 values (integer types are
/// widened losslessly).
#[derive(Debug, Clone)]
pub struct PlyData {
    pub count: usize,
    pub properties: Vec<(String, PropType)>,
    /// Column-major: one Vec per property.
    pub columns: Vec<Vec<f64>>,
}

impl PlyData {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.properties
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| self.columns[i].as_slice())
    }
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = std::io::BufReader::new(file);
    let mut line = String::new();
    let mut read_line = |reader: &mut std::io::BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        reader
            .read_line(&mut line)
            .map_err(|e| Error::io(path, e))?;
        Ok(line.trim_end().to_string())
    };

    if read_line(&mut reader)? != "ply" {
        return Err(Error::parse(path, "missing ply magic"));
    }
    if read_line(&mut reader)? != "format binary_little_endian 1.0" {
        return Err(Error::parse(path, "only binary_little_endian 1.0 supported"));
    }
    let mut count = None;
    let mut properties: Vec<(String, PropType)> = Vec::new();
    loop {
        let l = read_line(&mut reader)?;
        if l == "end_header" {
            break;
        }
        if l.is_empty() {
            return Err(Error::parse(path, "truncated header"));
        }
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| {
                    Error::parse(path, format!("bad vertex count '{n}'"))
                })?);
            }
            ["element", other, _] => {
                return Err(Error::parse(path, format!("unsupported element '{other}'")));
            }
            ["property", ty, name] => {
                let ty = PropType::parse(ty)
                    .ok_or_else(|| Error::parse(path, format!("unsupported type '{ty}'")))?;
                properties.push((name.to_string(), ty));
            }
            _ => return Err(Error::parse(path, format!("bad header line '{l}'"))),
        }
    }
    let count = count.ok_or_else(|| Error::parse(path, "no vertex element"))?;

    let row_size: usize = properties.iter().map(|(_, t)| t.size()).sum();
    let mut raw = vec![0u8; count * row_size];
    reader
        .read_exact(&mut raw)
        .map_err(|e| Error::parse(path, format!("truncated body: {e}")))?;

    let mut columns = vec![Vec::with_capacity(count); properties.len()];
    let mut off = 0;
    for _ in 0..count {
        for (pi, (_, ty)) in properties.iter().enumerate() {
            let v = match ty {
                PropType::F32 => {
                    f32::from_le_bytes(raw[off..off + 4].try_into().unwrap()) as f64
                }
                PropType::U8 => raw[off] as f64,
                PropType::I32 => {
                    i32::from_le_bytes(raw[off..off + 4].try_into().unwrap()) as f64
                }
            };
            columns[pi].push(v);
            off += ty.size();
        }
    }
    Ok(PlyData {
        count,
        properties,
        columns,
    })
}

/// Write a binary little-endian PLY with the given columns.
pub fn write_ply(
    path: &Path,
    properties: &[(String, PropType)],
    columns: &[Vec<f64>],
) -> Result<()> {
    let count = columns.first().map_or(0, |c| c.len());
    for c in columns {
        assert_eq!(c.len(), count, "ragged ply columns");
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {count}\n"));
    for (name, ty) in properties {
        header.push_str(&format!("property {} {}\n", ty.name(), name));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(count * 16);
    for r in 0..count {
        for (pi, (_, ty)) in properties.iter().enumerate() {
            let v = columns[pi][r];
            match ty {
                PropType::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                PropType::U8 => buf.push(v.clamp(0.0, 255.0).round() as u8),
                PropType::I32 => buf.extend_from_slice(&(v as i32).to_le_bytes()),
            }
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Colored point cloud I/O (x, y, z float; red, green, blue uchar in [0,255]).
pub fn write_point_cloud(path: &Path, cloud: &crate::scene::PointCloud) -> Result<()> {
    let props: Vec<(String, PropType)> = [
        ("x", PropType::F32),
        ("y", PropType::F32),
        ("z", PropType::F32),
        ("red", PropType::U8),
        ("green", PropType::U8),
        ("blue", PropType::U8),
    ]
    .map(|(n, t)| (n.to_string(), t))
    .to_vec();
    let mut cols = vec![Vec::with_capacity(cloud.len()); 6];
    for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
        cols[0].push(p.x);
        cols[1].push(p.y);
        cols[2].push(p.z);
        for ch in 0..3 {
            cols[3 + ch].push((c[ch] * 255.0).round().clamp(0.0, 255.0));
        }
    }
    write_ply(path, &props, &cols)
}

pub fn read_point_cloud(path: &Path) -> Result<crate::scene::PointCloud> {
    let data = read_ply(path)?;
    let mut cloud = crate::scene::PointCloud::default();
    let get = |n: &str| {
        data.column(n)
            .ok_or_else(|| Error::parse(path, format!("missing property '{n}'")))
    };
    let (x, y, z) = (get("x")?, get("y")?, get("z")?);
    let (r, g, b) = (get("red")?, get("green")?, get("blue")?);
    for i in 0..data.count {
        cloud
            .positions
            .push(nalgebra::Vector3::new(x[i], y[i], z[i]));
        cloud
            .colors
            .push(nalgebra::Vector3::new(r[i], g[i], b[i]) / 255.0);
    }
    Ok(cloud)
}
