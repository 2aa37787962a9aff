//! Binary little-endian PLY with float32 xyz and optional uchar rgb.
//!
//! Only this one vertex profile is accepted; anything else is rejected
//! rather than guessed at.

use std::io::{BufRead, BufReader, Read, Write};

use crate::model::{PointCloud, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported ply: {0}")]
    Unsupported(String),
    #[error("truncated vertex data: expected {expected} vertices")]
    Truncated { expected: usize },
}

pub fn write_ply<W: Write>(mut w: W, cloud: &PointCloud) -> Result<(), PlyError> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if cloud.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let stride = if cloud.colors.is_some() { 15 } else { 12 };
    let mut buf = Vec::with_capacity(cloud.len() * stride);
    for (i, p) in cloud.points.iter().enumerate() {
        for c in [p.x, p.y, p.z] {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
        if let Some(colors) = &cloud.colors {
            buf.extend_from_slice(&colors[i]);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_ply<R: Read>(r: R) -> Result<PointCloud, PlyError> {
    let mut reader = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<R>| -> Result<String, PlyError> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(PlyError::Unsupported("unexpected end of header".into()));
        }
        Ok(line.trim_end().to_string())
    };

    if next_line(&mut reader)? != "ply" {
        return Err(PlyError::Unsupported("missing ply magic".into()));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<(String, String)> = Vec::new();
    loop {
        let l = next_line(&mut reader)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => {
                return Err(PlyError::Unsupported(format!("format {other}")));
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(
                    n.parse()
                        .map_err(|_| PlyError::Unsupported(format!("vertex count {n:?}")))?,
                );
            }
            ["element", other, ..] => {
                return Err(PlyError::Unsupported(format!("element {other}")));
            }
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            ["end_header"] => break,
            _ => return Err(PlyError::Unsupported(format!("header line {l:?}"))),
        }
    }
    let count = count.ok_or_else(|| PlyError::Unsupported("no vertex element".into()))?;
    let names: Vec<(&str, &str)> = props.iter().map(|(t, n)| (t.as_str(), n.as_str())).collect();
    let has_color = match names.as_slice() {
        [("float", "x"), ("float", "y"), ("float", "z")] => false,
        [("float", "x"), ("float", "y"), ("float", "z"), ("uchar", "red"), ("uchar", "green"), ("uchar", "blue")] => {
            true
        }
        _ => return Err(PlyError::Unsupported(format!("vertex properties {names:?}"))),
    };
    let stride = if has_color { 15 } else { 12 };
    let mut data = vec![0u8; count * stride];
    reader
        .read_exact(&mut data)
        .map_err(|_| PlyError::Truncated { expected: count })?;

    let mut points = Vec::with_capacity(count);
    let mut colors = has_color.then(|| Vec::with_capacity(count));
    for chunk in data.chunks_exact(stride) {
        let f = |o: usize| f32::from_le_bytes(chunk[o..o + 4].try_into().unwrap()) as f64;
        points.push(Vec3::new(f(0), f(4), f(8)));
        if let Some(c) = colors.as_mut() {
            c.push([chunk[12], chunk[13], chunk[14]]);
        }
    }
    Ok(PointCloud { points, colors })
}
