//! Minimal ASCII PLY support: vertex positions only.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// Parses the `x`, `y`, `z` vertex properties of an ASCII PLY document.
///
/// Elements other than `vertex` are skipped; each element occupies exactly
/// one line in the ASCII encoding.
pub fn parse_ply(text: &str) -> Result<Vec<Vector3<f64>>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::format("ply", "missing 'ply' magic"));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut ascii = false;
    loop {
        let line = lines
            .next()
            .ok_or_else(|| Error::format("ply", "header not terminated"))?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => ascii = tok.next() == Some("ascii"),
            Some("element") => {
                let name = tok.next().unwrap_or_default().to_string();
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::format("ply", format!("bad element line: {line}")))?;
                elements.push(Element {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::format("ply", "property before element"))?;
                // Last token is the property name, also for list properties.
                let name = line.split_whitespace().last().unwrap_or_default();
                el.properties.push(name.to_string());
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    if !ascii {
        return Err(Error::format("ply", "only ascii PLY is supported"));
    }

    let mut points = None;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines.next().ok_or_else(|| Error::format("ply", "truncated body"))?;
            }
            continue;
        }
        let col = |axis: &str| {
            el.properties
                .iter()
                .position(|p| p == axis)
                .ok_or_else(|| Error::format("ply", format!("vertex has no '{axis}' property")))
        };
        let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
        let mut pts = Vec::with_capacity(el.count);
        for _ in 0..el.count {
            let line = lines
                .next()
                .ok_or_else(|| Error::format("ply", "truncated vertex list"))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format("ply", format!("bad vertex '{line}': {e}")))?;
            let get = |i: usize| {
                vals.get(i)
                    .copied()
                    .ok_or_else(|| Error::format("ply", format!("short vertex line '{line}'")))
            };
            pts.push(Vector3::new(get(ix)?, get(iy)?, get(iz)?));
        }
        points = Some(pts);
        break;
    }
    points.ok_or_else(|| Error::format("ply", "no vertex element"))
}

pub fn read_ply(path: &Path) -> Result<Vec<Vector3<f64>>> {
    parse_ply(&std::fs::read_to_string(path)?)
}

/// Serialises points as ASCII PLY with `float` properties.
pub fn format_ply(points: &[Vector3<f64>]) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    out.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

pub fn write_ply(path: &Path, points: &[Vector3<f64>]) -> Result<()> {
    std::fs::write(path, format_ply(points))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_vertices_and_skips_faces() {
        let text = "ply\nformat ascii 1.0\ncomment hi\nelement vertex 3\nproperty float x\n\
                    property float y\nproperty float z\nproperty uchar red\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n\
                    0 0 0 255\n1.5 0 0 0\n0 2 -3e1 0\n3 0 1 2\n";
        let pts = parse_ply(text).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[2], Vector3::new(0.0, 2.0, -30.0));
    }

    #[test]
    fn element_before_vertex_is_skipped() {
        let text = "ply\nformat ascii 1.0\nelement camera 1\nproperty float f\n\
                    element vertex 1\nproperty float z\nproperty float y\nproperty float x\n\
                    end_header\n9\n1 2 3\n";
        assert_eq!(parse_ply(text).unwrap(), vec![Vector3::new(3.0, 2.0, 1.0)]);
    }

    #[test]
    fn round_trip() {
        let pts = vec![Vector3::new(0.1, -2.5, 1e3), Vector3::new(7.0, 8.0, 9.0)];
        assert_eq!(parse_ply(&format_ply(&pts)).unwrap(), pts);
    }

    #[test]
    fn rejects_binary_and_garbage() {
        assert!(parse_ply("nope").is_err());
        let bin = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(parse_ply(bin).is_err());
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n\
                     property float z\nend_header\n1 2 3\n";
        assert!(parse_ply(short).is_err());
    }
}
