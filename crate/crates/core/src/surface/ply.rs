//! ASCII PLY reader and writer for point clouds.
//!
//! Vertices carry `x y z` and optionally `nx ny nz`; the sensor position
//! travels in a header comment so a cloud file is self-contained.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

use super::PointCloud;

pub fn save_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let vp = cloud.sensor_viewpoint;
    let _ = writeln!(out, "comment sensor_viewpoint {} {} {}", vp.x, vp.y, vp.z);
    let _ = writeln!(out, "element vertex {}", cloud.points.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.normals.is_some() {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(normals) = &cloud.normals {
            let n = normals[i];
            let _ = write!(out, " {} {} {}", n.x, n.y, n.z);
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_ply(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)?;
    parse_ply(&text).map_err(|msg| Error::Parse(format!("{}: {msg}", path.display())))
}

fn parse_ply(text: &str) -> std::result::Result<PointCloud, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing ply magic line".into());
    }

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex_element = false;
    let mut properties: Vec<String> = Vec::new();
    let mut viewpoint = Vector3::zeros();
    let mut saw_format = false;

    for line in lines.by_ref() {
        let line = line.trim();
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                if words.next() != Some("ascii") {
                    return Err("only ascii format is supported".into());
                }
                saw_format = true;
            }
            Some("comment") => {
                let rest: Vec<&str> = words.collect();
                if rest.first() == Some(&"sensor_viewpoint") {
                    if rest.len() != 4 {
                        return Err("sensor_viewpoint comment needs 3 coordinates".into());
                    }
                    for (slot, w) in [0, 1, 2].into_iter().zip(&rest[1..]) {
                        viewpoint[slot] = w
                            .parse::<f64>()
                            .map_err(|_| format!("bad viewpoint coordinate {w:?}"))?;
                    }
                }
            }
            Some("element") => {
                let name = words.next().ok_or("element without a name")?;
                let count: usize = words
                    .next()
                    .ok_or("element without a count")?
                    .parse()
                    .map_err(|_| "bad element count")?;
                in_vertex_element = name == "vertex";
                if in_vertex_element {
                    vertex_count = Some(count);
                } else if count != 0 {
                    return Err(format!("unsupported non-empty element {name:?}"));
                }
            }
            Some("property") => {
                if in_vertex_element {
                    let _ty = words.next().ok_or("property without a type")?;
                    let name = words.next().ok_or("property without a name")?;
                    properties.push(name.to_string());
                }
            }
            Some("end_header") => break,
            Some("obj_info") | None => {}
            Some(other) => return Err(format!("unexpected header keyword {other:?}")),
        }
    }
    if !saw_format {
        return Err("missing format line".into());
    }
    let vertex_count = vertex_count.ok_or("missing vertex element")?;

    let idx = |name: &str| properties.iter().position(|p| p == name);
    let (xi, yi, zi) = match (idx("x"), idx("y"), idx("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err("vertex element must provide x y z".into()),
    };
    let normal_idx = match (idx("nx"), idx("ny"), idx("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        (None, None, None) => None,
        _ => return Err("normals must provide all of nx ny nz or none".into()),
    };

    let mut points = Vec::with_capacity(vertex_count);
    let mut normals = normal_idx.map(|_| Vec::with_capacity(vertex_count));
    for line in lines {
        if points.len() == vertex_count {
            break;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>().map_err(|_| format!("bad number {w:?}")))
            .collect::<std::result::Result<_, _>>()?;
        if values.len() < properties.len() {
            return Err(format!(
                "vertex row has {} values, header declares {}",
                values.len(),
                properties.len()
            ));
        }
        points.push(Vector3::new(values[xi], values[yi], values[zi]));
        if let (Some(ns), Some((a, b, c))) = (&mut normals, normal_idx) {
            ns.push(Vector3::new(values[a], values[b], values[c]));
        }
    }
    if points.len() != vertex_count {
        return Err(format!(
            "expected {vertex_count} vertices, found {}",
            points.len()
        ));
    }

    Ok(PointCloud {
        points,
        normals,
        sensor_viewpoint: viewpoint,
    })
}
