//! File formats: ASCII PLY point clouds, raw float32 depth maps and feature
//! matrices with JSON sidecars, and binary PGM masks.
//!
//! Sidecars share the data file's stem with a `.json` extension, so
//! `view.bin` is described by `view.json`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::descriptor::FeatureSet;
use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CameraIntrinsics, DepthMap, PointCloud};

pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let err = |msg: String| Error::parse(path, msg);

    let magic = lines.next().transpose()?.unwrap_or_default();
    if magic.trim() != "ply" {
        return Err(err("missing `ply` magic line".into()));
    }
    let mut vertex_count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = lines
            .next()
            .transpose()?
            .ok_or_else(|| err("unexpected end of header".into()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", "1.0"] => {}
            ["format", other, ..] => return Err(err(format!("unsupported PLY format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                if vertex_count.is_some() {
                    return Err(err("duplicate vertex element".into()));
                }
                vertex_count = Some(n.parse().map_err(|_| err(format!("bad vertex count `{n}`")))?);
                in_vertex = true;
            }
            ["element", name, _] => {
                if vertex_count.is_none() {
                    return Err(err(format!("element `{name}` before vertex is not supported")));
                }
                in_vertex = false;
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(err("list properties on vertices are not supported".into()));
                }
            }
            ["property", _ty, name] => {
                if in_vertex {
                    props.push((*name).to_string());
                }
            }
            ["end_header"] => break,
            _ => return Err(err(format!("unrecognized header line `{line}`"))),
        }
    }
    let n = vertex_count.ok_or_else(|| err("no vertex element".into()))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(err("vertex element lacks x/y/z".into())),
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(if normal_cols.is_some() { n } else { 0 });
    let mut read = 0;
    while read < n {
        let line = lines
            .next()
            .transpose()?
            .ok_or_else(|| err(format!("expected {n} vertices, found {read}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(format!("vertex {read}: {e}")))?;
        if vals.len() < props.len() {
            return Err(err(format!("vertex {read} has {} values, expected {}", vals.len(), props.len())));
        }
        points.push(Vector3::new(vals[xi], vals[yi], vals[zi]));
        if let Some((a, b, c)) = normal_cols {
            let v = Vector3::new(vals[a], vals[b], vals[c]);
            let norm = v.norm();
            normals.push(if norm > 0.0 { v / norm } else { v });
        }
        read += 1;
    }
    if normal_cols.is_some() {
        PointCloud::with_normals(points, normals)
    } else {
        PointCloud::new(points)
    }
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    if cloud.normals().is_some() {
        for axis in ["nx", "ny", "nz"] {
            writeln!(w, "property float {axis}")?;
        }
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points().iter().enumerate() {
        match cloud.normals() {
            Some(ns) => {
                let n = ns[i];
                writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)?
            }
            None => writeln!(w, "{} {} {}", p.x, p.y, p.z)?,
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DepthHeader {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

fn read_f32_le(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(Error::parse(
            path,
            format!("expected {} bytes, found {}", expected * 4, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_f32_le(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a raw little-endian float32 depth map and its sidecar header.
pub fn read_depth(path: &Path) -> Result<(DepthMap, CameraIntrinsics)> {
    let header: DepthHeader = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let raw = read_f32_le(path, header.width * header.height)?;
    let depth = DepthMap::new(header.width, header.height, raw.into_iter().map(f64::from).collect())?;
    let k = CameraIntrinsics::new(header.fx, header.fy, header.cx, header.cy)?;
    Ok((depth, k))
}

pub fn write_depth(path: &Path, depth: &DepthMap, k: &CameraIntrinsics) -> Result<()> {
    write_f32_le(path, depth.values().iter().copied())?;
    let header = DepthHeader {
        width: depth.width(),
        height: depth.height(),
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct MatrixHeader {
    pub rows: usize,
    pub cols: usize,
}

/// Reads an N×d little-endian float32 matrix with its `{rows, cols}` sidecar.
pub fn read_feature_file(path: &Path) -> Result<FeatureSet> {
    let header: MatrixHeader = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let raw = read_f32_le(path, header.rows * header.cols)?;
    FeatureSet::new(DMatrix::from_row_iterator(
        header.rows,
        header.cols,
        raw.into_iter().map(f64::from),
    ))
}

pub fn write_feature_file(path: &Path, features: &DMatrix<f64>) -> Result<()> {
    let (rows, cols) = features.shape();
    write_f32_le(path, (0..rows).flat_map(|i| (0..cols).map(move |j| features[(i, j)])))?;
    fs::write(
        sidecar_path(path),
        serde_json::to_string(&MatrixHeader { rows, cols })?,
    )?;
    Ok(())
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Binary PGM (P5); any non-zero sample is masked.
pub fn read_pgm_mask(path: &Path) -> Result<BinaryMask> {
    let bytes = fs::read(path)?;
    let err = |m: &str| Error::parse(path, m.to_string());
    let mut pos = 0;
    if pgm_token(&bytes, &mut pos).as_deref() != Some("P5") {
        return Err(err("not a binary PGM (P5)"));
    }
    let mut num = || -> Result<usize> {
        pgm_token(&bytes, &mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err("bad PGM header"))
    };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if maxval == 0 || maxval > 65535 {
        return Err(err("PGM maxval out of range"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let sample = if maxval < 256 { 1 } else { 2 };
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() < w * h * sample {
        return Err(err("PGM raster is truncated"));
    }
    let bits = raster
        .chunks_exact(sample)
        .take(w * h)
        .map(|c| c.iter().any(|b| *b != 0))
        .collect();
    BinaryMask::new(w, h, bits)
}

pub fn write_pgm_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", mask.width(), mask.height())?;
    let raster: Vec<u8> = mask.bits().iter().map(|b| if *b { 255 } else { 0 }).collect();
    w.write_all(&raster)?;
    w.flush()?;
    Ok(())
}
