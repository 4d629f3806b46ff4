//! Image, depth-map and point-cloud files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{ImageBuffer, Rgb, Rgba};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an `h x w x 3` image with values in `[0, 1]` as 8-bit PNG.
pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    assert_eq!(rgb.len(), width * height * 3);
    let img = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        let i = (y as usize * width + x as usize) * 3;
        Rgb([to_u8(rgb[i]), to_u8(rgb[i + 1]), to_u8(rgb[i + 2])])
    });
    img.save(path)?;
    Ok(())
}

/// Writes an RGBA PNG from `[0, 1]` color and alpha planes.
pub fn write_rgba_png(path: &Path, width: usize, height: usize, rgb: &[f64], alpha: &[f64]) -> Result<()> {
    let img = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        let p = y as usize * width + x as usize;
        Rgba([to_u8(rgb[3 * p]), to_u8(rgb[3 * p + 1]), to_u8(rgb[3 * p + 2]), to_u8(alpha[p])])
    });
    img.save(path)?;
    Ok(())
}

/// Writes unit vectors as a PNG with `[-1, 1]` mapped to `[0, 1]`; zero vectors map to black.
pub fn write_normal_png(path: &Path, width: usize, height: usize, normals: &[f64]) -> Result<()> {
    let mapped: Vec<f64> = normals
        .chunks_exact(3)
        .flat_map(|n| {
            if n.iter().all(|&v| v == 0.0) {
                [0.0; 3]
            } else {
                [0.5 * (n[0] + 1.0), 0.5 * (n[1] + 1.0), 0.5 * (n[2] + 1.0)]
            }
        })
        .collect();
    write_rgb_png(path, width, height, &mapped)
}

/// A decoded image: `rgb` is `h x w x 3` in `[0, 1]`, `alpha` is `h x w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub fn read_png(path: &Path) -> Result<LoadedImage> {
    let img = image::open(path)?.to_rgba8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut alpha = Vec::with_capacity(w * h);
    for p in img.pixels() {
        rgb.extend(p.0[..3].iter().map(|&v| v as f64 / 255.0));
        alpha.push(p.0[3] as f64 / 255.0);
    }
    Ok(LoadedImage {
        width: w,
        height: h,
        rgb,
        alpha,
    })
}

/// Sidecar describing a raw depth map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthHeader {
    pub width: usize,
    pub height: usize,
    pub units: String,
    pub dtype: String,
}

/// Writes little-endian `f32` depth to `path` and a `.json` sidecar next to it.
pub fn write_depth(path: &Path, width: usize, height: usize, depth: &[f64]) -> Result<()> {
    assert_eq!(depth.len(), width * height);
    let mut bytes = Vec::with_capacity(depth.len() * 4);
    for &d in depth {
        bytes.extend_from_slice(&(d as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    let header = DepthHeader {
        width,
        height,
        units: "scene".into(),
        dtype: "f32".into(),
    };
    fs::write(path.with_extension("json"), serde_json::to_vec_pretty(&header)?)?;
    Ok(())
}

pub fn read_depth(path: &Path) -> Result<(DepthHeader, Vec<f64>)> {
    let header: DepthHeader = serde_json::from_slice(&fs::read(path.with_extension("json"))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() != header.width * header.height * 4 {
        return Err(Error::Dataset {
            file: path.to_path_buf(),
            field: "data".into(),
            message: format!("expected {} bytes, found {}", header.width * header.height * 4, bytes.len()),
        });
    }
    let d = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((header, d))
}

pub fn write_ply_points(path: &Path, points: &[[f64; 3]]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", points.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z\nend_header")?;
    for p in points {
        writeln!(w, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32)?;
    }
    w.flush()?;
    Ok(())
}
