//! Plain-text camera matrices and 16-bit depth PNGs (ScanNet export layout).

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};
use nalgebra::{Matrix3, Matrix4};

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Extrinsics, Intrinsics};

/// Default depth scale: raw PNG value / 1000 = meters.
pub const DEFAULT_DEPTH_SCALE: f64 = 1000.0;

fn parse_numbers(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| format!("`{tok}` is not a number"))
        })
        .collect()
}

/// Parses a row-major 3x3 or 4x4 matrix and keeps its upper-left 3x3 block.
pub fn parse_intrinsic_matrix(text: &str) -> std::result::Result<Matrix3<f64>, String> {
    let nums = parse_numbers(text)?;
    let n = match nums.len() {
        9 => 3,
        16 => 4,
        other => return Err(format!("expected 9 or 16 values, found {other}")),
    };
    Ok(Matrix3::from_fn(|r, c| nums[r * n + c]))
}

/// Parses a row-major 4x4 camera-to-world pose.
pub fn parse_pose(text: &str) -> std::result::Result<Extrinsics, String> {
    let nums = parse_numbers(text)?;
    if nums.len() != 16 {
        return Err(format!("expected 16 values, found {}", nums.len()));
    }
    let m = Matrix4::from_row_slice(&nums);
    Extrinsics::from_homogeneous(&m).map_err(|e| e.to_string())
}

pub fn read_intrinsics(path: &Path, width: usize, height: usize) -> Result<Intrinsics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let k = parse_intrinsic_matrix(&text).map_err(|r| Error::format(path, r))?;
    Intrinsics::from_matrix(&k, width, height)
}

pub fn read_pose(path: &Path) -> Result<Extrinsics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose(&text).map_err(|r| Error::format(path, r))
}

fn format_rows<const N: usize>(rows: [[f64; N]; N]) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Formats intrinsics as a ScanNet-style 4x4 matrix. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn format_intrinsics(intr: &Intrinsics) -> String {
    format_rows([
        [intr.fx, 0.0, intr.cx, 0.0],
        [0.0, intr.fy, intr.cy, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

pub fn format_pose(extr: &Extrinsics) -> String {
    let m = extr.to_homogeneous();
    format_rows::<4>(std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)])))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Image dimensions `(width, height)` read from the file header only.
pub fn depth_dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((w as usize, h as usize))
}

/// Loads a 16-bit single-channel depth PNG; zero pixels are holes.
pub fn read_depth_png(path: &Path, depth_scale: f64) -> Result<DepthMap> {
    if !(depth_scale > 0.0) {
        return Err(Error::invalid("depth scale must be positive"));
    }
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = match img {
        image::DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(Error::format(
                path,
                format!("expected 16-bit grayscale, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = gray.dimensions();
    let values = gray
        .into_raw()
        .into_iter()
        .map(|raw| raw as f64 / depth_scale)
        .collect();
    DepthMap::from_values(w as usize, h as usize, values)
}

/// Quantizes a depth map to `round(depth * scale)` and writes it as 16-bit PNG.
/// Depths beyond the u16 range are clamped.
pub fn write_depth_png(path: &Path, depth: &DepthMap, depth_scale: f64) -> Result<()> {
    let raw: Vec<u16> = depth
        .values()
        .iter()
        .zip(depth.valid())
        .map(|(&d, &ok)| if ok { quantize_depth(d, depth_scale) } else { 0 })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, raw)
            .ok_or_else(|| Error::invalid("depth buffer size mismatch"))?;
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[inline]
pub fn quantize_depth(d: f64, depth_scale: f64) -> u16 {
    (d * depth_scale).round().clamp(0.0, u16::MAX as f64) as u16
}
