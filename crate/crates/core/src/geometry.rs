//! Pinhole camera model and depth back-projection.
//!
//! Pixels are addressed as `(i, j)` = (row, column). A pixel back-projects
//! from its integer coordinates through the homogeneous vector `[j, i, 1]`,
//! and poses are camera-to-world.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Tolerance used when validating that a rotation is orthonormal.
pub const ROTATION_TOLERANCE: f64 = 1e-5;

/// Pinhole intrinsics: focal lengths and principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Builds intrinsics from the upper-left 3x3 block of a calibration matrix.
    pub fn from_matrix(k: &Matrix3<f64>, width: usize, height: usize) -> Result<Self> {
        Self::new(k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)], width, height)
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// `K⁻¹ · [j, i, 1]ᵀ`, the camera-space ray through pixel `(i, j)` at unit depth.
    #[inline]
    pub fn unproject_unit(&self, i: f64, j: f64) -> Vector3<f64> {
        Vector3::new((j - self.cx) / self.fx, (i - self.cy) / self.fy, 1.0)
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !translation.iter().all(|v| v.is_finite()) || !rotation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pose contains non-finite entries"));
        }
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if ortho_err > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::invalid(format!(
                "rotation is not a proper rotation (orthonormality error {ortho_err:.3e}, det {det:.6})"
            )));
        }
        Ok(Extrinsics {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Extrinsics {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Extrinsics {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Validates the rotation block of a homogeneous 4x4 pose.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid(format!(
                "pose bottom row must be [0 0 0 1], got {bottom:?}"
            )));
        }
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(rotation, translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Extrinsics {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Depth image in meters with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Wraps raw depths. Non-positive and non-finite values become invalid and are zeroed.
    pub fn from_values(width: usize, height: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "depth buffer has {} values, expected {}x{}",
                values.len(),
                height,
                width
            )));
        }
        let valid: Vec<bool> = values
            .iter_mut()
            .map(|v| {
                let ok = v.is_finite() && *v > 0.0;
                if !ok {
                    *v = 0.0;
                }
                ok
            })
            .collect();
        Ok(DepthMap {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.width + j;
        self.valid[k].then(|| self.values[k])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Per-pixel world coordinates produced by [`backproject`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMap {
    width: usize,
    height: usize,
    coords: Vec<[f64; 3]>,
    valid: Vec<bool>,
}

impl CoordinateMap {
    /// Builds a map directly; invalid entries are forced to the zero vector.
    pub fn from_parts(
        width: usize,
        height: usize,
        mut coords: Vec<[f64; 3]>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if coords.len() != width * height || valid.len() != width * height {
            return Err(Error::invalid("coordinate map buffers do not match its shape"));
        }
        for (c, &ok) in coords.iter_mut().zip(&valid) {
            if !ok {
                *c = [0.0; 3];
            } else if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("valid coordinate is not finite"));
            }
        }
        Ok(CoordinateMap {
            width,
            height,
            coords,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<[f64; 3]> {
        let k = i * self.width + j;
        self.valid[k].then(|| self.coords[k])
    }

    /// Iterates `(i, j, coord)` over valid pixels in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, [f64; 3])> + '_ {
        let w = self.width;
        self.coords
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter(|(_, (_, ok))| **ok)
            .map(move |(k, (c, _))| (k / w, k % w, *c))
    }
}

/// One RGB-D observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub index: u32,
    pub depth: DepthMap,
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    pub rgb_path: Option<String>,
}

impl CameraFrame {
    pub fn new(
        index: u32,
        depth: DepthMap,
        intrinsics: Intrinsics,
        extrinsics: Extrinsics,
    ) -> Result<Self> {
        check_dims(&depth, &intrinsics)?;
        Ok(CameraFrame {
            index,
            depth,
            intrinsics,
            extrinsics,
            rgb_path: None,
        })
    }

    pub fn backproject(&self) -> Result<CoordinateMap> {
        backproject(&self.depth, &self.intrinsics, &self.extrinsics)
    }
}

fn check_dims(depth: &DepthMap, intr: &Intrinsics) -> Result<()> {
    if depth.width != intr.width || depth.height != intr.height {
        return Err(Error::invalid(format!(
            "depth map is {}x{} but intrinsics describe {}x{}",
            depth.height, depth.width, intr.height, intr.width
        )));
    }
    Ok(())
}

/// World coordinate of pixel `(i, j)` observed at depth `d`.
#[inline]
pub fn backproject_pixel(
    i: usize,
    j: usize,
    d: f64,
    intr: &Intrinsics,
    extr: &Extrinsics,
) -> Vector3<f64> {
    let cam = intr.unproject_unit(i as f64, j as f64) * d;
    extr.transform_point(&cam)
}

/// Lifts every valid depth pixel to world coordinates.
pub fn backproject(depth: &DepthMap, intr: &Intrinsics, extr: &Extrinsics) -> Result<CoordinateMap> {
    check_dims(depth, intr)?;
    let (w, h) = (depth.width, depth.height);
    let mut coords = vec![[0.0; 3]; w * h];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            if depth.valid[k] {
                let p = backproject_pixel(i, j, depth.values[k], intr, extr);
                coords[k] = [p.x, p.y, p.z];
            }
        }
    }
    Ok(CoordinateMap {
        width: w,
        height: h,
        coords,
        valid: depth.valid.clone(),
    })
}

/// Projects a world point into the image, returning `(u, v, depth)` where
/// `u` is the column and `v` the row. A non-positive depth means the point
/// lies behind the camera and `u`, `v` carry no meaning.
pub fn project(point: &Vector3<f64>, intr: &Intrinsics, extr: &Extrinsics) -> (f64, f64, f64) {
    let cam = extr.rotation.transpose() * (point - extr.translation);
    let z = cam.z;
    let u = intr.fx * cam.x / z + intr.cx;
    let v = intr.fy * cam.y / z + intr.cy;
    (u, v, z)
}
