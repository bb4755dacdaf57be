//! Patch-level coordinate pooling, 3D position encoding, and fusion with
//! visual embeddings.
//!
//! The sinusoidal encoding discretizes each axis with `floor(v / grid_resolution)`
//! and encodes it into a block of `b = floor(d / 3)` dims: offset `k` holds
//! `sin` for even `k` and `cos` for odd `k`, at angle `v / 10000^(2*floor(k/2)/b)`.
//! Blocks are concatenated `x | y | z` and the remaining `d - 3b` dims are zero.
//! When `b` is odd the last offset of each block is an unpaired `sin`.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CoordinateMap;
use crate::mlp::Mlp;
use crate::tensor::Tensor3;

/// Default PE grid step in meters.
pub const DEFAULT_GRID_RESOLUTION: f64 = 0.02;
pub const MIN_PE_DIM: usize = 6;
const PE_BASE: f64 = 10000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolMode {
    #[serde(rename = "avg")]
    Average,
    #[serde(rename = "center")]
    Center,
    #[serde(rename = "minmax")]
    MinMax,
}

impl PoolMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            PoolMode::Average => "avg",
            PoolMode::Center => "center",
            PoolMode::MinMax => "minmax",
        }
    }

    /// Coordinate channels per patch.
    pub fn channels(&self) -> usize {
        match self {
            PoolMode::MinMax => 6,
            _ => 3,
        }
    }
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" | "average" => Ok(PoolMode::Average),
            "center" => Ok(PoolMode::Center),
            "minmax" | "min-max" => Ok(PoolMode::MinMax),
            other => Err(Error::invalid(format!("unknown pooling mode `{other}`"))),
        }
    }
}

/// Per-patch aggregated coordinates, `rows x cols x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCoordGrid {
    rows: usize,
    cols: usize,
    patch_size: usize,
    mode: PoolMode,
    coords: Vec<f64>,
    valid: Vec<bool>,
}

impl PatchCoordGrid {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn mode(&self) -> PoolMode {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.mode.channels()
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, r: usize, c: usize) -> Option<&[f64]> {
        let k = r * self.cols + c;
        let ch = self.channels();
        self.valid[k].then(|| &self.coords[k * ch..(k + 1) * ch])
    }
}

/// Patch grid shape `(floor(H / P), floor(W / P))`.
pub fn patch_grid_shape(height: usize, width: usize, patch_size: usize) -> Result<(usize, usize)> {
    if patch_size == 0 {
        return Err(Error::invalid("patch size must be at least 1"));
    }
    if height < patch_size || width < patch_size {
        return Err(Error::invalid(format!(
            "{height}x{width} image is smaller than one {patch_size}x{patch_size} patch"
        )));
    }
    Ok((height / patch_size, width / patch_size))
}

/// Aggregates world coordinates over each `P x P` patch. Averages divide by the
/// patch's valid-pixel count; patches without valid pixels are invalid. Pixels
/// past the last full patch row or column are ignored.
pub fn pool_patch_coords(
    cmap: &CoordinateMap,
    patch_size: usize,
    mode: PoolMode,
) -> Result<PatchCoordGrid> {
    let (rows, cols) = patch_grid_shape(cmap.height(), cmap.width(), patch_size)?;
    let ch = mode.channels();
    let mut coords = vec![0.0; rows * cols * ch];
    let mut valid = vec![false; rows * cols];
    let p = patch_size;
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            let out = &mut coords[k * ch..(k + 1) * ch];
            let pixels = (r * p..(r + 1) * p)
                .flat_map(|i| (c * p..(c + 1) * p).map(move |j| (i, j)))
                .filter_map(|(i, j)| cmap.get(i, j));
            valid[k] = match mode {
                PoolMode::Average => {
                    let mut sum = [0.0; 3];
                    let mut n = 0usize;
                    for q in pixels {
                        for a in 0..3 {
                            sum[a] += q[a];
                        }
                        n += 1;
                    }
                    if n > 0 {
                        for a in 0..3 {
                            out[a] = sum[a] / n as f64;
                        }
                    }
                    n > 0
                }
                PoolMode::Center => match cmap.get(r * p + p / 2, c * p + p / 2) {
                    Some(q) => {
                        out.copy_from_slice(&q);
                        true
                    }
                    None => false,
                },
                PoolMode::MinMax => {
                    let mut lo = [f64::INFINITY; 3];
                    let mut hi = [f64::NEG_INFINITY; 3];
                    let mut any = false;
                    for q in pixels {
                        for a in 0..3 {
                            lo[a] = lo[a].min(q[a]);
                            hi[a] = hi[a].max(q[a]);
                        }
                        any = true;
                    }
                    if any {
                        out[..3].copy_from_slice(&lo);
                        out[3..].copy_from_slice(&hi);
                    }
                    any
                }
            };
        }
    }
    Ok(PatchCoordGrid {
        rows,
        cols,
        patch_size,
        mode,
        coords,
        valid,
    })
}

fn encode_axis(value: f64, out: &mut [f64]) {
    let b = out.len() as f64;
    for (k, slot) in out.iter_mut().enumerate() {
        let exponent = (2 * (k / 2)) as f64 / b;
        let angle = value / PE_BASE.powf(exponent);
        *slot = if k % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

fn check_pe_args(d: usize, grid_resolution: f64) -> Result<()> {
    if d < MIN_PE_DIM {
        return Err(Error::invalid(format!(
            "position encoding needs at least {MIN_PE_DIM} dims, got {d}"
        )));
    }
    if !(grid_resolution > 0.0 && grid_resolution.is_finite()) {
        return Err(Error::invalid(format!(
            "grid resolution must be positive, got {grid_resolution}"
        )));
    }
    Ok(())
}

/// Encodes `coords` (already in grid units) into consecutive blocks of
/// `block` dims each, leaving the tail of `out` zero.
fn encode_blocks(cells: &[f64], block: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (a, &v) in cells.iter().enumerate() {
        encode_axis(v, &mut out[a * block..(a + 1) * block]);
    }
}

/// Sinusoidal encoding of one 3D point.
pub fn sinusoidal_pe(coord: [f64; 3], d: usize, grid_resolution: f64) -> Result<Vec<f64>> {
    check_pe_args(d, grid_resolution)?;
    let cells = coord.map(|v| (v / grid_resolution).floor());
    let mut out = vec![0.0; d];
    encode_blocks(&cells, d / 3, &mut out);
    Ok(out)
}

/// Encodes a `(min, max)` pair as six blocks of `floor(d / 6)` dims,
/// `min x | min y | min z | max x | max y | max z`.
pub fn sinusoidal_pe_minmax(
    min: [f64; 3],
    max: [f64; 3],
    d: usize,
    grid_resolution: f64,
) -> Result<Vec<f64>> {
    check_pe_args(d, grid_resolution)?;
    let cells: Vec<f64> = min
        .iter()
        .chain(&max)
        .map(|v| (v / grid_resolution).floor())
        .collect();
    let mut out = vec![0.0; d];
    encode_blocks(&cells, d / 6, &mut out);
    Ok(out)
}

/// Learned alternative: the MLP maps raw coordinates (meters) to `d` dims.
pub fn mlp_pe(coord: &[f64], weights: &Mlp) -> Result<Vec<f64>> {
    weights.forward(coord)
}

/// How patch coordinates become position embeddings.
#[derive(Debug, Clone, PartialEq)]
pub enum PeKind {
    Sinusoidal { grid_resolution: f64 },
    Mlp(Mlp),
    /// No position signal; encodes to zeros.
    None,
}

impl PeKind {
    pub fn name(&self) -> &'static str {
        match self {
            PeKind::Sinusoidal { .. } => "sin",
            PeKind::Mlp(_) => "mlp",
            PeKind::None => "none",
        }
    }

    pub fn grid_resolution(&self) -> f64 {
        match self {
            PeKind::Sinusoidal { grid_resolution } => *grid_resolution,
            _ => 0.0,
        }
    }
}

/// Position embeddings for a patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionEncoding {
    pub values: Tensor3,
    pub grid_resolution: f64,
}

/// Encodes every valid patch of `grid`; invalid patches get a zero vector.
pub fn encode_grid(grid: &PatchCoordGrid, d: usize, kind: &PeKind) -> Result<PositionEncoding> {
    let mut values = Tensor3::zeros(grid.rows, grid.cols, d);
    match kind {
        PeKind::None => {}
        PeKind::Sinusoidal { grid_resolution } => {
            check_pe_args(d, *grid_resolution)?;
            let block = d / grid.channels();
            let mut scratch = vec![0.0; d];
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    let Some(q) = grid.get(r, c) else { continue };
                    let cells: Vec<f64> =
                        q.iter().map(|v| (v / grid_resolution).floor()).collect();
                    encode_blocks(&cells, block, &mut scratch);
                    for (dst, src) in values.cell_mut(r, c).iter_mut().zip(&scratch) {
                        *dst = *src as f32;
                    }
                }
            }
        }
        PeKind::Mlp(mlp) => {
            if mlp.input_dim() != grid.channels() || mlp.output_dim() != d {
                return Err(Error::invalid(format!(
                    "MLP encoder is {}->{} but the grid needs {}->{}",
                    mlp.input_dim(),
                    mlp.output_dim(),
                    grid.channels(),
                    d
                )));
            }
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    let Some(q) = grid.get(r, c) else { continue };
                    let e = mlp.forward(q)?;
                    for (dst, src) in values.cell_mut(r, c).iter_mut().zip(&e) {
                        *dst = *src as f32;
                    }
                }
            }
        }
    }
    Ok(PositionEncoding {
        values,
        grid_resolution: kind.grid_resolution(),
    })
}

/// Visual plus positional embedding for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbedding {
    pub values: Tensor3,
    pub source_frame: u32,
}

pub fn fuse(visual: &Tensor3, pe: &PositionEncoding, source_frame: u32) -> Result<FusedEmbedding> {
    if visual.shape() != pe.values.shape() {
        return Err(Error::invalid(format!(
            "visual embedding shape {:?} does not match position encoding {:?}",
            visual.shape(),
            pe.values.shape()
        )));
    }
    let data = visual
        .data()
        .iter()
        .zip(pe.values.data())
        .map(|(v, p)| v + p)
        .collect();
    let [r, c, d] = visual.shape();
    Ok(FusedEmbedding {
        values: Tensor3::from_vec(r, c, d, data)?,
        source_frame,
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stand-in for image-encoder output: each patch's vector is drawn
/// uniformly from `[-1, 1)` by a generator keyed on `(seed, frame, patch)`.
pub fn pseudo_features(seed: u64, frame: u32, rows: usize, cols: usize, d: usize) -> Tensor3 {
    let mut t = Tensor3::zeros(rows, cols, d);
    let frame_key = splitmix64(seed ^ splitmix64(frame as u64));
    for r in 0..rows {
        for c in 0..cols {
            let patch = (r * cols + c) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(frame_key ^ patch));
            for v in t.cell_mut(r, c) {
                *v = rng.gen_range(-1.0f32..1.0);
            }
        }
    }
    t
}
