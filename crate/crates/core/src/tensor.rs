//! Dense `rows x cols x dim` f32 tensors and their on-disk form: a raw
//! little-endian row-major `.bin` plus a JSON sidecar describing it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(rows: usize, cols: usize, dim: usize) -> Self {
        Tensor3 {
            rows,
            cols,
            dim,
            data: vec![0.0; rows * cols * dim],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols * dim {
            return Err(Error::invalid(format!(
                "tensor data has {} values, expected {rows}x{cols}x{dim}",
                data.len()
            )));
        }
        Ok(Tensor3 {
            rows,
            cols,
            dim,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.rows, self.cols, self.dim]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn cell(&self, r: usize, c: usize) -> &[f32] {
        let start = (r * self.cols + c) * self.dim;
        &self.data[start..start + self.dim]
    }

    #[inline]
    pub fn cell_mut(&mut self, r: usize, c: usize) -> &mut [f32] {
        let start = (r * self.cols + c) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub frame: u32,
    pub mode: String,
    pub grid_resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub order: String,
    pub meta: TensorMeta,
}

impl TensorHeader {
    pub fn for_tensor(t: &Tensor3, meta: TensorMeta) -> Self {
        TensorHeader {
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            order: "row-major".into(),
            meta,
        }
    }
}

/// Sidecar path for a tensor binary: `x.bin` -> `x.json`.
pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn write_tensor(bin: &Path, tensor: &Tensor3, meta: TensorMeta) -> Result<()> {
    crate::io::write_atomic(bin, &tensor.to_le_bytes())?;
    crate::io::write_json(&sidecar_path(bin), &TensorHeader::for_tensor(tensor, meta))
}

pub fn read_tensor(bin: &Path) -> Result<(Tensor3, TensorHeader)> {
    let side = sidecar_path(bin);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let header: TensorHeader = serde_json::from_str(&text)?;
    if header.dtype != "f32" || header.order != "row-major" || header.shape.len() != 3 {
        return Err(Error::format(&side, "expected a 3-d row-major f32 tensor"));
    }
    let bytes = std::fs::read(bin).map_err(|e| Error::io(bin, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(bin, "length is not a multiple of 4"));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let [r, c, d] = [header.shape[0], header.shape[1], header.shape[2]];
    let t = Tensor3::from_vec(r, c, d, data).map_err(|e| Error::format(bin, e.to_string()))?;
    Ok((t, header))
}
