//! End-to-end stages shared by the command-line tool and the demo.

use rayon::prelude::*;

use crate::coverage::{voxelize_strided, SceneCoverage};
use crate::error::Result;
use crate::geometry::CameraFrame;
use crate::ingest::FrameSource;
use crate::posenc::{encode_grid, fuse, pool_patch_coords, pseudo_features, FusedEmbedding, PeKind, PoolMode};

pub const DEFAULT_PATCH_SIZE: usize = 14;
pub const DEFAULT_DIM: usize = 64;

/// Back-projects and voxelizes every frame of `src` in parallel. The result
/// keeps the source's frame order regardless of scheduling.
pub fn scene_coverage<S: FrameSource + ?Sized>(
    src: &S,
    voxel_size: f64,
    stride: usize,
) -> Result<SceneCoverage> {
    let sets = (0..src.frame_count())
        .into_par_iter()
        .map(|pos| {
            let frame = src.load_frame(pos)?;
            let cmap = frame.backproject()?;
            voxelize_strided(&cmap, voxel_size, frame.index, stride)
        })
        .collect::<Result<Vec<_>>>()?;
    SceneCoverage::new(sets, voxel_size)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeConfig {
    pub patch_size: usize,
    pub pool: PoolMode,
    pub pe: PeKind,
    pub dim: usize,
    /// Seed of the stand-in visual features.
    pub seed: u64,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig {
            patch_size: DEFAULT_PATCH_SIZE,
            pool: PoolMode::Average,
            pe: PeKind::Sinusoidal {
                grid_resolution: crate::posenc::DEFAULT_GRID_RESOLUTION,
            },
            dim: DEFAULT_DIM,
            seed: 0,
        }
    }
}

/// Pools the frame's coordinates into patches, encodes them, and adds the
/// result to the frame's pseudo visual features.
pub fn encode_frame(frame: &CameraFrame, cfg: &EncodeConfig) -> Result<FusedEmbedding> {
    let cmap = frame.backproject()?;
    let grid = pool_patch_coords(&cmap, cfg.patch_size, cfg.pool)?;
    let pe = encode_grid(&grid, cfg.dim, &cfg.pe)?;
    let visual = pseudo_features(cfg.seed, frame.index, grid.rows(), grid.cols(), cfg.dim);
    fuse(&visual, &pe, frame.index)
}
