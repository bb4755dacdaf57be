//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function has a plain-Rust twin that returns `Result` so the
//! logic can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use scene_sampler::coverage::DEFAULT_VOXEL_SIZE;
use scene_sampler::ingest::{generate_synthetic, render_depth, SyntheticScene, SyntheticSceneSpec};
use scene_sampler::pipeline::scene_coverage;
use scene_sampler::posenc::sinusoidal_pe;
use scene_sampler::sampler::{sample, SamplerConfig, SamplingResult};

// keep the demo responsive: small frames, bounded frame counts
const DEMO_WIDTH: usize = 64;
const DEMO_HEIGHT: usize = 48;
const MAX_FRAMES: usize = 400;

#[derive(Debug, Serialize)]
pub struct Run {
    pub selected: Vec<u32>,
    pub trajectory: Vec<f64>,
    pub final_ratio: f64,
}

#[derive(Debug, Serialize)]
pub struct Camera {
    pub x: f64,
    pub y: f64,
    /// Viewing direction projected on the floor plane.
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Serialize)]
pub struct Footprint {
    pub id: i64,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Serialize)]
pub struct CoverageDemo {
    pub scene_id: String,
    pub voxels: usize,
    pub room_min: [f64; 2],
    pub room_max: [f64; 2],
    pub objects: Vec<Footprint>,
    pub cameras: Vec<Camera>,
    pub mc: Run,
    pub mc_adaptive: Run,
    pub uniform: Run,
}

fn spec(seed: u64, n_frames: usize) -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        seed,
        n_frames,
        width: DEMO_WIDTH,
        height: DEMO_HEIGHT,
        ..SyntheticSceneSpec::default()
    }
}

fn scene(seed: u64, n_frames: usize) -> Result<SyntheticScene, String> {
    if n_frames == 0 || n_frames > MAX_FRAMES {
        return Err(format!("frame count must be in 1..={MAX_FRAMES}"));
    }
    generate_synthetic(&spec(seed, n_frames)).map_err(|e| e.to_string())
}

fn to_run(r: SamplingResult, universe: usize) -> Run {
    Run {
        trajectory: r
            .covered_after_each
            .iter()
            .map(|&c| c as f64 / universe.max(1) as f64)
            .collect(),
        selected: r.selected,
        final_ratio: r.final_ratio,
    }
}

/// Max-coverage, adaptive and uniform selection on one synthetic scene,
/// with a top-down layout of the room, boxes and camera path.
pub fn coverage_demo_data(seed: u64, n_frames: usize, budget: usize) -> Result<CoverageDemo, String> {
    let sc = scene(seed, n_frames)?;
    let cov = scene_coverage(&sc, DEFAULT_VOXEL_SIZE, 1).map_err(|e| e.to_string())?;
    let universe = cov.universe().len();
    let run = |cfg: SamplerConfig| -> Result<Run, String> {
        sample(&cov, &cfg).map(|r| to_run(r, universe)).map_err(|e| e.to_string())
    };
    let budget = budget.max(1);
    Ok(CoverageDemo {
        scene_id: sc.scene_id.clone(),
        voxels: universe,
        room_min: [sc.room_min[0], sc.room_min[1]],
        room_max: [sc.room_max[0], sc.room_max[1]],
        objects: sc
            .objects
            .iter()
            .map(|o| Footprint {
                id: o.id,
                min: [o.min_corner()[0], o.min_corner()[1]],
                max: [o.max_corner()[0], o.max_corner()[1]],
            })
            .collect(),
        cameras: sc
            .frames
            .iter()
            .map(|f| {
                let fwd = f.extrinsics.rotation.column(2);
                let n = fwd.x.hypot(fwd.y).max(1e-12);
                Camera {
                    x: f.extrinsics.translation.x,
                    y: f.extrinsics.translation.y,
                    dx: fwd.x / n,
                    dy: fwd.y / n,
                }
            })
            .collect(),
        mc: run(SamplerConfig::max_coverage(budget))?,
        mc_adaptive: run(SamplerConfig::adaptive())?,
        uniform: run(SamplerConfig::uniform(budget))?,
    })
}

/// Cosine similarity between the encoding of `(x, y, z)` and the encodings of
/// a `size x size` grid over `[x - half, x + half] x [y - half, y + half]` at
/// height `z`, row-major with y increasing downwards.
pub fn pe_similarity_data(
    x: f64,
    y: f64,
    z: f64,
    half: f64,
    size: usize,
    d: usize,
    grid_res: f64,
) -> Result<Vec<f64>, String> {
    if size == 0 || size > 512 || !(half > 0.0) {
        return Err("grid size must be in 1..=512 and the half-width positive".into());
    }
    let anchor = sinusoidal_pe([x, y, z], d, grid_res).map_err(|e| e.to_string())?;
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let na = norm(&anchor);
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let step = |k: usize| -half + 2.0 * half * (k as f64 + 0.5) / size as f64;
            let p = sinusoidal_pe([x + step(c), y + step(r), z], d, grid_res).map_err(|e| e.to_string())?;
            let dot: f64 = anchor.iter().zip(&p).map(|(a, b)| a * b).sum();
            out.push(dot / (na * norm(&p)).max(1e-12));
        }
    }
    Ok(out)
}

/// Depth image of one frame of a synthetic scene, row-major, 0 for holes.
pub fn depth_frame_data(seed: u64, n_frames: usize, frame: usize, width: usize, height: usize) -> Result<Vec<f32>, String> {
    let sc = scene(seed, n_frames)?;
    let f = sc
        .frames
        .get(frame)
        .ok_or_else(|| format!("frame {frame} out of range (scene has {n_frames})"))?;
    if width == 0 || height == 0 || width > 1024 || height > 768 {
        return Err("image size must be within 1024x768".into());
    }
    // same camera model scaled to the requested resolution
    let k = sc.intrinsics;
    let intr = scene_sampler::geometry::Intrinsics::new(
        k.fx * width as f64 / k.width as f64,
        k.fy * height as f64 / k.height as f64,
        k.cx * width as f64 / k.width as f64,
        k.cy * height as f64 / k.height as f64,
        width,
        height,
    )
    .map_err(|e| e.to_string())?;
    let (depth, _) = render_depth(&intr, &f.extrinsics, Some((sc.room_min, sc.room_max)), &sc.objects, None)
        .map_err(|e| e.to_string())?;
    Ok(depth.values().iter().map(|&v| v as f32).collect())
}

#[wasm_bindgen]
pub fn coverage_demo(seed: u32, n_frames: u32, budget: u32) -> Result<String, JsError> {
    let data = coverage_demo_data(seed as u64, n_frames as usize, budget as usize).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&data).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn pe_similarity(x: f64, y: f64, z: f64, half: f64, size: u32, d: u32, grid_res: f64) -> Result<Vec<f64>, JsError> {
    pe_similarity_data(x, y, z, half, size as usize, d as usize, grid_res).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn depth_frame(seed: u32, n_frames: u32, frame: u32, width: u32, height: u32) -> Result<Vec<f32>, JsError> {
    depth_frame_data(seed as u64, n_frames as usize, frame as usize, width as usize, height as usize)
        .map_err(|e| JsError::new(&e))
}
