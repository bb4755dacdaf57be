use std::path::Path;
use std::time::Instant;

use scene_sampler::coverage::{read_cache, write_cache, SceneCoverage};
use scene_sampler::ingest::{load_scene, FrameSource, SceneManifest};
use scene_sampler::io::write_json;
use scene_sampler::pipeline::scene_coverage;
use scene_sampler::sampler::{sample, SamplingReport};
use scene_sampler::Result;

use crate::config::Settings;
use crate::scenes::{resolve, run_batch, Status};

pub const REPORT_FILE: &str = "sampling.json";
pub const CACHE_FILE: &str = "voxels.v3dc";

/// Loads the voxel cache if it was built for exactly these frames at this
/// voxel size, otherwise voxelizes the scene and rewrites the cache.
pub fn cached_coverage(manifest: &SceneManifest, s: &Settings, cache: &Path) -> Result<SceneCoverage> {
    if cache.is_file() {
        match read_cache(cache) {
            Ok(c)
                if c.voxel_size() == s.voxel_size
                    && c.frames().iter().map(|f| f.frame_index).eq(manifest.frames.iter().map(|f| f.index)) =>
            {
                log::info!("{}: reusing {}", manifest.scene_id, cache.display());
                return Ok(c);
            }
            Ok(_) => log::info!("{}: cache is stale, rebuilding", manifest.scene_id),
            Err(e) => log::warn!("{}: ignoring unreadable cache: {e}", manifest.scene_id),
        }
    }
    let cov = scene_coverage(manifest, s.voxel_size, s.stride)?;
    write_cache(cache, &cov)?;
    Ok(cov)
}

pub struct SceneSummary {
    pub frames: usize,
    pub selected: usize,
    pub ratio: f64,
    pub skipped_frames: usize,
}

pub fn sample_scene(root: &Path, id: &str, s: &Settings, omit_timings: bool) -> Result<SceneSummary> {
    let manifest = load_scene(root, id, s.depth_scale)?;
    let dst = s.out.join(id);
    let cov = cached_coverage(&manifest, s, &dst.join(CACHE_FILE))?;
    let cfg = s.sampler()?;
    let start = Instant::now();
    let result = sample(&cov, &cfg)?;
    let elapsed_ms = if omit_timings {
        0.0
    } else {
        start.elapsed().as_secs_f64() * 1e3
    };
    let summary = SceneSummary {
        frames: manifest.frame_count(),
        selected: result.selected.len(),
        ratio: result.final_ratio,
        skipped_frames: manifest.warnings.len(),
    };
    let report = SamplingReport::new(id, &cov, &cfg, result, elapsed_ms);
    write_json(&dst.join(REPORT_FILE), &report)?;
    Ok(summary)
}

pub fn run(s: &Settings, scenes: &[String], omit_timings: bool) -> Result<Status> {
    let (root, ids) = resolve(s.root.as_deref(), scenes)?;
    let (done, status) = run_batch(&ids, |id| sample_scene(&root, id, s, omit_timings))?;
    for (id, r) in &done {
        println!(
            "{id}: {} of {} frames, coverage {:.4}{}",
            r.selected,
            r.frames,
            r.ratio,
            if r.skipped_frames > 0 {
                format!(" ({} frames skipped)", r.skipped_frames)
            } else {
                String::new()
            }
        );
    }
    Ok(status)
}
