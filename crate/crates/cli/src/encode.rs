use std::path::Path;

use rayon::prelude::*;
use scene_sampler::ingest::{load_scene, FrameSource};
use scene_sampler::pipeline::encode_frame;
use scene_sampler::sampler::SamplingReport;
use scene_sampler::tensor::{write_tensor, TensorMeta};
use scene_sampler::{Error, Result};

use crate::config::Settings;
use crate::sample::REPORT_FILE;
use crate::scenes::{resolve, run_batch, Status};

pub const EMBEDDING_DIR: &str = "embeddings";

fn selected_frames(report_path: &Path) -> Result<Vec<u32>> {
    let text = std::fs::read_to_string(report_path).map_err(|_| {
        Error::FatalConfig(format!(
            "{} not found; run `sample` first or pass --all-frames",
            report_path.display()
        ))
    })?;
    let report: SamplingReport = serde_json::from_str(&text)
        .map_err(|e| Error::FatalConfig(format!("{}: {e}", report_path.display())))?;
    Ok(report.selected)
}

fn encode_scene(root: &Path, id: &str, s: &Settings, all_frames: bool) -> Result<usize> {
    let manifest = load_scene(root, id, s.depth_scale)?;
    let dst = s.out.join(id);
    let frames: Vec<u32> = if all_frames {
        manifest.frames.iter().map(|f| f.index).collect()
    } else {
        selected_frames(&dst.join(REPORT_FILE))?
    };
    let cfg = s.encode()?;
    let mode = match cfg.pe.name() {
        "none" => "none".to_string(),
        pe => format!("{pe}-{}", cfg.pool.as_str()),
    };
    frames.par_iter().try_for_each(|&idx| {
        let pos = manifest
            .position_of(idx)
            .ok_or_else(|| Error::InvalidInput(format!("frame {idx} is not in scene {id}")))?;
        let frame = manifest.load_frame(pos)?;
        let fused = encode_frame(&frame, &cfg)?;
        let meta = TensorMeta {
            frame: idx,
            mode: mode.clone(),
            grid_resolution: cfg.pe.grid_resolution(),
        };
        write_tensor(&dst.join(EMBEDDING_DIR).join(format!("{idx}.bin")), &fused.values, meta)
    })?;
    Ok(frames.len())
}

pub fn run(s: &Settings, scenes: &[String], all_frames: bool) -> Result<Status> {
    s.encode()?;
    let (root, ids) = resolve(s.root.as_deref(), scenes)?;
    let (done, status) = run_batch(&ids, |id| encode_scene(&root, id, s, all_frames))?;
    for (id, n) in &done {
        println!("{id}: {n} frames encoded");
    }
    Ok(status)
}
