use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use scene_sampler::ingest::{generate_synthetic, load_scene, FrameSource, SyntheticSceneSpec};
use scene_sampler::io::write_json;
use scene_sampler::pipeline::{encode_frame, scene_coverage};
use scene_sampler::sampler::sample;
use scene_sampler::Result;

use crate::config::Settings;
use crate::scenes::{resolve, Status};

pub const BENCH_FILE: &str = "bench.json";

#[derive(Debug, Serialize)]
pub struct SceneTiming {
    pub scene_id: String,
    pub frames: usize,
    pub voxels: usize,
    pub selected: Vec<u32>,
    pub voxelize_ms: f64,
    pub greedy_ms: f64,
    pub encode_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct StageStats {
    pub mean_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub threads: usize,
    pub scenes: Vec<SceneTiming>,
    pub voxelize: StageStats,
    pub greedy: StageStats,
    pub encode: StageStats,
}

/// Mean and nearest-rank 95th percentile.
pub fn stats(mut v: Vec<f64>) -> StageStats {
    if v.is_empty() {
        return StageStats {
            mean_ms: 0.0,
            p95_ms: 0.0,
        };
    }
    v.sort_by(f64::total_cmp);
    let rank = ((0.95 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    StageStats {
        mean_ms: v.iter().sum::<f64>() / v.len() as f64,
        p95_ms: v[rank - 1],
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn time_scene<S: FrameSource>(src: &S, s: &Settings) -> Result<SceneTiming> {
    let t = Instant::now();
    let cov = scene_coverage(src, s.voxel_size, s.stride)?;
    let voxelize_ms = ms(t);

    let cfg = s.sampler()?;
    let t = Instant::now();
    let res = sample(&cov, &cfg)?;
    let greedy_ms = ms(t);

    let enc = s.encode()?;
    let t = Instant::now();
    res.selected.par_iter().try_for_each(|&idx| {
        let pos = src.position_of(idx).expect("selected frame exists");
        encode_frame(&src.load_frame(pos)?, &enc).map(|_| ())
    })?;
    let encode_ms = ms(t);

    Ok(SceneTiming {
        scene_id: src.scene_id().to_string(),
        frames: src.frame_count(),
        voxels: cov.universe().len(),
        selected: res.selected,
        voxelize_ms,
        greedy_ms,
        encode_ms,
    })
}

pub struct BenchArgs<'a> {
    pub scenes: &'a [String],
    pub count: usize,
    pub frames: usize,
}

pub fn run(s: &Settings, a: &BenchArgs) -> Result<Status> {
    let mut timings = Vec::new();
    let mut failed = 0;
    if s.root.is_some() {
        let (root, ids) = resolve(s.root.as_deref(), a.scenes)?;
        for id in &ids {
            match load_scene(&root, id, s.depth_scale).and_then(|m| time_scene(&m, s)) {
                Ok(t) => timings.push(t),
                Err(e) => {
                    eprintln!("error: {id}: {e}");
                    failed += 1;
                }
            }
        }
    } else {
        for k in 0..a.count as u64 {
            let scene = generate_synthetic(&SyntheticSceneSpec {
                seed: s.seed.wrapping_add(k),
                n_frames: a.frames,
                ..SyntheticSceneSpec::default()
            })?;
            timings.push(time_scene(&scene, s)?);
        }
    }
    let pick = |f: fn(&SceneTiming) -> f64| stats(timings.iter().map(f).collect());
    let report = BenchReport {
        threads: rayon::current_num_threads(),
        voxelize: pick(|t| t.voxelize_ms),
        greedy: pick(|t| t.greedy_ms),
        encode: pick(|t| t.encode_ms),
        scenes: timings,
    };
    write_json(&s.out.join(BENCH_FILE), &report)?;
    for (name, st) in [("voxelize", &report.voxelize), ("greedy", &report.greedy), ("encode", &report.encode)] {
        println!("{name:<9} mean {:>9.2} ms  p95 {:>9.2} ms", st.mean_ms, st.p95_ms);
    }
    Ok(match (report.scenes.len(), failed) {
        (_, 0) => Status::Success,
        (0, _) => Status::Fatal,
        _ => Status::Partial,
    })
}
