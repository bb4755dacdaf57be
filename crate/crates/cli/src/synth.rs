use rayon::prelude::*;

use scene_sampler::ingest::{generate_synthetic, SyntheticSceneSpec};
use scene_sampler::Result;

use crate::config::Settings;
use crate::scenes::Status;

pub struct SynthArgs {
    pub count: usize,
    pub frames: usize,
    pub objects: usize,
    pub width: usize,
    pub height: usize,
}

/// Writes `count` scenes seeded `seed, seed + 1, ...` under `--out`.
pub fn run(s: &Settings, a: &SynthArgs) -> Result<Status> {
    let ids = (0..a.count as u64)
        .into_par_iter()
        .map(|k| {
            let spec = SyntheticSceneSpec {
                seed: s.seed.wrapping_add(k),
                n_frames: a.frames,
                n_objects: a.objects,
                width: a.width,
                height: a.height,
                // store exactly what the PNG can hold so reloads are lossless
                quantize_scale: Some(s.depth_scale),
                ..SyntheticSceneSpec::default()
            };
            let scene = generate_synthetic(&spec)?;
            scene.save(&s.out, s.depth_scale)?;
            Ok(scene.scene_id)
        })
        .collect::<Result<Vec<_>>>()?;
    for id in ids {
        println!("{}", s.out.join(id).display());
    }
    Ok(Status::Success)
}
