//! Scene sources: ScanNet-style directories on disk and seeded synthetic
//! box-world scenes rendered with an exact ray/box z-buffer.
//!
//! On-disk layout, one directory per scene:
//!
//! ```text
//! <root>/<scene_id>/intrinsic.txt
//! <root>/<scene_id>/pose/<N>.txt
//! <root>/<scene_id>/depth/<N>.png
//! <root>/<scene_id>/color/<N>.jpg   (optional, path bookkeeping only)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::{VoxelIndex, VoxelSet};
use crate::error::{Error, Result};
use crate::formats;
use crate::geometry::{CameraFrame, DepthMap, Extrinsics, Intrinsics};
use crate::grounding::{BoxRecord, ObjectProposal};

/// Frame rate assumed for videos extracted upstream.
pub const DEFAULT_FPS: f64 = 3.0;

/// Anything that can hand out camera frames by position.
pub trait FrameSource: Sync {
    fn scene_id(&self) -> &str;
    fn frame_count(&self) -> usize;
    /// Frame index of the frame at `pos`.
    fn frame_index(&self, pos: usize) -> u32;
    fn load_frame(&self, pos: usize) -> Result<CameraFrame>;

    /// Position of the frame carrying `index`.
    fn position_of(&self, index: u32) -> Option<usize> {
        (0..self.frame_count()).find(|&p| self.frame_index(p) == index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub index: u32,
    pub extrinsics: Extrinsics,
    pub depth_path: PathBuf,
    pub rgb_path: Option<PathBuf>,
}

/// A validated on-disk scene. Depth maps load lazily through [`FrameSource`].
#[derive(Debug, Clone)]
pub struct SceneManifest {
    pub scene_id: String,
    pub dir: PathBuf,
    pub intrinsics: Intrinsics,
    pub depth_scale: f64,
    pub fps_extracted: f64,
    pub frames: Vec<FrameEntry>,
    /// One message per skipped frame.
    pub warnings: Vec<String>,
}

impl FrameSource for SceneManifest {
    fn scene_id(&self) -> &str {
        &self.scene_id
    }

    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn frame_index(&self, pos: usize) -> u32 {
        self.frames[pos].index
    }

    fn load_frame(&self, pos: usize) -> Result<CameraFrame> {
        let entry = &self.frames[pos];
        let depth = formats::read_depth_png(&entry.depth_path, self.depth_scale)?;
        let mut frame = CameraFrame::new(entry.index, depth, self.intrinsics, entry.extrinsics)?;
        frame.rgb_path = entry
            .rgb_path
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned());
        Ok(frame)
    }
}

fn numeric_stem(path: &Path) -> Option<u32> {
    path.file_stem()?.to_str()?.parse().ok()
}

/// Loads and validates one scene directory. Frames whose pose or depth is
/// unusable are skipped and recorded in `warnings`.
pub fn load_scene(root: &Path, scene_id: &str, depth_scale: f64) -> Result<SceneManifest> {
    if !(depth_scale > 0.0) {
        return Err(Error::FatalConfig(format!("depth scale must be positive, got {depth_scale}")));
    }
    let dir = root.join(scene_id);
    let intrinsic_path = dir.join("intrinsic.txt");
    if !intrinsic_path.is_file() {
        return Err(Error::FatalConfig(format!(
            "missing intrinsics file {}",
            intrinsic_path.display()
        )));
    }
    let k_text = fs::read_to_string(&intrinsic_path).map_err(|e| Error::io(&intrinsic_path, e))?;
    let k = formats::parse_intrinsic_matrix(&k_text)
        .map_err(|r| Error::FatalConfig(format!("{}: {r}", intrinsic_path.display())))?;

    let pose_dir = dir.join("pose");
    let mut pose_files: Vec<(u32, PathBuf)> = Vec::new();
    let mut warnings = Vec::new();
    if let Ok(entries) = fs::read_dir(&pose_dir) {
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            match numeric_stem(&path) {
                Some(idx) => pose_files.push((idx, path)),
                None => warnings.push(format!("{}: file name is not a frame number", path.display())),
            }
        }
    }
    pose_files.sort();

    let mut dims: Option<(usize, usize)> = None;
    let mut frames = Vec::with_capacity(pose_files.len());
    for (index, pose_path) in pose_files {
        let extrinsics = match formats::read_pose(&pose_path) {
            Ok(e) => e,
            Err(e) => {
                warnings.push(format!("skipping frame {index}: {e}"));
                continue;
            }
        };
        let depth_path = dir.join("depth").join(format!("{index}.png"));
        let frame_dims = match formats::depth_dimensions(&depth_path) {
            Ok(d) => d,
            Err(e) => {
                warnings.push(format!("skipping frame {index}: {e}"));
                continue;
            }
        };
        match dims {
            None => dims = Some(frame_dims),
            Some(d) if d != frame_dims => {
                warnings.push(format!(
                    "skipping frame {index}: depth is {}x{}, scene uses {}x{}",
                    frame_dims.1, frame_dims.0, d.1, d.0
                ));
                continue;
            }
            Some(_) => {}
        }
        let rgb = dir.join("color").join(format!("{index}.jpg"));
        frames.push(FrameEntry {
            index,
            extrinsics,
            depth_path,
            rgb_path: rgb.is_file().then_some(rgb),
        });
    }
    for w in &warnings {
        log::warn!("{scene_id}: {w}");
    }
    let Some((width, height)) = dims else {
        return Err(Error::EmptyScene(scene_id.to_string()));
    };
    let intrinsics = Intrinsics::from_matrix(&k, width, height)
        .map_err(|e| Error::FatalConfig(format!("{}: {e}", intrinsic_path.display())))?;
    Ok(SceneManifest {
        scene_id: scene_id.to_string(),
        dir,
        intrinsics,
        depth_scale,
        fps_extracted: DEFAULT_FPS,
        frames,
        warnings,
    })
}

/// Scene directories under `root` (any subdirectory), sorted by name.
pub fn list_scenes(root: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().is_dir() {
            if let Some(name) = entry.file_name().to_str() {
                out.push(name.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Parameters of a synthetic box-world scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    /// Room side lengths in meters.
    pub room_extent: [f64; 3],
    pub n_frames: usize,
    pub n_objects: usize,
    pub width: usize,
    pub height: usize,
    /// Defaults to a ~64 degree horizontal field of view centered on the image.
    pub intrinsics: Option<Intrinsics>,
    /// Round depths to multiples of `1 / scale`, matching what a PNG round trip stores.
    pub quantize_scale: Option<f64>,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            seed: 0,
            room_extent: [6.0, 5.0, 3.0],
            n_frames: 120,
            n_objects: 8,
            width: 80,
            height: 60,
            intrinsics: None,
            quantize_scale: None,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.room_extent.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err(Error::invalid("room extents must be positive"));
        }
        if self.n_frames == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::invalid("synthetic scenes need frames and a non-empty image"));
        }
        if self.room_extent[2] < 2.0 {
            return Err(Error::invalid("room must be at least 2 m tall"));
        }
        Ok(())
    }

    fn resolved_intrinsics(&self) -> Result<Intrinsics> {
        match self.intrinsics {
            Some(k) => {
                if (k.width, k.height) != (self.width, self.height) {
                    return Err(Error::invalid("intrinsics do not match the image size"));
                }
                Ok(k)
            }
            None => {
                let f = 0.8 * self.width as f64;
                Intrinsics::new(
                    f,
                    f,
                    (self.width / 2) as f64,
                    (self.height / 2) as f64,
                    self.width,
                    self.height,
                )
            }
        }
    }
}

/// A rendered synthetic scene with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub scene_id: String,
    pub intrinsics: Intrinsics,
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub objects: Vec<ObjectProposal>,
    pub frames: Vec<CameraFrame>,
    /// Ids of the objects hit by at least one pixel, per frame.
    pub visibility: Vec<Vec<i64>>,
    pub quantize_scale: Option<f64>,
}

impl FrameSource for SyntheticScene {
    fn scene_id(&self) -> &str {
        &self.scene_id
    }

    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn frame_index(&self, pos: usize) -> u32 {
        self.frames[pos].index
    }

    fn load_frame(&self, pos: usize) -> Result<CameraFrame> {
        Ok(self.frames[pos].clone())
    }
}

/// Casts the ray `origin + t * dir` against the room interior and the boxes.
/// Returns the nearest positive `t` and the id of the box hit, if any.
fn cast_ray(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    room: Option<([f64; 3], [f64; 3])>,
    objects: &[ObjectProposal],
) -> Option<(f64, Option<i64>)> {
    let mut best: Option<(f64, Option<i64>)> = None;
    if let Some((lo, hi)) = room {
        // leaving the room: smallest exit parameter over the three slabs
        let mut t_exit = f64::INFINITY;
        for a in 0..3 {
            if dir[a] > 0.0 {
                t_exit = t_exit.min((hi[a] - origin[a]) / dir[a]);
            } else if dir[a] < 0.0 {
                t_exit = t_exit.min((lo[a] - origin[a]) / dir[a]);
            }
        }
        if t_exit.is_finite() && t_exit > 0.0 {
            best = Some((t_exit, None));
        }
    }
    for obj in objects {
        let (lo, hi) = (obj.min_corner(), obj.max_corner());
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut miss = false;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < lo[a] || origin[a] > hi[a] {
                    miss = true;
                    break;
                }
                continue;
            }
            let t1 = (lo[a] - origin[a]) / dir[a];
            let t2 = (hi[a] - origin[a]) / dir[a];
            t_near = t_near.max(t1.min(t2));
            t_far = t_far.min(t1.max(t2));
        }
        if miss || t_near > t_far || t_near <= 0.0 {
            continue;
        }
        if best.is_none_or(|(t, _)| t_near < t) {
            best = Some((t_near, Some(obj.id)));
        }
    }
    best
}

/// Renders exact z-buffer depth for a pinhole camera. Rays are cast through
/// `K^-1 [j, i, 1]`, whose camera-space z is 1, so the hit parameter is the depth.
/// Also returns the ids of the boxes that appear in the image.
pub fn render_depth(
    intr: &Intrinsics,
    extr: &Extrinsics,
    room: Option<([f64; 3], [f64; 3])>,
    objects: &[ObjectProposal],
    quantize_scale: Option<f64>,
) -> Result<(DepthMap, Vec<i64>)> {
    let (w, h) = (intr.width, intr.height);
    let mut values = vec![0.0; w * h];
    let mut seen = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let dir = extr.rotation * intr.unproject_unit(i as f64, j as f64);
            if let Some((t, hit)) = cast_ray(&extr.translation, &dir, room, objects) {
                values[i * w + j] = match quantize_scale {
                    Some(s) => formats::quantize_depth(t, s) as f64 / s,
                    None => t,
                };
                if let Some(id) = hit {
                    if !seen.contains(&id) {
                        seen.push(id);
                    }
                }
            }
        }
    }
    seen.sort_unstable();
    Ok((DepthMap::from_values(w, h, values)?, seen))
}

/// Camera-to-world rotation for a camera looking along yaw/pitch with world +z up.
/// Camera axes: x right, y down, z forward.
pub fn look_rotation(yaw: f64, pitch: f64) -> Matrix3<f64> {
    let forward = Vector3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin());
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    Matrix3::from_columns(&[right, down, forward])
}

/// Builds a deterministic scene: a room of random floor-standing boxes seen by
/// a camera that circles the room while turning at an uneven rate, so that some
/// viewing directions are heavily oversampled in time.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let intr = spec.resolved_intrinsics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // fractional origin offset keeps walls off voxel boundaries
    let room_min: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.003..0.047));
    let room_max: [f64; 3] = std::array::from_fn(|a| room_min[a] + spec.room_extent[a]);

    let mut objects = Vec::with_capacity(spec.n_objects);
    for id in 0..spec.n_objects {
        let ext = [
            rng.gen_range(0.3..1.2f64).min(spec.room_extent[0] * 0.3),
            rng.gen_range(0.3..1.2f64).min(spec.room_extent[1] * 0.3),
            rng.gen_range(0.3..1.1),
        ];
        let cx = rng.gen_range(room_min[0] + ext[0] / 2.0..room_max[0] - ext[0] / 2.0);
        let cy = rng.gen_range(room_min[1] + ext[1] / 2.0..room_max[1] - ext[1] / 2.0);
        let cz = room_min[2] + ext[2] / 2.0;
        objects.push(ObjectProposal::new(id as i64, [cx, cy, cz], ext)?);
    }

    let center = [
        (room_min[0] + room_max[0]) / 2.0,
        (room_min[1] + room_max[1]) / 2.0,
    ];
    let radius = [spec.room_extent[0] * 0.3, spec.room_extent[1] * 0.3];
    let turns = rng.gen_range(1.0..2.0f64);
    let wobble = rng.gen_range(0.5..0.9f64);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let lobes = rng.gen_range(1..4) as f64;
    let orbit_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let yaw0 = rng.gen_range(0.0..std::f64::consts::TAU);
    let n = spec.n_frames;

    // uneven angular speed: w(t) = 1 + wobble * sin(2 pi lobes t + phase), integrated numerically
    let speed: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 / n as f64;
            1.0 + wobble * (std::f64::consts::TAU * lobes * t + phase).sin()
        })
        .collect();
    let total: f64 = speed.iter().sum();
    let mut progress = Vec::with_capacity(n);
    let mut acc = 0.0;
    for s in &speed {
        progress.push(acc / total);
        acc += s;
    }

    let mut poses = Vec::with_capacity(n);
    for (k, &u) in progress.iter().enumerate() {
        let theta = orbit_phase + std::f64::consts::TAU * u;
        let pos = Vector3::new(
            center[0] + radius[0] * theta.cos(),
            center[1] + radius[1] * theta.sin(),
            room_min[2] + 1.4 + 0.2 * (k as f64 * 0.05).sin(),
        );
        let yaw = yaw0 + std::f64::consts::TAU * turns * u;
        let pitch = -0.35 + 0.15 * (std::f64::consts::TAU * 2.0 * u).sin();
        poses.push(Extrinsics::new(look_rotation(yaw, pitch), pos)?);
    }

    let room = Some((room_min, room_max));
    let rendered: Vec<(CameraFrame, Vec<i64>)> = poses
        .par_iter()
        .enumerate()
        .map(|(k, extr)| {
            let (depth, seen) = render_depth(&intr, extr, room, &objects, spec.quantize_scale)?;
            Ok((CameraFrame::new(k as u32, depth, intr, *extr)?, seen))
        })
        .collect::<Result<_>>()?;
    let (frames, visibility) = rendered.into_iter().unzip();

    Ok(SyntheticScene {
        scene_id: format!("synth_{:04}", spec.seed),
        intrinsics: intr,
        room_min,
        room_max,
        objects,
        frames,
        visibility,
        quantize_scale: spec.quantize_scale,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectRecord {
    id: i64,
    #[serde(flatten)]
    bbox: BoxRecord,
}

impl SyntheticScene {
    /// Voxels hit by the camera rays of frame `pos`, computed by re-casting
    /// each ray and binning `origin + t * dir` directly.
    pub fn analytic_coverage(&self, pos: usize, voxel_size: f64) -> Result<VoxelSet> {
        let frame = &self.frames[pos];
        let intr = &self.intrinsics;
        let extr = &frame.extrinsics;
        let room = Some((self.room_min, self.room_max));
        let mut voxels = Vec::new();
        for i in 0..intr.height {
            for j in 0..intr.width {
                let dir = extr.rotation * intr.unproject_unit(i as f64, j as f64);
                let Some((t, _)) = cast_ray(&extr.translation, &dir, room, &self.objects) else {
                    continue;
                };
                let t = match self.quantize_scale {
                    Some(s) => formats::quantize_depth(t, s) as f64 / s,
                    None => t,
                };
                if !(t > 0.0) {
                    continue;
                }
                let p = extr.translation + dir * t;
                voxels.push(
                    VoxelIndex::from_point([p.x, p.y, p.z], voxel_size)
                        .ok_or_else(|| Error::invalid("point outside voxel grid"))?,
                );
            }
        }
        VoxelSet::new(frame.index, voxel_size, voxels)
    }

    /// Writes the scene in the on-disk layout under `root/<scene_id>` plus an
    /// `objects.json` with the ground-truth boxes. Depth is stored in
    /// `1 / depth_scale` meter units.
    pub fn save(&self, root: &Path, depth_scale: f64) -> Result<PathBuf> {
        let dir = root.join(&self.scene_id);
        for sub in ["depth", "pose"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        formats::write_text(&dir.join("intrinsic.txt"), &formats::format_intrinsics(&self.intrinsics))?;
        self.frames.par_iter().try_for_each(|f| {
            formats::write_depth_png(&dir.join("depth").join(format!("{}.png", f.index)), &f.depth, depth_scale)?;
            formats::write_text(
                &dir.join("pose").join(format!("{}.txt", f.index)),
                &formats::format_pose(&f.extrinsics),
            )
        })?;
        let objects: Vec<ObjectRecord> = self
            .objects
            .iter()
            .map(|o| ObjectRecord {
                id: o.id,
                bbox: o.into(),
            })
            .collect();
        crate::io::write_json(&dir.join("objects.json"), &objects)?;
        Ok(dir)
    }
}

/// Reads the `objects.json` written next to a synthetic scene.
pub fn load_objects(scene_dir: &Path) -> Result<Vec<ObjectProposal>> {
    let path = scene_dir.join("objects.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let recs: Vec<ObjectRecord> = serde_json::from_str(&text)?;
    recs.iter().map(|r| r.bbox.to_proposal(r.id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_at_principal_pixel_hits_near_face() {
        let intr = Intrinsics::new(50.0, 50.0, 32.0, 24.0, 64, 48).unwrap();
        let b = ObjectProposal::new(0, [0.0, 0.0, 2.0], [0.5, 0.5, 0.5]).unwrap();
        let (depth, seen) = render_depth(&intr, &Extrinsics::identity(), None, &[b], None).unwrap();
        assert_eq!(depth.get(24, 32), Some(1.75));
        assert_eq!(seen, vec![0]);
        // rays that miss everything stay invalid without a room
        assert_eq!(depth.get(0, 0), None);
    }

    #[test]
    fn room_walls_bound_depth() {
        let intr = Intrinsics::new(10.0, 10.0, 4.0, 4.0, 8, 8).unwrap();
        let extr = Extrinsics::from_translation(Vector3::new(1.0, 1.0, 1.0));
        let (depth, seen) = render_depth(&intr, &extr, Some(([0.0; 3], [2.0; 3])), &[], None).unwrap();
        assert_eq!(depth.valid_count(), 64);
        assert_eq!(depth.get(4, 4), Some(1.0));
        assert!(seen.is_empty());
    }

    #[test]
    fn look_rotation_is_proper() {
        let r = look_rotation(0.7, -0.3);
        assert!(Extrinsics::new(r, Vector3::zeros()).is_ok());
        let fwd = r * Vector3::z();
        assert!(fwd.z < 0.0);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSceneSpec {
            seed: 5,
            n_frames: 6,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.objects, b.objects);
    }

    #[test]
    fn no_objects_means_only_walls() {
        let spec = SyntheticSceneSpec {
            seed: 2,
            n_frames: 4,
            n_objects: 0,
            ..Default::default()
        };
        let s = generate_synthetic(&spec).unwrap();
        assert!(s.visibility.iter().all(|v| v.is_empty()));
        assert!(s.frames.iter().all(|f| f.depth.valid_count() == spec.width * spec.height));
    }

    #[test]
    fn missing_intrinsics_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("s0/pose")).unwrap();
        assert!(matches!(
            load_scene(dir.path(), "s0", 1000.0),
            Err(Error::FatalConfig(_))
        ));
    }

    #[test]
    fn scene_without_frames_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("s0")).unwrap();
        fs::write(dir.path().join("s0/intrinsic.txt"), "10 0 4\n0 10 4\n0 0 1\n").unwrap();
        assert!(matches!(
            load_scene(dir.path(), "s0", 1000.0),
            Err(Error::EmptyScene(_))
        ));
    }
}
