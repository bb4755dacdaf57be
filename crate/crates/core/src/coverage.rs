//! Voxel occupancy sets per frame and scene-level coverage accounting.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::CoordinateMap;

/// Default coverage grid resolution in meters.
pub const DEFAULT_VOXEL_SIZE: f64 = 0.1;

const CACHE_MAGIC: &[u8; 4] = b"V3DC";
const CACHE_VERSION: u32 = 1;

/// Integer grid cell `floor(p / voxel_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl VoxelIndex {
    pub const fn new(ix: i32, iy: i32, iz: i32) -> Self {
        VoxelIndex { ix, iy, iz }
    }

    /// Bins a world point. Returns `None` when a cell index leaves the `i32` range.
    #[inline]
    pub fn from_point(p: [f64; 3], voxel_size: f64) -> Option<Self> {
        let bin = |v: f64| {
            let f = (v / voxel_size).floor();
            (f >= i32::MIN as f64 && f <= i32::MAX as f64).then_some(f as i32)
        };
        Some(VoxelIndex::new(bin(p[0])?, bin(p[1])?, bin(p[2])?))
    }
}

/// The voxels one frame observes. Stored sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSet {
    pub frame_index: u32,
    pub voxel_size: f64,
    voxels: Vec<VoxelIndex>,
}

impl VoxelSet {
    pub fn new(frame_index: u32, voxel_size: f64, mut voxels: Vec<VoxelIndex>) -> Result<Self> {
        check_voxel_size(voxel_size)?;
        voxels.sort_unstable();
        voxels.dedup();
        Ok(VoxelSet {
            frame_index,
            voxel_size,
            voxels,
        })
    }

    pub fn voxels(&self) -> &[VoxelIndex] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn contains(&self, v: &VoxelIndex) -> bool {
        self.voxels.binary_search(v).is_ok()
    }
}

fn check_voxel_size(voxel_size: f64) -> Result<()> {
    if voxel_size > 0.0 && voxel_size.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "voxel size must be positive and finite, got {voxel_size}"
        )))
    }
}

/// Bins every valid pixel of `cmap` into the grid.
pub fn voxelize(cmap: &CoordinateMap, voxel_size: f64, frame_index: u32) -> Result<VoxelSet> {
    voxelize_strided(cmap, voxel_size, frame_index, 1)
}

/// Like [`voxelize`], visiting only every `stride`-th row and column.
pub fn voxelize_strided(
    cmap: &CoordinateMap,
    voxel_size: f64,
    frame_index: u32,
    stride: usize,
) -> Result<VoxelSet> {
    check_voxel_size(voxel_size)?;
    if stride == 0 {
        return Err(Error::invalid("pixel stride must be at least 1"));
    }
    let (w, h) = (cmap.width(), cmap.height());
    let coords = cmap.coords();
    let valid = cmap.valid();
    let mut voxels = Vec::with_capacity((w / stride + 1) * (h / stride + 1));
    for i in (0..h).step_by(stride) {
        for j in (0..w).step_by(stride) {
            let k = i * w + j;
            if !valid[k] {
                continue;
            }
            let v = VoxelIndex::from_point(coords[k], voxel_size).ok_or_else(|| {
                Error::invalid(format!("coordinate {:?} overflows the voxel grid", coords[k]))
            })?;
            voxels.push(v);
        }
    }
    VoxelSet::new(frame_index, voxel_size, voxels)
}

/// The universe of observed voxels together with every frame's set.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCoverage {
    voxel_size: f64,
    universe: Vec<VoxelIndex>,
    per_frame: Vec<VoxelSet>,
}

impl SceneCoverage {
    /// Frames must share one voxel size and carry distinct frame indices.
    pub fn new(per_frame: Vec<VoxelSet>, voxel_size: f64) -> Result<Self> {
        check_voxel_size(voxel_size)?;
        let mut seen = HashSet::with_capacity(per_frame.len());
        for set in &per_frame {
            if set.voxel_size != voxel_size {
                return Err(Error::invalid(format!(
                    "frame {} uses voxel size {} but the scene uses {}",
                    set.frame_index, set.voxel_size, voxel_size
                )));
            }
            if !seen.insert(set.frame_index) {
                return Err(Error::invalid(format!(
                    "duplicate frame index {}",
                    set.frame_index
                )));
            }
        }
        let mut universe: Vec<VoxelIndex> = per_frame
            .iter()
            .flat_map(|s| s.voxels.iter().copied())
            .collect();
        universe.sort_unstable();
        universe.dedup();
        Ok(SceneCoverage {
            voxel_size,
            universe,
            per_frame,
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn universe(&self) -> &[VoxelIndex] {
        &self.universe
    }

    pub fn frames(&self) -> &[VoxelSet] {
        &self.per_frame
    }

    pub fn frame_count(&self) -> usize {
        self.per_frame.len()
    }

    /// Looks up a frame's voxel set by its frame index.
    pub fn frame(&self, frame_index: u32) -> Option<&VoxelSet> {
        self.per_frame.iter().find(|s| s.frame_index == frame_index)
    }

    /// Each frame's voxels as dense ids into [`Self::universe`], in frame order.
    pub fn dense_sets(&self) -> Vec<Vec<u32>> {
        self.per_frame
            .iter()
            .map(|set| {
                set.voxels
                    .iter()
                    .map(|v| {
                        self.universe
                            .binary_search(v)
                            .expect("universe contains every frame voxel") as u32
                    })
                    .collect()
            })
            .collect()
    }
}

/// Fraction of the scene's universe covered by the union of `selected`.
/// An empty universe counts as fully covered.
pub fn coverage_ratio(selected: &[&VoxelSet], scene: &SceneCoverage) -> Result<f64> {
    for set in selected {
        if set.voxel_size != scene.voxel_size {
            return Err(Error::invalid(format!(
                "frame {} uses voxel size {} but the scene uses {}",
                set.frame_index, set.voxel_size, scene.voxel_size
            )));
        }
    }
    if scene.universe.is_empty() {
        return Ok(1.0);
    }
    let union: HashSet<VoxelIndex> = selected
        .iter()
        .flat_map(|s| s.voxels.iter().copied())
        .collect();
    Ok(union.len() as f64 / scene.universe.len() as f64)
}

/// Serializes per-frame voxel sets in the little-endian `V3DC` cache layout.
pub fn encode_cache(scene: &SceneCoverage) -> Vec<u8> {
    let total: usize = scene.per_frame.iter().map(|s| 8 + 12 * s.len()).sum();
    let mut out = Vec::with_capacity(20 + total);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&scene.voxel_size.to_le_bytes());
    out.extend_from_slice(&(scene.per_frame.len() as u32).to_le_bytes());
    for set in &scene.per_frame {
        out.extend_from_slice(&set.frame_index.to_le_bytes());
        out.extend_from_slice(&(set.voxels.len() as u32).to_le_bytes());
        for v in &set.voxels {
            out.extend_from_slice(&v.ix.to_le_bytes());
            out.extend_from_slice(&v.iy.to_le_bytes());
            out.extend_from_slice(&v.iz.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        self.pos = end;
        Ok(bytes.try_into().unwrap())
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn i32(&mut self) -> std::result::Result<i32, String> {
        Ok(i32::from_le_bytes(self.take()?))
    }
}

pub fn decode_cache(bytes: &[u8]) -> std::result::Result<SceneCoverage, String> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if &cur.take::<4>()? != CACHE_MAGIC {
        return Err("bad magic".into());
    }
    let version = cur.u32()?;
    if version != CACHE_VERSION {
        return Err(format!("unsupported cache version {version}"));
    }
    let voxel_size = f64::from_le_bytes(cur.take()?);
    let frames = cur.u32()? as usize;
    let mut per_frame = Vec::with_capacity(frames.min(1 << 16));
    for _ in 0..frames {
        let index = cur.u32()?;
        let count = cur.u32()? as usize;
        if count > (bytes.len() - cur.pos) / 12 {
            return Err(format!("frame {index} claims {count} voxels past end of file"));
        }
        let mut voxels = Vec::with_capacity(count);
        for _ in 0..count {
            voxels.push(VoxelIndex::new(cur.i32()?, cur.i32()?, cur.i32()?));
        }
        per_frame.push(VoxelSet::new(index, voxel_size, voxels).map_err(|e| e.to_string())?);
    }
    if cur.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - cur.pos));
    }
    SceneCoverage::new(per_frame, voxel_size).map_err(|e| e.to_string())
}

pub fn write_cache(path: &Path, scene: &SceneCoverage) -> Result<()> {
    crate::io::write_atomic(path, &encode_cache(scene))
}

pub fn read_cache(path: &Path) -> Result<SceneCoverage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes).map_err(|r| Error::format(path, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cmap_from_points(points: &[Option<[f64; 3]>]) -> CoordinateMap {
        let coords = points.iter().map(|p| p.unwrap_or([0.0; 3])).collect();
        let valid = points.iter().map(|p| p.is_some()).collect();
        CoordinateMap::from_parts(points.len(), 1, coords, valid).unwrap()
    }

    pub(crate) fn set(frame: u32, ids: &[i32]) -> VoxelSet {
        VoxelSet::new(
            frame,
            0.1,
            ids.iter().map(|&i| VoxelIndex::new(i, 0, 0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn all_invalid_gives_empty_set() {
        let cmap = cmap_from_points(&[None, None, None]);
        assert!(voxelize(&cmap, 0.1, 0).unwrap().is_empty());
    }

    #[test]
    fn floor_binning_handles_negatives() {
        let cmap = cmap_from_points(&[Some([0.05, 0.15, -0.05])]);
        let vs = voxelize(&cmap, 0.1, 3).unwrap();
        assert_eq!(vs.voxels(), &[VoxelIndex::new(0, 1, -1)]);
        assert_eq!(vs.frame_index, 3);
    }

    #[test]
    fn points_in_one_cube_collapse() {
        let pts = [
            Some([0.0, 0.0, 0.0]),
            Some([0.09, 0.01, 0.05]),
            Some([0.05, 0.099, 0.0999]),
            Some([0.001, 0.07, 0.03]),
        ];
        // brute force: bin each point independently and count distinct bins
        let mut bins: Vec<(i64, i64, i64)> = pts
            .iter()
            .map(|p| {
                let p: [f64; 3] = p.unwrap();
                (
                    (p[0] / 0.1).floor() as i64,
                    (p[1] / 0.1).floor() as i64,
                    (p[2] / 0.1).floor() as i64,
                )
            })
            .collect();
        bins.sort();
        bins.dedup();
        let vs = voxelize(&cmap_from_points(&pts), 0.1, 0).unwrap();
        assert_eq!(vs.len(), bins.len());
        assert_eq!(vs.len(), 1);
    }

    #[test]
    fn invalid_voxel_size_rejected() {
        let cmap = cmap_from_points(&[Some([1.0, 1.0, 1.0])]);
        assert!(voxelize(&cmap, 0.0, 0).is_err());
        assert!(voxelize(&cmap, -0.1, 0).is_err());
        assert!(voxelize_strided(&cmap, 0.1, 0, 0).is_err());
    }

    #[test]
    fn stride_skips_pixels() {
        let pts: Vec<_> = (0..6).map(|k| Some([k as f64 + 0.5, 0.5, 0.5])).collect();
        let vs = voxelize_strided(&cmap_from_points(&pts), 1.0, 0, 2).unwrap();
        assert_eq!(
            vs.voxels(),
            &[
                VoxelIndex::new(0, 0, 0),
                VoxelIndex::new(2, 0, 0),
                VoxelIndex::new(4, 0, 0)
            ]
        );
    }

    #[test]
    fn ratio_examples() {
        let a = set(0, &[1, 2, 3]);
        let b = set(1, &[3, 4]);
        let c = set(2, &[5]);
        let scene = SceneCoverage::new(vec![a.clone(), b.clone(), c.clone()], 0.1).unwrap();
        assert_eq!(scene.universe().len(), 5);
        assert_eq!(coverage_ratio(&[&a], &scene).unwrap(), 0.6);
        assert_eq!(coverage_ratio(&[], &scene).unwrap(), 0.0);
        assert_eq!(coverage_ratio(&[&a, &b, &c], &scene).unwrap(), 1.0);
    }

    #[test]
    fn empty_universe_counts_as_covered() {
        let scene = SceneCoverage::new(vec![set(0, &[])], 0.1).unwrap();
        assert_eq!(coverage_ratio(&[], &scene).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_voxel_size_rejected() {
        let a = set(0, &[1]);
        let b = VoxelSet::new(1, 0.2, vec![VoxelIndex::new(0, 0, 0)]).unwrap();
        assert!(SceneCoverage::new(vec![a.clone(), b.clone()], 0.1).is_err());
        let scene = SceneCoverage::new(vec![a], 0.1).unwrap();
        assert!(coverage_ratio(&[&b], &scene).is_err());
    }

    #[test]
    fn duplicate_frame_indices_rejected() {
        assert!(SceneCoverage::new(vec![set(0, &[1]), set(0, &[2])], 0.1).is_err());
    }

    #[test]
    fn cache_layout_is_little_endian() {
        let scene = SceneCoverage::new(vec![set(7, &[-1])], 0.1).unwrap();
        let bytes = encode_cache(&scene);
        let mut expected = b"V3DC".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&0.1f64.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&7u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&(-1i32).to_le_bytes());
        expected.extend_from_slice(&0i32.to_le_bytes());
        expected.extend_from_slice(&0i32.to_le_bytes());
        assert_eq!(bytes, expected);
        assert!(decode_cache(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_cache(b"XXXX").is_err());
    }

    fn arb_scene() -> impl Strategy<Value = SceneCoverage> {
        prop::collection::vec(
            prop::collection::vec((-50i32..50, -50i32..50, -5i32..5), 0..40),
            1..8,
        )
        .prop_map(|frames| {
            let sets = frames
                .into_iter()
                .enumerate()
                .map(|(k, vs)| {
                    let vs = vs.into_iter().map(|(x, y, z)| VoxelIndex::new(x, y, z)).collect();
                    VoxelSet::new(k as u32, 0.1, vs).unwrap()
                })
                .collect();
            SceneCoverage::new(sets, 0.1).unwrap()
        })
    }

    proptest! {
        #[test]
        fn cache_round_trips(scene in arb_scene()) {
            let back = decode_cache(&encode_cache(&scene)).unwrap();
            prop_assert_eq!(back, scene);
        }

        #[test]
        fn ratio_is_monotone_and_union_subadditive(scene in arb_scene()) {
            let frames: Vec<&VoxelSet> = scene.frames().iter().collect();
            let mut prev = 0.0;
            for k in 0..=frames.len() {
                let r = coverage_ratio(&frames[..k], &scene).unwrap();
                prop_assert!(r >= prev);
                prop_assert!((0.0..=1.0).contains(&r));
                prev = r;
            }
            for a in &frames {
                for b in &frames {
                    let union: HashSet<_> = a.voxels().iter().chain(b.voxels()).collect();
                    prop_assert!(union.len() <= a.len() + b.len());
                }
            }
        }

        #[test]
        fn grid_translation_shifts_indices(
            pts in prop::collection::vec((-40i32..40, -40i32..40, -40i32..40), 1..20),
            shift in (-20i32..20, -20i32..20, -20i32..20),
        ) {
            // dyadic coordinates and voxel size keep every sum and quotient exact
            let size = 0.125;
            let orig: Vec<_> = pts.iter()
                .map(|&(x, y, z)| Some([x as f64 / 64.0, y as f64 / 32.0, z as f64 / 128.0]))
                .collect();
            let moved: Vec<_> = orig.iter()
                .map(|p| p.map(|p| [
                    p[0] + shift.0 as f64 * size,
                    p[1] + shift.1 as f64 * size,
                    p[2] + shift.2 as f64 * size,
                ]))
                .collect();
            let a = voxelize(&cmap_from_points(&orig), size, 0).unwrap();
            let b = voxelize(&cmap_from_points(&moved), size, 0).unwrap();
            prop_assert_eq!(a.len(), b.len());
            let shifted: Vec<_> = a.voxels().iter()
                .map(|v| VoxelIndex::new(v.ix + shift.0, v.iy + shift.1, v.iz + shift.2))
                .collect();
            prop_assert_eq!(shifted, b.voxels().to_vec());
        }
    }
}
