//! Frame selection: greedy maximum coverage and uniform spacing.
//!
//! The greedy sampler repeatedly takes the frame that adds the most voxels not
//! yet covered, breaking ties by the lowest frame index. It stops at the frame
//! budget, once the optional coverage threshold is reached (checked after each
//! pick), or when no remaining frame adds anything.
//!
//! Marginal gains only shrink as the covered set grows, so stale gains are
//! valid upper bounds. [`greedy_max_coverage`] keeps them in a max-heap and
//! only re-evaluates the frame on top, which yields exactly the same picks as
//! re-scanning every frame each round.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::coverage::SceneCoverage;
use crate::error::{Error, Result};

pub const DEFAULT_BUDGET: usize = 32;
pub const DEFAULT_ADAPTIVE_THRESHOLD: f64 = 0.95;

/// Largest scene [`brute_force_max_coverage`] will enumerate.
pub const BRUTE_FORCE_MAX_FRAMES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uniform,
    #[serde(rename = "mc")]
    MaxCoverage,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::MaxCoverage => "mc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub budget: usize,
    pub coverage_threshold: Option<f64>,
    pub strategy: Strategy,
}

impl SamplerConfig {
    pub fn new(budget: usize, coverage_threshold: Option<f64>, strategy: Strategy) -> Result<Self> {
        let cfg = SamplerConfig {
            budget,
            coverage_threshold,
            strategy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fixed frame budget, no early stop on coverage.
    pub fn max_coverage(budget: usize) -> Self {
        SamplerConfig {
            budget,
            coverage_threshold: None,
            strategy: Strategy::MaxCoverage,
        }
    }

    /// Stop at 95% coverage or 32 frames, whichever comes first.
    pub fn adaptive() -> Self {
        SamplerConfig {
            budget: DEFAULT_BUDGET,
            coverage_threshold: Some(DEFAULT_ADAPTIVE_THRESHOLD),
            strategy: Strategy::MaxCoverage,
        }
    }

    pub fn uniform(budget: usize) -> Self {
        SamplerConfig {
            budget,
            coverage_threshold: None,
            strategy: Strategy::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::invalid("budget must be at least 1"));
        }
        if let Some(t) = self.coverage_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid(format!(
                    "coverage threshold must lie in (0, 1], got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Frames chosen, in pick order, with the covered-voxel count after each pick.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingResult {
    pub selected: Vec<u32>,
    pub covered_after_each: Vec<usize>,
    pub final_ratio: f64,
}

/// Per-scene JSON document written by the sampling stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingReport {
    pub scene_id: String,
    pub strategy: Strategy,
    pub voxel_size: f64,
    pub budget: usize,
    pub threshold: Option<f64>,
    pub selected: Vec<u32>,
    pub coverage_trajectory: Vec<usize>,
    pub final_ratio: f64,
    pub elapsed_ms: f64,
}

impl SamplingReport {
    pub fn new(
        scene_id: impl Into<String>,
        scene: &SceneCoverage,
        cfg: &SamplerConfig,
        result: SamplingResult,
        elapsed_ms: f64,
    ) -> Self {
        SamplingReport {
            scene_id: scene_id.into(),
            strategy: cfg.strategy,
            voxel_size: scene.voxel_size(),
            budget: cfg.budget,
            threshold: cfg.coverage_threshold,
            selected: result.selected,
            coverage_trajectory: result.covered_after_each,
            final_ratio: result.final_ratio,
            elapsed_ms,
        }
    }
}

fn ratio(covered: usize, universe: usize) -> f64 {
    if universe == 0 {
        1.0
    } else {
        covered as f64 / universe as f64
    }
}

/// Runs the strategy named in `cfg`.
pub fn sample(scene: &SceneCoverage, cfg: &SamplerConfig) -> Result<SamplingResult> {
    match cfg.strategy {
        Strategy::MaxCoverage => greedy_max_coverage(scene, cfg),
        Strategy::Uniform => uniform_over_scene(scene, cfg.budget),
    }
}

pub fn greedy_max_coverage(scene: &SceneCoverage, cfg: &SamplerConfig) -> Result<SamplingResult> {
    cfg.validate()?;
    if scene.frame_count() == 0 {
        return Err(Error::invalid("cannot sample from a scene without frames"));
    }
    let sets = scene.dense_sets();
    let frame_ids: Vec<u32> = scene.frames().iter().map(|s| s.frame_index).collect();
    let universe = scene.universe().len();

    let mut covered = vec![false; universe];
    let mut covered_count = 0usize;
    let mut selected = Vec::with_capacity(cfg.budget.min(sets.len()));
    let mut trajectory = Vec::with_capacity(selected.capacity());

    // (gain upper bound, lowest frame index first, position)
    let mut heap: BinaryHeap<(usize, Reverse<u32>, usize)> = sets
        .iter()
        .enumerate()
        .map(|(pos, s)| (s.len(), Reverse(frame_ids[pos]), pos))
        .collect();

    while selected.len() < cfg.budget {
        let Some((bound, tie, pos)) = heap.pop() else {
            break;
        };
        let gain = sets[pos].iter().filter(|&&v| !covered[v as usize]).count();
        if gain < bound {
            heap.push((gain, tie, pos));
            continue;
        }
        if gain == 0 {
            break;
        }
        for &v in &sets[pos] {
            covered[v as usize] = true;
        }
        covered_count += gain;
        selected.push(frame_ids[pos]);
        trajectory.push(covered_count);
        if let Some(t) = cfg.coverage_threshold {
            if ratio(covered_count, universe) >= t {
                break;
            }
        }
    }

    Ok(SamplingResult {
        selected,
        covered_after_each: trajectory,
        final_ratio: ratio(covered_count, universe),
    })
}

/// `min(budget, n_frames)` evenly spaced positions `floor(r * n / m)`.
pub fn uniform_sample(n_frames: usize, budget: usize) -> Vec<usize> {
    let m = budget.min(n_frames);
    (0..m).map(|r| r * n_frames / m).collect()
}

fn uniform_over_scene(scene: &SceneCoverage, budget: usize) -> Result<SamplingResult> {
    if budget == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    if scene.frame_count() == 0 {
        return Err(Error::invalid("cannot sample from a scene without frames"));
    }
    let sets = scene.dense_sets();
    let universe = scene.universe().len();
    let mut covered = vec![false; universe];
    let mut count = 0;
    let mut selected = Vec::new();
    let mut trajectory = Vec::new();
    for pos in uniform_sample(sets.len(), budget) {
        for &v in &sets[pos] {
            if !std::mem::replace(&mut covered[v as usize], true) {
                count += 1;
            }
        }
        selected.push(scene.frames()[pos].frame_index);
        trajectory.push(count);
    }
    Ok(SamplingResult {
        selected,
        covered_after_each: trajectory,
        final_ratio: ratio(count, universe),
    })
}

/// Exact maximum coverage by enumerating every subset of size `min(budget, n)`.
/// Returns the lexicographically first optimal subset (by position) as frame indices.
pub fn brute_force_max_coverage(scene: &SceneCoverage, budget: usize) -> Result<(Vec<u32>, usize)> {
    let n = scene.frame_count();
    if n > BRUTE_FORCE_MAX_FRAMES {
        return Err(Error::invalid(format!(
            "brute force is limited to {BRUTE_FORCE_MAX_FRAMES} frames, scene has {n}"
        )));
    }
    let words = scene.universe().len().div_ceil(64);
    let masks: Vec<Vec<u64>> = scene
        .dense_sets()
        .iter()
        .map(|ids| {
            let mut m = vec![0u64; words];
            for &v in ids {
                m[v as usize / 64] |= 1 << (v % 64);
            }
            m
        })
        .collect();
    let k = budget.min(n);

    struct Search<'a> {
        masks: &'a [Vec<u64>],
        k: usize,
        best: usize,
        best_subset: Vec<usize>,
        stack: Vec<usize>,
    }

    impl Search<'_> {
        fn run(&mut self, start: usize, acc: &[u64]) {
            if self.stack.len() == self.k {
                let count: usize = acc.iter().map(|w| w.count_ones() as usize).sum();
                if count > self.best || self.best_subset.is_empty() {
                    self.best = count;
                    self.best_subset = self.stack.clone();
                }
                return;
            }
            let remaining = self.k - self.stack.len();
            for pos in start..=(self.masks.len() - remaining) {
                let next: Vec<u64> = acc
                    .iter()
                    .zip(&self.masks[pos])
                    .map(|(a, b)| a | b)
                    .collect();
                self.stack.push(pos);
                self.run(pos + 1, &next);
                self.stack.pop();
            }
        }
    }

    let mut search = Search {
        masks: &masks,
        k,
        best: 0,
        best_subset: Vec::new(),
        stack: Vec::with_capacity(k),
    };
    search.run(0, &vec![0u64; words]);
    let frames = search
        .best_subset
        .iter()
        .map(|&p| scene.frames()[p].frame_index)
        .collect();
    Ok((frames, search.best))
}
