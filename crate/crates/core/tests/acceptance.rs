//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! line per criterion and exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;

use scene_sampler::coverage::{encode_cache, voxelize, SceneCoverage, VoxelIndex, VoxelSet, DEFAULT_VOXEL_SIZE};
use scene_sampler::geometry::{backproject, backproject_pixel, project, DepthMap, Extrinsics, Intrinsics};
use scene_sampler::grounding::{
    aabb_iou, bce_loss, infonce_loss, pe_only_embedding, select_multi, select_single, GroundingHead,
    ObjectProposal, DEFAULT_MULTI_THRESHOLD, DEFAULT_TAU,
};
use scene_sampler::ingest::{generate_synthetic, load_scene, SyntheticSceneSpec};
use scene_sampler::pipeline::{encode_frame, scene_coverage, EncodeConfig};
use scene_sampler::posenc::{pool_patch_coords, sinusoidal_pe, PoolMode, DEFAULT_GRID_RESOLUTION};
use scene_sampler::sampler::{
    brute_force_max_coverage, greedy_max_coverage, sample, SamplerConfig, SamplingReport,
};
use scene_sampler::tensor::{write_tensor, TensorMeta};
use scene_sampler::{formats, io, Result};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// 1. greedy reaches (1 - 1/e) of the exact optimum on small random instances
fn greedy_approximation() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let bound = 1.0 - (-1.0f64).exp();
    let instances = 300;
    let mut worst_ratio = f64::INFINITY;
    let mut failures = 0;
    let mut oracle_mismatch = 0;
    for _ in 0..instances {
        let n = r.gen_range(1..=12);
        let universe = r.gen_range(5..=60);
        let budget = r.gen_range(1..=4);
        let sets: Vec<Vec<u32>> = (0..n)
            .map(|_| {
                let size = r.gen_range(0..=30);
                (0..size).map(|_| r.gen_range(0..universe)).collect()
            })
            .collect();
        let per_frame = sets
            .iter()
            .enumerate()
            .map(|(k, ids)| {
                let vox = ids.iter().map(|&v| VoxelIndex::new(v as i32, 0, 0)).collect();
                VoxelSet::new(k as u32, 1.0, vox).unwrap()
            })
            .collect();
        let scene = SceneCoverage::new(per_frame, 1.0).unwrap();
        let greedy = greedy_max_coverage(&scene, &SamplerConfig::max_coverage(budget)).unwrap();
        let got = greedy.covered_after_each.last().copied().unwrap_or(0);
        let opt = exhaustive_cover(&sets, budget);
        let (_, lib_opt) = brute_force_max_coverage(&scene, budget).unwrap();
        if lib_opt != opt {
            oracle_mismatch += 1;
        }
        if opt > 0 {
            worst_ratio = worst_ratio.min(got as f64 / opt as f64);
        }
        if (got as f64) < bound * opt as f64 {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && oracle_mismatch == 0 && elapsed < Duration::from_secs(10),
        format!(
            "{instances} instances, worst greedy/opt = {worst_ratio:.3} (bound {bound:.3}), \
             {failures} below bound, {oracle_mismatch} brute-force mismatches, {:.2} s (< 10 s)",
            secs(elapsed)
        ),
    )
}

fn suite_spec(seed: u64) -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        seed,
        n_frames: 100 + (seed as usize * 37) % 201,
        ..SyntheticSceneSpec::default()
    }
}

// 2. max-coverage beats uniform at 8 frames on the synthetic suite
fn mc_vs_uniform(suite: &mut Vec<SceneCoverage>) -> Outcome {
    let start = Instant::now();
    let mut wins = 0;
    let mut gaps = Vec::new();
    for seed in 0..20u64 {
        let scene = generate_synthetic(&suite_spec(seed)).unwrap();
        let cov = scene_coverage(&scene, DEFAULT_VOXEL_SIZE, 1).unwrap();
        let mc = sample(&cov, &SamplerConfig::max_coverage(8)).unwrap();
        let uni = sample(&cov, &SamplerConfig::uniform(8)).unwrap();
        if mc.final_ratio >= uni.final_ratio {
            wins += 1;
        }
        gaps.push(mc.final_ratio - uni.final_ratio);
        suite.push(cov);
    }
    let elapsed = start.elapsed();
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let min_gap = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        wins >= 19 && elapsed < Duration::from_secs(30),
        format!(
            "MC >= Uniform in {wins}/20 scenes (need 19), mean gap {mean_gap:+.3}, \
             min gap {min_gap:+.3}, {:.2} s (< 30 s)",
            secs(elapsed)
        ),
    )
}

// 3. adaptive stop: 95% coverage or the full 32 frames
fn adaptive_stop(suite: &[SceneCoverage]) -> Outcome {
    let cfg = SamplerConfig::adaptive();
    let mut bad = 0;
    let mut lengths = Vec::new();
    for cov in suite {
        let res = sample(cov, &cfg).unwrap();
        if !(res.final_ratio >= 0.95 || res.selected.len() == 32) {
            bad += 1;
        }
        lengths.push(res.selected.len());
    }
    outcome(
        bad == 0 && !suite.is_empty(),
        format!(
            "{} scenes, {bad} violations, frames used {}..{}",
            suite.len(),
            lengths.iter().min().unwrap_or(&0),
            lengths.iter().max().unwrap_or(&0)
        ),
    )
}

fn random_rotation(r: &mut impl Rng) -> Rotation3<f64> {
    let axis = Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), r.gen_range(-3.1..3.1))
}

// 4. project(backproject(pixel)) returns the pixel and its depth
fn backprojection_round_trip() -> Outcome {
    let mut r = rng(4);
    let mut worst_px: f64 = 0.0;
    let mut worst_depth: f64 = 0.0;
    for _ in 0..1000 {
        let w = r.gen_range(32..1280);
        let h = r.gen_range(32..960);
        let fx = r.gen_range(100.0..2000.0);
        let fy = fx * r.gen_range(0.9..1.1);
        let intr = Intrinsics::new(fx, fy, r.gen_range(0.0..w as f64), r.gen_range(0.0..h as f64), w, h)
            .unwrap();
        let t = Vector3::new(r.gen_range(-50.0..50.0), r.gen_range(-50.0..50.0), r.gen_range(-10.0..10.0));
        let extr = Extrinsics::new(random_rotation(&mut r).into_inner(), t).unwrap();
        let (i, j) = (r.gen_range(0..h), r.gen_range(0..w));
        let d = r.gen_range(0.1..20.0);
        let p = backproject_pixel(i, j, d, &intr, &extr);
        let (u, v, z) = project(&p, &intr, &extr);
        worst_px = worst_px.max((u - j as f64).abs()).max((v - i as f64).abs());
        worst_depth = worst_depth.max((z - d).abs());
    }
    outcome(
        worst_px < 1e-4 && worst_depth < 1e-4,
        format!("1000 samples, max pixel error {worst_px:.2e}, max depth error {worst_depth:.2e} m"),
    )
}

fn pe_oracle(value: f64, b: usize, k: usize) -> f64 {
    let angle = value / 10000f64.powf((2 * (k / 2)) as f64 / b as f64);
    if k % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

// 5. sinusoidal encoding: unit pairs, zero pattern, padding
fn pe_correctness() -> Outcome {
    let mut r = rng(5);
    let g = DEFAULT_GRID_RESOLUTION;
    let mut worst_unit: f64 = 0.0;
    let mut worst_formula: f64 = 0.0;
    for _ in 0..1000 {
        let coord = [r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0)];
        for d in [6, 10, 64, 256] {
            let pe = sinusoidal_pe(coord, d, g).unwrap();
            let b = d / 3;
            for a in 0..3 {
                let block = &pe[a * b..(a + 1) * b];
                for m in 0..b / 2 {
                    let s = block[2 * m].powi(2) + block[2 * m + 1].powi(2);
                    worst_unit = worst_unit.max((s - 1.0).abs());
                }
                let cell = (coord[a] / g).floor();
                for (k, v) in block.iter().enumerate() {
                    worst_formula = worst_formula.max((v - pe_oracle(cell, b, k)).abs());
                }
            }
        }
    }

    let mut zero_exact = true;
    let mut padding_exact = true;
    for d in [6, 10, 64, 256] {
        let b = d / 3;
        let zero = sinusoidal_pe([0.0; 3], d, g).unwrap();
        for (k, v) in zero.iter().enumerate() {
            let expect = if k < 3 * b && (k % b) % 2 == 1 { 1.0 } else { 0.0 };
            zero_exact &= *v == expect;
        }
        for _ in 0..50 {
            let coord = [r.gen_range(0.5..9.0), r.gen_range(0.5..9.0), r.gen_range(0.5..9.0)];
            let pe = sinusoidal_pe(coord, d, g).unwrap();
            padding_exact &= pe.len() == d;
            padding_exact &= pe[3 * b..].iter().all(|v| *v == 0.0);
            padding_exact &= pe.len() - 3 * b == d % 3;
        }
    }
    outcome(
        worst_unit < 1e-6 && zero_exact && padding_exact && worst_formula < 1e-12,
        format!(
            "max |sin^2+cos^2-1| = {worst_unit:.1e}, max deviation from formula {worst_formula:.1e}, \
             zero pattern exact: {zero_exact}, padding exact for d in {{6,10,64,256}}: {padding_exact}"
        ),
    )
}

// 6. patch pooling against per-pixel loops over depth maps with 20% holes
fn pooling_oracle() -> Outcome {
    let mut r = rng(6);
    let mut worst_avg: f64 = 0.0;
    let mut minmax_exact = true;
    let mut validity_exact = true;
    for _ in 0..100 {
        let p = r.gen_range(1..=16);
        let w = r.gen_range(p..=96);
        let h = r.gen_range(p..=72);
        let intr = Intrinsics::new(0.8 * w as f64, 0.8 * w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        let t = Vector3::new(r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0), r.gen_range(0.0..2.0));
        let extr = Extrinsics::new(random_rotation(&mut r).into_inner(), t).unwrap();
        let values = (0..w * h)
            .map(|_| if r.gen_bool(0.2) { 0.0 } else { r.gen_range(0.2..8.0) })
            .collect();
        let depth = DepthMap::from_values(w, h, values).unwrap();
        let cmap = backproject(&depth, &intr, &extr).unwrap();
        let avg = pool_patch_coords(&cmap, p, PoolMode::Average).unwrap();
        let mm = pool_patch_coords(&cmap, p, PoolMode::MinMax).unwrap();
        for pr in 0..h / p {
            for pc in 0..w / p {
                let mut sum = [0.0; 3];
                let mut lo = [f64::INFINITY; 3];
                let mut hi = [f64::NEG_INFINITY; 3];
                let mut n = 0;
                for i in pr * p..(pr + 1) * p {
                    for j in pc * p..(pc + 1) * p {
                        if !cmap.valid()[i * w + j] {
                            continue;
                        }
                        let q = cmap.coords()[i * w + j];
                        for a in 0..3 {
                            sum[a] += q[a];
                            lo[a] = lo[a].min(q[a]);
                            hi[a] = hi[a].max(q[a]);
                        }
                        n += 1;
                    }
                }
                match (avg.get(pr, pc), mm.get(pr, pc)) {
                    (Some(a), Some(m)) if n > 0 => {
                        for k in 0..3 {
                            worst_avg = worst_avg.max((a[k] - sum[k] / n as f64).abs());
                            minmax_exact &= m[k] == lo[k] && m[3 + k] == hi[k];
                        }
                    }
                    (None, None) if n == 0 => {}
                    _ => validity_exact = false,
                }
            }
        }
    }
    outcome(
        worst_avg < 1e-6 && minmax_exact && validity_exact,
        format!(
            "100 maps, max average error {worst_avg:.1e} m, minmax exact: {minmax_exact}, \
             empty-patch handling exact: {validity_exact}"
        ),
    )
}

// 7. analytic gradients against central differences
fn gradient_checks() -> Outcome {
    let mut r = rng(7);
    let (step, floor) = (1e-4, 1e-6);
    let mut worst_nce: f64 = 0.0;
    let mut worst_bce: f64 = 0.0;
    for _ in 0..50 {
        let case = random_grad_case(&mut r, DEFAULT_TAU, 1e-3);
        let batch = case.batch();
        let nce = infonce_loss(&batch, &case.head).unwrap();
        let bce = bce_loss(&batch, &case.head).unwrap();
        worst_nce = worst_nce.max(max_grad_rel_error(&case, &nce, infonce_ref, step, floor));
        worst_bce = worst_bce.max(max_grad_rel_error(&case, &bce, bce_ref, step, floor));
    }
    outcome(
        worst_nce < 1e-4 && worst_bce < 1e-4,
        format!("50 batches at tau = {DEFAULT_TAU}, max rel error InfoNCE {worst_nce:.1e}, BCE {worst_bce:.1e} (< 1e-4)"),
    )
}

// 8. position-only grounding with identity heads
fn grounding_oracle() -> Outcome {
    let mut r = rng(8);
    let g = DEFAULT_GRID_RESOLUTION;
    let d = 64;
    let head = GroundingHead::identity(d, DEFAULT_TAU).unwrap();
    let (mut single_ok, mut multi_ok) = (0, 0);
    let queries = 100;
    for _ in 0..queries {
        let n = r.gen_range(2..=8);
        let centers: Vec<[f64; 3]> = loop {
            let cs: Vec<[f64; 3]> = (0..n)
                .map(|_| [r.gen_range(0.0..6.0), r.gen_range(0.0..5.0), r.gen_range(0.0..3.0)])
                .collect();
            let cells: Vec<[f64; 3]> = cs.iter().map(|c| c.map(|v| (v / g).floor())).collect();
            let separated = (0..n).all(|a| {
                (a + 1..n).all(|b| (0..3).map(|k| (cells[a][k] - cells[b][k]).abs()).fold(0.0, f64::max) >= 2.0)
            });
            if separated {
                break cs;
            }
        };
        let objects: Vec<_> = centers
            .iter()
            .enumerate()
            .map(|(k, c)| pe_only_embedding(100 + k as i64, *c, d, g).unwrap())
            .collect();
        let target = r.gen_range(0..n);
        let query = sinusoidal_pe(centers[target], d, g).unwrap();
        let sims = head.similarities(&objects, &query).unwrap();
        let scored: Vec<(i64, f64)> = objects.iter().map(|o| o.object_id).zip(sims).collect();
        let want = 100 + target as i64;
        if select_single(&scored).unwrap() == want {
            single_ok += 1;
        }
        if select_multi(&scored, DEFAULT_TAU, DEFAULT_MULTI_THRESHOLD).unwrap().contains(&want) {
            multi_ok += 1;
        }
    }
    outcome(
        single_ok == queries && multi_ok == queries,
        format!("single-target accuracy {single_ok}/{queries}, multi-target sets containing the target {multi_ok}/{queries}"),
    )
}

// 9. box IoU reference values
fn iou_values() -> Outcome {
    let cube = |id, x| ObjectProposal::new(id, [x, 0.5, 0.5], [1.0, 1.0, 1.0]).unwrap();
    let same = aabb_iou(&cube(0, 0.5), &cube(1, 0.5));
    let disjoint = aabb_iou(&cube(0, 0.5), &cube(1, 3.0));
    let half = aabb_iou(&cube(0, 0.5), &cube(1, 1.0));
    outcome(
        same == 1.0 && disjoint == 0.0 && half == 1.0 / 3.0,
        format!("identical {same}, disjoint {disjoint}, half-shifted {half} (expect exactly 1/3)"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

// 10. wall-clock bounds for greedy selection and single-frame voxelization
fn performance() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let spec = SyntheticSceneSpec {
            seed: 10,
            n_frames: 300,
            width: 320,
            height: 240,
            ..SyntheticSceneSpec::default()
        };
        let scene = generate_synthetic(&spec).unwrap();
        let cov = scene_coverage(&scene, 0.1, 1).unwrap();
        let greedy_times: Vec<f64> = [SamplerConfig::max_coverage(32), SamplerConfig::adaptive()]
            .iter()
            .map(|cfg| {
                let t = Instant::now();
                sample(&cov, cfg).unwrap();
                secs(t.elapsed())
            })
            .collect();
        let greedy_worst = greedy_times.iter().cloned().fold(0.0, f64::max);

        let big = SyntheticSceneSpec {
            seed: 11,
            n_frames: 1,
            width: 640,
            height: 480,
            ..SyntheticSceneSpec::default()
        };
        let frame = generate_synthetic(&big).unwrap().frames.remove(0);
        let vox_times: Vec<f64> = (0..5)
            .map(|_| {
                let t = Instant::now();
                let cmap = frame.backproject().unwrap();
                voxelize(&cmap, 0.1, frame.index).unwrap();
                secs(t.elapsed())
            })
            .collect();
        let vox = median(vox_times);
        outcome(
            greedy_worst < 1.0 && vox < 0.050,
            format!(
                "greedy on 300 frames ({} voxels): {:.1} ms (< 1000 ms); 640x480 back-projection + \
                 voxelization median {:.2} ms (< 50 ms); single thread",
                cov.universe().len(),
                greedy_worst * 1e3,
                vox * 1e3
            ),
        )
    })
}

fn run_pipeline(out: &Path, seed: u64) -> Result<()> {
    let spec = SyntheticSceneSpec {
        seed,
        n_frames: 40,
        ..SyntheticSceneSpec::default()
    };
    let scene = generate_synthetic(&spec)?;
    scene.save(&out.join("scenes"), formats::DEFAULT_DEPTH_SCALE)?;
    let manifest = load_scene(&out.join("scenes"), &scene.scene_id, formats::DEFAULT_DEPTH_SCALE)?;
    let cov = scene_coverage(&manifest, DEFAULT_VOXEL_SIZE, 1)?;
    let dst = out.join("out").join(&scene.scene_id);
    io::write_atomic(&dst.join("voxels.v3dc"), &encode_cache(&cov))?;
    let cfg = SamplerConfig::max_coverage(8);
    let res = sample(&cov, &cfg)?;
    let report = SamplingReport::new(&scene.scene_id, &cov, &cfg, res.clone(), 0.0);
    io::write_json(&dst.join("sampling.json"), &report)?;
    let enc = EncodeConfig {
        seed,
        ..EncodeConfig::default()
    };
    for &idx in &res.selected {
        use scene_sampler::ingest::FrameSource;
        let frame = manifest.load_frame(manifest.position_of(idx).unwrap())?;
        let fused = encode_frame(&frame, &enc)?;
        let meta = TensorMeta {
            frame: idx,
            mode: enc.pool.as_str().into(),
            grid_resolution: enc.pe.grid_resolution(),
        };
        write_tensor(&dst.join("embeddings").join(format!("{idx}.bin")), &fused.values, meta)?;
    }
    Ok(())
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.insert(rel, std::fs::read(&path).unwrap());
        }
    }
}

fn selection_with_threads(threads: usize) -> (Vec<u32>, Vec<u8>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let scene = generate_synthetic(&suite_spec(3)).unwrap();
        let cov = scene_coverage(&scene, DEFAULT_VOXEL_SIZE, 1).unwrap();
        let res = sample(&cov, &SamplerConfig::max_coverage(16)).unwrap();
        (res.selected, encode_cache(&cov))
    })
}

// 11. identical outputs across runs and thread counts
fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(a.path(), 42).unwrap();
    run_pipeline(b.path(), 42).unwrap();
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    collect_files(a.path(), a.path(), &mut fa);
    collect_files(b.path(), b.path(), &mut fb);
    let tensors = fa.keys().filter(|k| k.ends_with(".bin")).count();
    let identical = fa == fb && tensors > 0;

    let (sel1, cache1) = selection_with_threads(1);
    let (sel4, cache4) = selection_with_threads(4);
    let thread_invariant = sel1 == sel4 && cache1 == cache4;
    outcome(
        identical && thread_invariant,
        format!(
            "{} files ({tensors} tensors) byte-identical across runs: {identical}; \
             selection and voxel cache identical for 1 and 4 threads: {thread_invariant}",
            fa.len()
        ),
    )
}

fn main() {
    // honour `cargo test -- --list` style probes from tooling
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut suite = Vec::new();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        println!(
            "[{}] AC-{n:<2} {name}: {} [{:.2} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            secs(t.elapsed())
        );
        results.push((n, name, o));
    };
    run(1, "greedy approximation", &mut greedy_approximation);
    run(2, "max coverage vs uniform", &mut || mc_vs_uniform(&mut suite));
    run(3, "adaptive stop", &mut || adaptive_stop(&suite));
    run(4, "back-projection round trip", &mut backprojection_round_trip);
    run(5, "position encoding", &mut pe_correctness);
    run(6, "patch pooling", &mut pooling_oracle);
    run(7, "loss gradients", &mut gradient_checks);
    run(8, "position-only grounding", &mut grounding_oracle);
    run(9, "box IoU", &mut iou_values);
    run(10, "performance", &mut performance);
    run(11, "determinism", &mut determinism);

    let failed: Vec<_> = results.iter().filter(|(_, _, o)| !o.pass).map(|(n, _, _)| *n).collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
