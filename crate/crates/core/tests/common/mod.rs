//! Test oracles shared by the integration suites. Everything here is written
//! independently of the library code paths it checks.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scene_sampler::grounding::{GroundingBatch, GroundingHead, LossOutput, ObjectEmbedding};
use scene_sampler::mlp::Mlp;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reference scalar forward pass of a two-layer ReLU MLP.
pub fn mlp_forward_ref(m: &Mlp, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (inp, hid, out) = (m.input_dim(), m.hidden_dim(), m.output_dim());
    let mut pre = vec![0.0; hid];
    for h in 0..hid {
        let mut acc = m.b1[h];
        for i in 0..inp {
            acc += m.w1[h * inp + i] * x[i];
        }
        pre[h] = acc;
    }
    let mut y = vec![0.0; out];
    for o in 0..out {
        let mut acc = m.b2[o];
        for h in 0..hid {
            acc += m.w2[o * hid + h] * pre[h].max(0.0);
        }
        y[o] = acc;
    }
    (y, pre)
}

/// Contrastive loss evaluated directly from its definition (no shared code).
pub fn infonce_ref(objs: &[Vec<f64>], pos: &[bool], query: &[f64], f: &Mlp, g: &Mlp, tau: f64) -> f64 {
    let q = mlp_forward_ref(g, query).0;
    let logits: Vec<f64> = objs
        .iter()
        .map(|o| {
            let z = mlp_forward_ref(f, o).0;
            z.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / tau
        })
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let all: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let num: f64 = logits.iter().zip(pos).filter(|(_, p)| **p).map(|(l, _)| (l - m).exp()).sum();
    -(num / all).ln()
}

pub fn bce_ref(objs: &[Vec<f64>], pos: &[bool], query: &[f64], f: &Mlp, g: &Mlp, tau: f64) -> f64 {
    let q = mlp_forward_ref(g, query).0;
    let n = objs.len() as f64;
    objs.iter()
        .zip(pos)
        .map(|(o, &y)| {
            let z = mlp_forward_ref(f, o).0;
            let x = z.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / tau;
            let p = 1.0 / (1.0 + (-x).exp());
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

pub struct GradCase {
    pub objs: Vec<Vec<f64>>,
    pub pos: Vec<bool>,
    pub query: Vec<f64>,
    pub head: GroundingHead,
}

impl GradCase {
    pub fn batch(&self) -> GroundingBatch {
        let objects = self
            .objs
            .iter()
            .enumerate()
            .map(|(k, v)| ObjectEmbedding {
                object_id: k as i64,
                values: v.clone(),
            })
            .collect();
        let positives: Vec<i64> = self
            .pos
            .iter()
            .enumerate()
            .filter(|(_, p)| **p)
            .map(|(k, _)| k as i64)
            .collect();
        GroundingBatch::new(objects, &positives, self.query.clone()).unwrap()
    }

    fn min_abs_preactivation(&self) -> f64 {
        let mut m = f64::INFINITY;
        for o in &self.objs {
            for p in mlp_forward_ref(&self.head.f, o).1 {
                m = m.min(p.abs());
            }
        }
        for p in mlp_forward_ref(&self.head.g, &self.query).1 {
            m = m.min(p.abs());
        }
        m
    }
}

/// Random batch with d <= 16 and 2..=8 objects whose hidden pre-activations all
/// stay at least `margin` away from the ReLU kink, so a central difference of
/// step 1e-4 never straddles it.
pub fn random_grad_case(r: &mut ChaCha8Rng, tau: f64, margin: f64) -> GradCase {
    loop {
        let d = r.gen_range(2..=16);
        let hidden = r.gen_range(2..=16);
        let n = r.gen_range(2..=8);
        let objs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.gen_range(-0.5..0.5)).collect())
            .collect();
        let mut pos: Vec<bool> = (0..n).map(|_| r.gen_bool(0.3)).collect();
        pos[r.gen_range(0..n)] = true;
        if pos.iter().all(|p| *p) {
            pos[0] = false;
            pos[n - 1] = true;
        }
        let query = (0..d).map(|_| r.gen_range(-0.5..0.5)).collect();
        let seed = r.gen();
        let head = GroundingHead::new(
            Mlp::random(d, hidden, d, seed),
            Mlp::random(d, hidden, d, seed ^ 0x5555),
            tau,
        )
        .unwrap();
        let case = GradCase { objs, pos, query, head };
        if case.min_abs_preactivation() >= margin {
            return case;
        }
    }
}

/// Largest relative error `|a - n| / max(|a|, |n|, floor)` between analytic
/// gradients and central differences of `loss_ref`.
pub fn max_grad_rel_error(
    case: &GradCase,
    out: &LossOutput,
    loss_ref: fn(&[Vec<f64>], &[bool], &[f64], &Mlp, &Mlp, f64) -> f64,
    step: f64,
    floor: f64,
) -> f64 {
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);
    let mut worst: f64 = 0.0;
    let tau = case.head.tau;

    let mut f = case.head.f.clone();
    let gf = out.grad_f.flatten();
    for k in 0..f.param_count() {
        let orig = *f.param_mut(k);
        *f.param_mut(k) = orig + step;
        let up = loss_ref(&case.objs, &case.pos, &case.query, &f, &case.head.g, tau);
        *f.param_mut(k) = orig - step;
        let down = loss_ref(&case.objs, &case.pos, &case.query, &f, &case.head.g, tau);
        *f.param_mut(k) = orig;
        worst = worst.max(rel(gf[k], (up - down) / (2.0 * step)));
    }

    let mut g = case.head.g.clone();
    let gg = out.grad_g.flatten();
    for k in 0..g.param_count() {
        let orig = *g.param_mut(k);
        *g.param_mut(k) = orig + step;
        let up = loss_ref(&case.objs, &case.pos, &case.query, &case.head.f, &g, tau);
        *g.param_mut(k) = orig - step;
        let down = loss_ref(&case.objs, &case.pos, &case.query, &case.head.f, &g, tau);
        *g.param_mut(k) = orig;
        worst = worst.max(rel(gg[k], (up - down) / (2.0 * step)));
    }

    let mut q = case.query.clone();
    for k in 0..q.len() {
        let orig = q[k];
        q[k] = orig + step;
        let up = loss_ref(&case.objs, &case.pos, &q, &case.head.f, &case.head.g, tau);
        q[k] = orig - step;
        let down = loss_ref(&case.objs, &case.pos, &q, &case.head.f, &case.head.g, tau);
        q[k] = orig;
        worst = worst.max(rel(out.grad_query[k], (up - down) / (2.0 * step)));
    }
    worst
}

/// Exact maximum coverage by enumerating subsets of sets given as id lists.
pub fn exhaustive_cover(sets: &[Vec<u32>], budget: usize) -> usize {
    let n = sets.len();
    let mut best = 0;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize > budget {
            continue;
        }
        let mut seen = std::collections::HashSet::new();
        for (k, s) in sets.iter().enumerate() {
            if mask & (1 << k) != 0 {
                seen.extend(s.iter().copied());
            }
        }
        best = best.max(seen.len());
    }
    best
}
