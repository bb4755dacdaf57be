//! Proposal-based 3D grounding: patch assignment, object embeddings, the
//! contrastive objective with its projection heads, selection rules, and
//! box-overlap metrics.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CoordinateMap;
use crate::mlp::{dot, Mlp, MlpGrads};
use crate::posenc::{patch_grid_shape, sinusoidal_pe};
use crate::tensor::Tensor3;

pub const DEFAULT_TAU: f64 = 0.07;
pub const DEFAULT_MULTI_THRESHOLD: f64 = 0.25;
pub const DEFAULT_IOU_THRESHOLDS: [f64; 2] = [0.25, 0.5];

/// Axis-aligned box; `extent` holds full side lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectProposal {
    pub id: i64,
    pub center: [f64; 3],
    pub extent: [f64; 3],
    pub score: Option<f64>,
}

impl ObjectProposal {
    pub fn new(id: i64, center: [f64; 3], extent: [f64; 3]) -> Result<Self> {
        if !extent.iter().all(|e| *e > 0.0 && e.is_finite()) || !center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid(format!(
                "box {id} needs finite center and positive extents, got {center:?} / {extent:?}"
            )));
        }
        Ok(ObjectProposal {
            id,
            center,
            extent,
            score: None,
        })
    }

    pub fn min_corner(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.center[a] - self.extent[a] / 2.0)
    }

    pub fn max_corner(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.center[a] + self.extent[a] / 2.0)
    }

    pub fn volume(&self) -> f64 {
        self.extent.iter().product()
    }

    /// Closed-box containment.
    #[inline]
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| (p[a] - self.center[a]).abs() <= self.extent[a] / 2.0)
    }
}

/// Volume of intersection over volume of union.
pub fn aabb_iou(a: &ObjectProposal, b: &ObjectProposal) -> f64 {
    let (amin, amax, bmin, bmax) = (a.min_corner(), a.max_corner(), b.min_corner(), b.max_corner());
    let mut inter = 1.0;
    for k in 0..3 {
        let overlap = amax[k].min(bmax[k]) - amin[k].max(bmin[k]);
        if overlap <= 0.0 {
            return 0.0;
        }
        inter *= overlap;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Which patches of a frame belong to an object.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMask {
    pub rows: usize,
    pub cols: usize,
    pub mask: Vec<bool>,
}

impl PatchMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_selected(&self, r: usize, c: usize) -> bool {
        self.mask[r * self.cols + c]
    }
}

/// Selects patches where strictly more than half of the valid pixels fall
/// inside the box. Patches without valid pixels are never selected.
pub fn assign_patches(
    bbox: &ObjectProposal,
    cmap: &CoordinateMap,
    patch_size: usize,
) -> Result<PatchMask> {
    let (rows, cols) = patch_grid_shape(cmap.height(), cmap.width(), patch_size)?;
    let p = patch_size;
    let mut mask = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (mut valid, mut inside) = (0usize, 0usize);
            for i in r * p..(r + 1) * p {
                for j in c * p..(c + 1) * p {
                    if let Some(q) = cmap.get(i, j) {
                        valid += 1;
                        inside += bbox.contains(q) as usize;
                    }
                }
            }
            mask[r * cols + c] = valid > 0 && 2 * inside > valid;
        }
    }
    Ok(PatchMask { rows, cols, mask })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectEmbedding {
    pub object_id: i64,
    pub values: Vec<f64>,
}

/// Mean visual feature over the selected patches plus the PE of the box center.
pub fn pool_object_features(
    object_id: i64,
    mask: &PatchMask,
    visual: &Tensor3,
    center: [f64; 3],
    grid_resolution: f64,
) -> Result<ObjectEmbedding> {
    pool_object_features_multi(object_id, &[(mask, visual)], center, grid_resolution)
}

/// Like [`pool_object_features`], averaging selected patches across several frames.
pub fn pool_object_features_multi(
    object_id: i64,
    views: &[(&PatchMask, &Tensor3)],
    center: [f64; 3],
    grid_resolution: f64,
) -> Result<ObjectEmbedding> {
    let d = views
        .first()
        .map(|(_, v)| v.dim())
        .ok_or(Error::ObjectNotVisible(object_id))?;
    let mut sum = vec![0.0f64; d];
    let mut n = 0usize;
    for (mask, visual) in views {
        if [mask.rows, mask.cols] != [visual.rows(), visual.cols()] || visual.dim() != d {
            return Err(Error::invalid(format!(
                "patch mask {}x{} does not match visual grid {:?}",
                mask.rows,
                mask.cols,
                visual.shape()
            )));
        }
        for r in 0..mask.rows {
            for c in 0..mask.cols {
                if mask.is_selected(r, c) {
                    for (s, v) in sum.iter_mut().zip(visual.cell(r, c)) {
                        *s += *v as f64;
                    }
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return Err(Error::ObjectNotVisible(object_id));
    }
    let pe = sinusoidal_pe(center, d, grid_resolution)?;
    let values = sum.iter().zip(&pe).map(|(s, p)| s / n as f64 + p).collect();
    Ok(ObjectEmbedding { object_id, values })
}

/// Fallback for objects with no selected patch: the center PE alone.
pub fn pe_only_embedding(
    object_id: i64,
    center: [f64; 3],
    d: usize,
    grid_resolution: f64,
) -> Result<ObjectEmbedding> {
    Ok(ObjectEmbedding {
        object_id,
        values: sinusoidal_pe(center, d, grid_resolution)?,
    })
}

/// Embeds every proposal from the given `(coordinates, visual features)` views.
/// Returns the embeddings and how many objects fell back to PE only.
pub fn embed_objects(
    proposals: &[ObjectProposal],
    views: &[(&CoordinateMap, &Tensor3)],
    patch_size: usize,
    grid_resolution: f64,
    d: usize,
) -> Result<(Vec<ObjectEmbedding>, usize)> {
    let mut fallbacks = 0;
    let mut out = Vec::with_capacity(proposals.len());
    for bbox in proposals {
        let masks = views
            .iter()
            .map(|(cmap, _)| assign_patches(bbox, cmap, patch_size))
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(&PatchMask, &Tensor3)> =
            masks.iter().zip(views).map(|(m, (_, v))| (m, *v)).collect();
        match pool_object_features_multi(bbox.id, &pairs, bbox.center, grid_resolution) {
            Ok(e) => out.push(e),
            Err(Error::ObjectNotVisible(id)) => {
                log::debug!("object {id} not visible in any view; using its center encoding");
                fallbacks += 1;
                out.push(pe_only_embedding(bbox.id, bbox.center, d, grid_resolution)?);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, fallbacks))
}

/// Projection heads for objects (`f`) and the query (`g`) plus the temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingHead {
    pub f: Mlp,
    pub g: Mlp,
    pub tau: f64,
}

impl GroundingHead {
    pub fn new(f: Mlp, g: Mlp, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
        }
        if f.output_dim() != g.output_dim() {
            return Err(Error::invalid(format!(
                "head output dims differ: f -> {}, g -> {}",
                f.output_dim(),
                g.output_dim()
            )));
        }
        Ok(GroundingHead { f, g, tau })
    }

    /// Both heads are exact identities on `R^d`.
    pub fn identity(d: usize, tau: f64) -> Result<Self> {
        Self::new(Mlp::identity(d), Mlp::identity(d), tau)
    }

    /// `d -> hidden -> d` heads with seeded random weights.
    pub fn random(d: usize, hidden: usize, tau: f64, seed: u64) -> Result<Self> {
        Self::new(
            Mlp::random(d, hidden, d, seed),
            Mlp::random(d, hidden, d, seed.wrapping_add(1)),
            tau,
        )
    }

    /// Similarity `f(e) . g(h)` for every object, in batch order.
    pub fn similarities(&self, objects: &[ObjectEmbedding], query: &[f64]) -> Result<Vec<f64>> {
        let q = self.g.forward(query)?;
        objects
            .iter()
            .map(|o| Ok(dot(&self.f.forward(&o.values)?, &q)))
            .collect()
    }
}

/// Candidate objects, the positive subset, and the query hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingBatch {
    objects: Vec<ObjectEmbedding>,
    positives: Vec<bool>,
    query: Vec<f64>,
}

impl GroundingBatch {
    pub fn new(objects: Vec<ObjectEmbedding>, positives: &[i64], query: Vec<f64>) -> Result<Self> {
        if objects.len() < 2 {
            return Err(Error::invalid("a grounding batch needs at least two objects"));
        }
        let ids: HashSet<i64> = objects.iter().map(|o| o.object_id).collect();
        if ids.len() != objects.len() {
            return Err(Error::invalid("object ids must be unique"));
        }
        if positives.is_empty() {
            return Err(Error::invalid("a grounding batch needs at least one positive"));
        }
        if let Some(p) = positives.iter().find(|p| !ids.contains(p)) {
            return Err(Error::invalid(format!("positive id {p} is not among the objects")));
        }
        let pos: HashSet<i64> = positives.iter().copied().collect();
        let positives = objects.iter().map(|o| pos.contains(&o.object_id)).collect();
        Ok(GroundingBatch {
            objects,
            positives,
            query,
        })
    }

    pub fn objects(&self) -> &[ObjectEmbedding] {
        &self.objects
    }

    pub fn query(&self) -> &[f64] {
        &self.query
    }

    pub fn is_positive(&self, k: usize) -> bool {
        self.positives[k]
    }

    pub fn query_mut(&mut self) -> &mut [f64] {
        &mut self.query
    }
}

/// Loss value with gradients for both heads and the query vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_f: MlpGrads,
    pub grad_g: MlpGrads,
    pub grad_query: Vec<f64>,
}

/// Forward pass shared by both losses; `dscore` maps similarities to
/// `(loss, d loss / d similarity)`.
fn loss_with_backprop(
    batch: &GroundingBatch,
    head: &GroundingHead,
    dscore: impl FnOnce(&[f64]) -> (f64, Vec<f64>),
) -> Result<LossOutput> {
    let (q, g_trace) = head.g.forward_traced(&batch.query)?;
    let mut zs = Vec::with_capacity(batch.objects.len());
    for o in &batch.objects {
        zs.push(head.f.forward_traced(&o.values)?);
    }
    let scores: Vec<f64> = zs.iter().map(|(z, _)| dot(z, &q)).collect();
    let (loss, ds) = dscore(&scores);

    let mut grad_f = head.f.zero_grads();
    let mut grad_g = head.g.zero_grads();
    let mut dq = vec![0.0; q.len()];
    for ((o, (z, trace)), &g) in batch.objects.iter().zip(&zs).zip(&ds) {
        if g == 0.0 {
            continue;
        }
        let dz: Vec<f64> = q.iter().map(|qi| g * qi).collect();
        head.f.backward(&o.values, trace, &dz, &mut grad_f);
        for (acc, zi) in dq.iter_mut().zip(z) {
            *acc += g * zi;
        }
    }
    let grad_query = head.g.backward(&batch.query, &g_trace, &dq, &mut grad_g);
    Ok(LossOutput {
        loss,
        grad_f,
        grad_g,
        grad_query,
    })
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Multi-positive contrastive loss
/// `-ln( sum_{k in O+} exp(s_k / tau) / sum_{k in O} exp(s_k / tau) )`,
/// not normalized by the number of positives.
pub fn infonce_loss(batch: &GroundingBatch, head: &GroundingHead) -> Result<LossOutput> {
    let all_positive = batch.positives.iter().all(|p| *p);
    if all_positive {
        log::warn!("every object is a positive; the contrastive loss is identically zero");
    }
    let tau = head.tau;
    let positives = &batch.positives;
    loss_with_backprop(batch, head, |scores| {
        let n = scores.len();
        if all_positive {
            return (0.0, vec![0.0; n]);
        }
        let logits: Vec<f64> = scores.iter().map(|s| s / tau).collect();
        let lse_all = log_sum_exp(logits.iter().copied());
        let pos_iter = logits.iter().zip(positives).filter(|(_, p)| **p).map(|(l, _)| *l);
        let lse_pos = log_sum_exp(pos_iter);
        let loss = (lse_all - lse_pos).max(0.0);
        let grads = logits
            .iter()
            .zip(positives)
            .map(|(&l, &pos)| {
                let p_all = (l - lse_all).exp();
                let p_pos = if pos { (l - lse_pos).exp() } else { 0.0 };
                (p_all - p_pos) / tau
            })
            .collect();
        (loss, grads)
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of `sigmoid(logit)` against 0/1 labels.
pub fn bce_from_logits(logits: &[f64], labels: &[bool]) -> f64 {
    let n = logits.len().max(1) as f64;
    logits
        .iter()
        .zip(labels)
        .map(|(&x, &y)| x.max(0.0) - if y { x } else { 0.0 } + (-x.abs()).exp().ln_1p())
        .sum::<f64>()
        / n
}

/// Independent per-object sigmoid cross-entropy on logits `s_k / tau`.
pub fn bce_loss(batch: &GroundingBatch, head: &GroundingHead) -> Result<LossOutput> {
    let tau = head.tau;
    let labels = &batch.positives;
    loss_with_backprop(batch, head, |scores| {
        let logits: Vec<f64> = scores.iter().map(|s| s / tau).collect();
        let n = logits.len() as f64;
        let loss = bce_from_logits(&logits, labels);
        let grads = logits
            .iter()
            .zip(labels)
            .map(|(&x, &y)| (sigmoid(x) - if y { 1.0 } else { 0.0 }) / (n * tau))
            .collect();
        (loss, grads)
    })
}

fn ranked(similarities: &[(i64, f64)]) -> Vec<(i64, f64)> {
    let mut v = similarities.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// Highest similarity wins; ties go to the lowest id.
pub fn select_single(similarities: &[(i64, f64)]) -> Result<i64> {
    ranked(similarities)
        .first()
        .map(|(id, _)| *id)
        .ok_or_else(|| Error::invalid("no candidates to select from"))
}

/// Smallest top-ranked prefix whose softmax probability mass exceeds `p`.
pub fn select_multi(similarities: &[(i64, f64)], tau: f64, p: f64) -> Result<Vec<i64>> {
    if similarities.is_empty() {
        return Err(Error::invalid("no candidates to select from"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("probability threshold must lie in (0, 1), got {p}")));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let order = ranked(similarities);
    let lse = log_sum_exp(order.iter().map(|(_, s)| s / tau));
    let mut mass = 0.0;
    let mut out = Vec::new();
    for (id, s) in &order {
        out.push(*id);
        mass += (s / tau - lse).exp();
        if mass > p {
            break;
        }
    }
    Ok(out)
}

/// Box as it appears in evaluation records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub center: [f64; 3],
    pub extent: [f64; 3],
}

impl BoxRecord {
    pub fn to_proposal(&self, id: i64) -> Result<ObjectProposal> {
        ObjectProposal::new(id, self.center, self.extent)
    }
}

impl From<&ObjectProposal> for BoxRecord {
    fn from(p: &ObjectProposal) -> Self {
        BoxRecord {
            center: p.center,
            extent: p.extent,
        }
    }
}

/// One grounding query: predicted boxes and ground-truth boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: serde_json::Value,
    #[serde(default)]
    pub predicted: Vec<BoxRecord>,
    #[serde(default)]
    pub target: Vec<BoxRecord>,
}

/// Aggregate accuracy and F1 per IoU threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub thresholds: Vec<f64>,
    /// Accuracy over single-target records; `None` if there are none.
    pub acc: Vec<Option<f64>>,
    /// Mean per-record F1 over all records; `None` if there are no records.
    pub f1: Vec<Option<f64>>,
    pub n: usize,
    pub n_single: usize,
    pub skipped: usize,
}

impl EvalSummary {
    /// `{"acc_0.25": .., "acc_0.5": .., "f1_0.25": .., "f1_0.5": .., "n": ..}` plus counts.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (t, a) in self.thresholds.iter().zip(&self.acc) {
            map.insert(format!("acc_{t}"), serde_json::json!(a));
        }
        for (t, f) in self.thresholds.iter().zip(&self.f1) {
            map.insert(format!("f1_{t}"), serde_json::json!(f));
        }
        map.insert("n".into(), self.n.into());
        map.insert("n_single".into(), self.n_single.into());
        map.insert("skipped".into(), self.skipped.into());
        serde_json::Value::Object(map)
    }
}

/// Per-record F1 after greedy one-to-one matching of highest-IoU pairs with
/// IoU above `threshold`. Two empty sets score 1.
pub fn record_f1(predicted: &[ObjectProposal], target: &[ObjectProposal], threshold: f64) -> f64 {
    if predicted.is_empty() && target.is_empty() {
        return 1.0;
    }
    if predicted.is_empty() || target.is_empty() {
        return 0.0;
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in predicted.iter().enumerate() {
        for (j, t) in target.iter().enumerate() {
            let iou = aabb_iou(p, t);
            if iou > threshold {
                pairs.push((iou, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; predicted.len()];
    let mut used_t = vec![false; target.len()];
    let mut tp = 0usize;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            tp += 1;
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / predicted.len() as f64;
    let recall = tp as f64 / target.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Scores records at each threshold. Records with invalid boxes are skipped.
pub fn eval_metrics(records: &[EvalRecord], thresholds: &[f64]) -> EvalSummary {
    let mut parsed = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for rec in records {
        let boxes = |bs: &[BoxRecord]| -> Result<Vec<ObjectProposal>> {
            bs.iter().enumerate().map(|(k, b)| b.to_proposal(k as i64)).collect()
        };
        match (boxes(&rec.predicted), boxes(&rec.target)) {
            (Ok(p), Ok(t)) => parsed.push((p, t)),
            (Err(e), _) | (_, Err(e)) => {
                log::warn!("skipping record {}: {e}", rec.query_id);
                skipped += 1;
            }
        }
    }
    let n = parsed.len();
    let singles: Vec<_> = parsed.iter().filter(|(_, t)| t.len() == 1).collect();
    let mut acc = Vec::with_capacity(thresholds.len());
    let mut f1 = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        acc.push((!singles.is_empty()).then(|| {
            let hits = singles
                .iter()
                .filter(|(p, g)| p.first().is_some_and(|p| aabb_iou(p, &g[0]) > t))
                .count();
            hits as f64 / singles.len() as f64
        }));
        f1.push((n > 0).then(|| {
            parsed.iter().map(|(p, g)| record_f1(p, g, t)).sum::<f64>() / n as f64
        }));
    }
    EvalSummary {
        thresholds: thresholds.to_vec(),
        acc,
        f1,
        n,
        n_single: singles.len(),
        skipped,
    }
}
