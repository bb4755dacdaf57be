use std::collections::HashMap;
use std::path::Path;

use serde_json::Value;

use scene_sampler::grounding::{
    eval_metrics, pe_only_embedding, select_multi, select_single, BoxRecord, EvalRecord, GroundingHead,
};
use scene_sampler::ingest::{generate_synthetic, SyntheticSceneSpec};
use scene_sampler::io::{write_atomic, write_json};
use scene_sampler::posenc::sinusoidal_pe;
use scene_sampler::{Error, Result};

use crate::config::Settings;
use crate::scenes::Status;

pub const METRICS_FILE: &str = "metrics.json";

/// Parses a JSON-lines file, skipping blank lines. Returns the records and
/// the number of malformed lines.
fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(Vec<T>, usize)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::FatalConfig(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut bad = 0;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) => {
                log::warn!("{}:{}: skipping malformed record: {e}", path.display(), n + 1);
                bad += 1;
            }
        }
    }
    Ok((out, bad))
}

#[derive(serde::Deserialize)]
struct TargetRecord {
    query_id: Value,
    target: Vec<BoxRecord>,
}

/// Loads predictions and, if given, joins targets from a second file by `query_id`.
pub fn load_records(pred: &Path, target: Option<&Path>) -> Result<(Vec<EvalRecord>, usize)> {
    let (mut records, mut bad) = read_jsonl::<EvalRecord>(pred)?;
    if let Some(tpath) = target {
        let (targets, tbad) = read_jsonl::<TargetRecord>(tpath)?;
        bad += tbad;
        let by_id: HashMap<String, Vec<BoxRecord>> = targets
            .into_iter()
            .map(|t| (t.query_id.to_string(), t.target))
            .collect();
        let before = records.len();
        records.retain_mut(|r| match by_id.get(&r.query_id.to_string()) {
            Some(t) => {
                r.target = t.clone();
                true
            }
            None => {
                log::warn!("no target for query {}", r.query_id);
                false
            }
        });
        bad += before - records.len();
    }
    Ok((records, bad))
}

/// Grounding with pure center encodings: each object in turn is the query
/// target and the query vector is its own center encoding.
pub fn oracle_records(s: &Settings, scenes: usize) -> Result<Vec<EvalRecord>> {
    let head = GroundingHead::identity(s.dim, s.tau)?;
    let mut records = Vec::new();
    for k in 0..scenes as u64 {
        let scene = generate_synthetic(&SyntheticSceneSpec {
            seed: s.seed.wrapping_add(k),
            n_frames: 1,
            ..SyntheticSceneSpec::default()
        })?;
        let objects = scene
            .objects
            .iter()
            .map(|o| pe_only_embedding(o.id, o.center, s.dim, s.grid_res))
            .collect::<Result<Vec<_>>>()?;
        for target in &scene.objects {
            let query = sinusoidal_pe(target.center, s.dim, s.grid_res)?;
            let sims = head.similarities(&objects, &query)?;
            let scored: Vec<(i64, f64)> = objects.iter().map(|o| o.object_id).zip(sims).collect();
            let best = select_single(&scored)?;
            let multi = select_multi(&scored, s.tau, s.multi_threshold)?;
            if !multi.contains(&target.id) {
                log::warn!("{}: multi-object selection missed object {}", scene.scene_id, target.id);
            }
            let picked = scene.objects.iter().find(|o| o.id == best).expect("selected id exists");
            records.push(EvalRecord {
                query_id: Value::String(format!("{}/{}", scene.scene_id, target.id)),
                predicted: vec![picked.into()],
                target: vec![target.into()],
            });
        }
    }
    Ok(records)
}

pub struct EvalArgs<'a> {
    pub pred: Option<&'a Path>,
    pub target: Option<&'a Path>,
    pub oracle_scenes: Option<usize>,
    pub thresholds: &'a [f64],
}

pub fn run(s: &Settings, a: &EvalArgs) -> Result<Status> {
    if a.thresholds.is_empty() || a.thresholds.iter().any(|t| !(0.0..1.0).contains(t)) {
        return Err(Error::FatalConfig("IoU thresholds must lie in [0, 1)".into()));
    }
    let (records, bad) = match (a.pred, a.oracle_scenes) {
        (Some(p), None) => load_records(p, a.target)?,
        (None, Some(n)) => {
            let recs = oracle_records(s, n)?;
            let lines: String = recs
                .iter()
                .map(|r| serde_json::to_string(r).map(|l| l + "\n"))
                .collect::<std::result::Result<_, _>>()?;
            write_atomic(&s.out.join("predictions.jsonl"), lines.as_bytes())?;
            (recs, 0)
        }
        _ => {
            return Err(Error::FatalConfig(
                "pass either --pred FILE or --oracle-scenes N".into(),
            ))
        }
    };
    let mut summary = eval_metrics(&records, a.thresholds);
    summary.skipped += bad;
    let json = summary.to_json();
    write_json(&s.out.join(METRICS_FILE), &json)?;
    println!("{}", serde_json::to_string_pretty(&json)?);
    Ok(if summary.n == 0 {
        eprintln!("error: no usable records");
        Status::Fatal
    } else if summary.skipped > 0 {
        Status::Partial
    } else {
        Status::Success
    })
}
