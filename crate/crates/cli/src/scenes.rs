//! Scene discovery and batch bookkeeping.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use scene_sampler::ingest::list_scenes;
use scene_sampler::{Error, Result};

/// Process exit status contract: 0 success, 1 fatal, 2 partial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    Fatal,
    Partial,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::Fatal => 1,
            Status::Partial => 2,
        }
    }
}

/// Scene ids to process under `root`: the ones named explicitly, or every
/// subdirectory. A root that is itself a scene directory names that scene.
pub fn resolve(root: Option<&Path>, named: &[String]) -> Result<(PathBuf, Vec<String>)> {
    let root = root.ok_or_else(|| Error::FatalConfig("--root is required".into()))?;
    if !root.is_dir() {
        return Err(Error::FatalConfig(format!("scene root {} is not a directory", root.display())));
    }
    if root.join("intrinsic.txt").is_file() || root.join("pose").is_dir() {
        let parent = root.parent().unwrap_or(Path::new(".")).to_path_buf();
        let id = root
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::FatalConfig(format!("bad scene path {}", root.display())))?;
        return Ok((parent, vec![id.to_string()]));
    }
    let ids = if named.is_empty() {
        list_scenes(root)?
    } else {
        named.to_vec()
    };
    if ids.is_empty() {
        return Err(Error::EmptyScene(root.display().to_string()));
    }
    Ok((root.to_path_buf(), ids))
}

/// Runs `work` on every scene in parallel, reporting failures without
/// aborting the batch. Returns the successful results in scene order plus
/// the overall status.
pub fn run_batch<T: Send>(
    ids: &[String],
    work: impl Fn(&str) -> Result<T> + Sync,
) -> Result<(Vec<(String, T)>, Status)> {
    let results: Vec<(String, Result<T>)> = ids
        .par_iter()
        .map(|id| (id.clone(), work(id)))
        .collect();
    let mut ok = Vec::new();
    let mut failed = 0;
    for (id, r) in results {
        match r {
            Ok(v) => ok.push((id, v)),
            Err(e) => {
                log::error!("{id}: {e}");
                eprintln!("error: {id}: {e}");
                failed += 1;
            }
        }
    }
    let status = match (ok.len(), failed) {
        (_, 0) => Status::Success,
        (0, _) => Status::Fatal,
        _ => Status::Partial,
    };
    Ok((ok, status))
}
