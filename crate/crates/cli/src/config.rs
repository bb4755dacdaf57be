//! Run settings: command-line flags override the TOML config file, which
//! overrides built-in defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use scene_sampler::coverage::DEFAULT_VOXEL_SIZE;
use scene_sampler::formats::DEFAULT_DEPTH_SCALE;
use scene_sampler::grounding::{DEFAULT_MULTI_THRESHOLD, DEFAULT_TAU};
use scene_sampler::mlp::Mlp;
use scene_sampler::pipeline::{EncodeConfig, DEFAULT_DIM, DEFAULT_PATCH_SIZE};
use scene_sampler::posenc::{PeKind, PoolMode, DEFAULT_GRID_RESOLUTION};
use scene_sampler::sampler::{SamplerConfig, Strategy, DEFAULT_BUDGET};
use scene_sampler::{Error, Result};

/// Tuning flags shared by every subcommand. All optional so that unset
/// flags fall through to the config file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Overrides {
    /// Frame selection strategy: uniform or mc
    #[arg(long, global = true, value_parser = parse_strategy)]
    #[serde(default, deserialize_with = "de_strategy")]
    pub strategy: Option<Strategy>,
    /// Maximum number of frames to select
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// Stop once this fraction of the scene's voxels is covered (mc only)
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Voxel edge length in meters
    #[arg(long, global = true)]
    pub voxel_size: Option<f64>,
    /// Use every n-th pixel in each direction when voxelizing
    #[arg(long, global = true)]
    pub stride: Option<usize>,
    /// Patch edge length in pixels
    #[arg(long, global = true)]
    pub patch_size: Option<usize>,
    /// Patch coordinate pooling: avg, center or minmax
    #[arg(long, global = true)]
    pub pool: Option<String>,
    /// Position encoding: sin, mlp or none
    #[arg(long, global = true)]
    pub pe: Option<String>,
    /// Position grid resolution in meters
    #[arg(long, global = true)]
    pub grid_res: Option<f64>,
    /// Embedding dimension
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Softmax temperature for grounding
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Probability mass threshold for multi-object selection
    #[arg(long, global = true)]
    pub multi_threshold: Option<f64>,
    /// Raw depth units per meter
    #[arg(long, global = true)]
    pub depth_scale: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Directory containing one subdirectory per scene
    #[arg(long, global = true)]
    pub root: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    match s {
        "uniform" => Ok(Strategy::Uniform),
        "mc" => Ok(Strategy::MaxCoverage),
        other => Err(format!("unknown strategy `{other}` (expected uniform or mc)")),
    }
}

fn de_strategy<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<Strategy>, D::Error> {
    let s = String::deserialize(d)?;
    parse_strategy(&s).map(Some).map_err(serde::de::Error::custom)
}

impl Overrides {
    fn or(self, base: Overrides) -> Overrides {
        Overrides {
            strategy: self.strategy.or(base.strategy),
            budget: self.budget.or(base.budget),
            threshold: self.threshold.or(base.threshold),
            voxel_size: self.voxel_size.or(base.voxel_size),
            stride: self.stride.or(base.stride),
            patch_size: self.patch_size.or(base.patch_size),
            pool: self.pool.or(base.pool),
            pe: self.pe.or(base.pe),
            grid_res: self.grid_res.or(base.grid_res),
            dim: self.dim.or(base.dim),
            tau: self.tau.or(base.tau),
            multi_threshold: self.multi_threshold.or(base.multi_threshold),
            depth_scale: self.depth_scale.or(base.depth_scale),
            seed: self.seed.or(base.seed),
            threads: self.threads.or(base.threads),
            out: self.out.or(base.out),
            root: self.root.or(base.root),
        }
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub strategy: Strategy,
    pub budget: usize,
    pub threshold: Option<f64>,
    pub voxel_size: f64,
    pub stride: usize,
    pub patch_size: usize,
    pub pool: PoolMode,
    pub pe: String,
    pub grid_res: f64,
    pub dim: usize,
    pub tau: f64,
    pub multi_threshold: f64,
    pub depth_scale: f64,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub root: Option<PathBuf>,
}

fn read_config(path: &Path) -> Result<Overrides> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::FatalConfig(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::FatalConfig(format!("{}: {e}", path.display())))
}

impl Settings {
    pub fn resolve(flags: Overrides, config: Option<&Path>) -> Result<Settings> {
        let file = match config {
            Some(p) => read_config(p)?,
            None => Overrides::default(),
        };
        let o = flags.or(file);
        let pool = o.pool.as_deref().unwrap_or("avg");
        let pe = o.pe.unwrap_or_else(|| "sin".into());
        if !matches!(pe.as_str(), "sin" | "mlp" | "none") {
            return Err(Error::FatalConfig(format!(
                "unknown position encoding `{pe}` (expected sin, mlp or none)"
            )));
        }
        let s = Settings {
            strategy: o.strategy.unwrap_or(Strategy::MaxCoverage),
            budget: o.budget.unwrap_or(DEFAULT_BUDGET),
            threshold: o.threshold,
            voxel_size: o.voxel_size.unwrap_or(DEFAULT_VOXEL_SIZE),
            stride: o.stride.unwrap_or(1),
            patch_size: o.patch_size.unwrap_or(DEFAULT_PATCH_SIZE),
            pool: pool.parse().map_err(|e: Error| Error::FatalConfig(e.to_string()))?,
            pe,
            grid_res: o.grid_res.unwrap_or(DEFAULT_GRID_RESOLUTION),
            dim: o.dim.unwrap_or(DEFAULT_DIM),
            tau: o.tau.unwrap_or(DEFAULT_TAU),
            multi_threshold: o.multi_threshold.unwrap_or(DEFAULT_MULTI_THRESHOLD),
            depth_scale: o.depth_scale.unwrap_or(DEFAULT_DEPTH_SCALE),
            seed: o.seed.unwrap_or(0),
            threads: o.threads,
            out: o.out.unwrap_or_else(|| PathBuf::from("out")),
            root: o.root,
        };
        s.sampler()?;
        if !(s.voxel_size > 0.0 && s.voxel_size.is_finite()) {
            return Err(Error::FatalConfig(format!("voxel size must be positive, got {}", s.voxel_size)));
        }
        if s.stride == 0 || s.patch_size == 0 {
            return Err(Error::FatalConfig("stride and patch size must be at least 1".into()));
        }
        if !(s.grid_res > 0.0 && s.grid_res.is_finite()) {
            return Err(Error::FatalConfig(format!("grid resolution must be positive, got {}", s.grid_res)));
        }
        if !(s.tau > 0.0 && s.tau.is_finite()) {
            return Err(Error::FatalConfig(format!("temperature must be positive, got {}", s.tau)));
        }
        if !(s.multi_threshold > 0.0 && s.multi_threshold < 1.0) {
            return Err(Error::FatalConfig(format!(
                "multi threshold must lie in (0, 1), got {}",
                s.multi_threshold
            )));
        }
        if !(s.depth_scale > 0.0 && s.depth_scale.is_finite()) {
            return Err(Error::FatalConfig(format!("depth scale must be positive, got {}", s.depth_scale)));
        }
        if s.threads == Some(0) {
            return Err(Error::FatalConfig("--threads must be at least 1".into()));
        }
        Ok(s)
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        SamplerConfig::new(self.budget, self.threshold, self.strategy)
            .map_err(|e| Error::FatalConfig(e.to_string()))
    }

    pub fn encode(&self) -> Result<EncodeConfig> {
        let pe = match self.pe.as_str() {
            "sin" => PeKind::Sinusoidal {
                grid_resolution: self.grid_res,
            },
            // learned encoders are out of scope; a seeded random MLP stands in for one
            "mlp" => PeKind::Mlp(Mlp::random(
                self.pool.channels(),
                self.dim,
                self.dim,
                self.seed ^ 0x6d6c_7065,
            )),
            _ => PeKind::None,
        };
        if matches!(pe, PeKind::Sinusoidal { .. }) && self.dim < scene_sampler::posenc::MIN_PE_DIM {
            return Err(Error::FatalConfig(format!("--dim must be at least 6, got {}", self.dim)));
        }
        Ok(EncodeConfig {
            patch_size: self.patch_size,
            pool: self.pool,
            pe,
            dim: self.dim,
            seed: self.seed,
        })
    }
}
