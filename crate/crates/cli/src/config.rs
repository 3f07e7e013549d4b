//! Run configuration: defaults, then the TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use ultitiming::control::ControlParams;
use ultitiming::dataio::SmoothingConfig;
use ultitiming::detect::DetectionConfig;
use ultitiming::timing::TimingParams;

pub const RESOLVED_CONFIG: &str = "resolved-config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads.
    pub jobs: usize,
    /// Evaluation grid cell size, m.
    pub grid_cell: f64,
    pub out_dir: PathBuf,
    pub smoothing: SmoothingConfig,
    pub detection: DetectionConfig,
    pub control: ControlParams,
    pub timing: TimingParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
            grid_cell: 1.0,
            out_dir: PathBuf::from("out"),
            smoothing: SmoothingConfig::default(),
            detection: DetectionConfig::default(),
            control: ControlParams::default(),
            timing: TimingParams::default(),
        }
    }
}

/// Values given on the command line; `None` keeps the lower layer.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub jobs: Option<usize>,
    pub grid_cell: Option<f64>,
    pub v_disc: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(j) = flags.jobs {
            cfg.jobs = j;
        }
        if let Some(c) = flags.grid_cell {
            cfg.grid_cell = c;
        }
        if let Some(v) = flags.v_disc {
            cfg.timing.v_disc = v;
        }
        if let Some(d) = &flags.out_dir {
            cfg.out_dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        if !(self.grid_cell > 0.0 && self.grid_cell.is_finite()) {
            bail!("grid_cell must be positive");
        }
        self.smoothing.validate()?;
        self.control.validate()?;
        self.timing.validate()?;
        Ok(())
    }

    pub fn write_resolved(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join(RESOLVED_CONFIG);
        let text = toml::to_string(self).context("serializing resolved config")?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
