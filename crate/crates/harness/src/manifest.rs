//! Output directories with a manifest and a separate timing file.

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::table::{PlotData, ResultTable};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const SNAPSHOT_NOTE: &str =
    "two-phase snapshots are taken at fractions 3/7 and 1 of the step count (300 and 700 of a 700-step run)";

/// SHA-256 of the canonical TOML serialization.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let digest = Sha256::digest(cfg.to_toml()?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub media: u64,
    pub surrogate: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub harness_version: String,
    pub core_version: String,
    pub seeds: Seeds,
    pub exec: String,
    pub snapshots: String,
    pub outputs: Vec<String>,
}

/// Collects the files of one run. Timings go to `timings.csv`, so the
/// remaining outputs depend only on config and seed.
pub struct RunOutput {
    pub dir: PathBuf,
    files: Vec<String>,
    timings: Vec<(String, f64)>,
}

impl RunOutput {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            timings: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn table(&mut self, name: &str, t: &ResultTable) -> Result<()> {
        let p = self.path(name);
        t.write(&p)
    }

    pub fn plot(&mut self, name: &str, d: &PlotData) -> Result<()> {
        let p = self.path(name);
        d.write(&p)
    }

    pub fn raster(&mut self, name: &str, nx: usize, ny: usize, values: &[f64]) -> Result<()> {
        let p = self.path(name);
        nlmc_core::media::io::write_raster(&p, nx, ny, values)?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| HarnessError::io(&p, e))
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.record(stage, t.elapsed().as_secs_f64());
        out
    }

    pub fn record(&mut self, stage: &str, seconds: f64) {
        self.timings.push((stage.to_string(), seconds));
    }

    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> Result<Manifest> {
        let cfg_path = self.path("config.toml");
        std::fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| HarnessError::io(&cfg_path, e))?;
        let mut timings = ResultTable::new(&["stage", "seconds"])?;
        for (s, t) in &self.timings {
            timings.push(vec![s.as_str().into(), (*t).into()])?;
        }
        timings.write(&self.dir.join("timings.csv"))?;
        let m = Manifest {
            command: command.to_string(),
            config_hash: config_hash(cfg)?,
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: nlmc_core::VERSION.to_string(),
            seeds: Seeds {
                media: cfg.media.seed,
                surrogate: cfg.surrogate.seed,
            },
            exec: format!("{:?}", cfg.output.exec).to_lowercase(),
            snapshots: SNAPSHOT_NOTE.to_string(),
            outputs: self.files.clone(),
        };
        let text = toml::to_string(&m).map_err(|e| HarnessError::Config(e.to_string()))?;
        let p = self.dir.join("manifest.toml");
        std::fs::write(&p, text).map_err(|e| HarnessError::io(&p, e))?;
        Ok(m)
    }
}
