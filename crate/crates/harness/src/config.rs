//! Experiment configuration: TOML sections per module, `key=value` overrides.

use crate::error::{HarnessError, Result};
use nlmc_core::fine_solver::{GlobalBoundary, NewtonConfig};
use nlmc_core::media::{ConstitutiveSet, MonotoneLaw};
use nlmc_core::nlmc::CoarseConfig;
use nlmc_core::surrogate::PicardConfig;
use nlmc_core::Exec;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Output root override; the only environment variable the harness reads.
pub const OUTPUT_ROOT_VAR: &str = "NLMC_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Fine cells per axis.
    pub fine_cells: usize,
    /// Coarse cells per axis; must divide `fine_cells`.
    pub coarse_cells: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            fine_cells: 80,
            coarse_cells: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FractureSource {
    None,
    /// Two crossing segments used by the desk-scale tests.
    Two,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediaConfig {
    pub seed: u64,
    pub contrast: f64,
    pub correlation_length: f64,
    /// Raster file replacing the generated field.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field_file: Option<PathBuf>,
    pub fractures: FractureSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fracture_file: Option<PathBuf>,
    pub fracture_permeability: f64,
}

impl Default for MediaConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            contrast: 1e2,
            correlation_length: 0.05,
            field_file: None,
            fractures: FractureSource::Two,
            fracture_file: None,
            fracture_permeability: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawKind {
    Linear,
    Rational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LawConfig {
    /// Elliptic law g(t) = 1 + alpha / (1 + t), or g = 1.
    pub kind: LawKind,
    pub alpha: f64,
    pub kr_exponent: f64,
    pub c_matrix: f64,
    pub c_fracture: f64,
    pub porosity_matrix: f64,
    pub porosity_fracture: f64,
}

impl Default for LawConfig {
    fn default() -> Self {
        let c = ConstitutiveSet::default();
        Self {
            kind: LawKind::Rational,
            alpha: 0.5,
            kr_exponent: c.kr_exponent,
            c_matrix: c.c_matrix,
            c_fracture: c.c_fracture,
            porosity_matrix: c.porosity_matrix,
            porosity_fracture: c.porosity_fracture,
        }
    }
}

impl LawConfig {
    pub fn monotone(&self) -> MonotoneLaw {
        match self.kind {
            LawKind::Linear => MonotoneLaw::Linear,
            LawKind::Rational => MonotoneLaw::Rational { alpha: self.alpha },
        }
    }

    pub fn constitutive(&self) -> ConstitutiveSet {
        ConstitutiveSet {
            kr_exponent: self.kr_exponent,
            c_matrix: self.c_matrix,
            c_fracture: self.c_fracture,
            porosity_matrix: self.porosity_matrix,
            porosity_fracture: self.porosity_fracture,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Dirichlet,
    NoFlux,
}

impl From<Boundary> for GlobalBoundary {
    fn from(b: Boundary) -> Self {
        match b {
            Boundary::Dirichlet => GlobalBoundary::DirichletZero,
            Boundary::NoFlux => GlobalBoundary::NoFlux,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlmcConfig {
    /// Oversampling layers M.
    pub layers: usize,
    /// Boundary of the elliptic and space-time problems.
    pub boundary: Boundary,
}

impl Default for NlmcConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            boundary: Boundary::Dirichlet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub t_max: f64,
    pub steps: usize,
    /// Space-time coarse intervals; each holds `steps / intervals` fine steps.
    pub intervals: usize,
    /// Backward extension of the space-time windows, in intervals.
    pub extension: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            t_max: 1e-3,
            steps: 10,
            intervals: 5,
            extension: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub newton: NewtonConfig,
    pub coarse: CoarseConfig,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let p = PicardConfig::default();
        Self {
            newton: NewtonConfig::default(),
            coarse: CoarseConfig::default(),
            picard_tol: p.tol,
            picard_max_iter: p.max_iter,
        }
    }
}

impl SolverConfig {
    pub fn picard(&self) -> PicardConfig {
        PicardConfig {
            tol: self.picard_tol,
            max_iter: self.picard_max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Zero,
    /// `1 + x (1 - y)`.
    Polynomial,
    /// `rate cos(pi x) cos(pi y)`.
    Smooth,
    /// `+rate` density on coarse cell `from`, `-rate` on `to`.
    Dipole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub rate: f64,
    /// Coarse cell (x, y) of the injector / positive source.
    pub from: [usize; 2],
    pub to: [usize; 2],
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            kind: SourceKind::Smooth,
            rate: 5000.0,
            from: [0, 0],
            to: [7, 7],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhysicsKind {
    Unsaturated,
    TwoPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub enabled: bool,
    /// Physics of the dataset built by `gen-dataset`.
    pub physics: PhysicsKind,
    /// `ridge`, `knn` or `mlp`.
    pub model: String,
    /// Sample every `stride`-th time node of the fine run.
    pub stride: usize,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            physics: PhysicsKind::Unsaturated,
            model: "mlp".into(),
            stride: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub coarse_cells: Vec<usize>,
    pub layers: Vec<usize>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            coarse_cells: vec![5, 10],
            layers: vec![4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub exec: Exec,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            exec: Exec::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub media: MediaConfig,
    pub law: LawConfig,
    pub nlmc: NlmcConfig,
    pub time: TimeConfig,
    pub solver: SolverConfig,
    pub source: SourceConfig,
    pub surrogate: SurrogateConfig,
    pub convergence: ConvergenceConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Test1,
    Test2,
    Convergence,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "test1" => Ok(Preset::Test1),
            "test2" => Ok(Preset::Test2),
            "convergence" => Ok(Preset::Convergence),
            _ => Err(HarnessError::Config(format!("unknown preset `{s}`"))),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale configurations of the unsaturated test, the two-phase test
    /// and the coarse-mesh study.
    pub fn preset(p: Preset) -> Self {
        let mut c = Self::default();
        match p {
            Preset::Test1 => {
                c.nlmc.boundary = Boundary::NoFlux;
                // k^f = 1e6 face fluxes dwarf the source; iterate to the round-off floor
                c.solver.newton.rel_tol = 1e-16;
            }
            Preset::Test2 => {
                c.media.fracture_permeability = 1e3;
                c.time.t_max = 0.3;
                c.time.steps = 100;
                c.source = SourceConfig {
                    kind: SourceKind::Dipole,
                    rate: 1.0,
                    from: [0, 0],
                    to: [7, 7],
                };
                c.surrogate.stride = 5;
                c.surrogate.physics = PhysicsKind::TwoPhase;
                c.nlmc.boundary = Boundary::NoFlux;
            }
            Preset::Convergence => {
                c.media.contrast = 1e4;
                c.media.fracture_permeability = 1e3;
                c.source.kind = SourceKind::Polynomial;
                c.nlmc.layers = 4;
            }
        }
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads and validates a config file. Relative file references are
    /// resolved against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.media.field_file, &mut cfg.media.fracture_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `section.key=value` (nested keys allowed). Values use TOML
    /// syntax; anything that does not parse is taken as a string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Table::try_from(&*self).map_err(|e| HarnessError::Config(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        let (leaf, path) = parts.split_last().filter(|(l, _)| !l.is_empty()).ok_or_else(|| {
            HarnessError::Config(format!("empty override key in `{assignment}`"))
        })?;
        let mut table = &mut root;
        for p in path {
            table = match table.get_mut(*p) {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(HarnessError::Config(format!("unknown config section `{p}` in `{key}`"))),
            };
        }
        // integers written for float keys stay valid
        let value = match (table.get(*leaf), value) {
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert((*leaf).to_string(), value);
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(format!("override `{assignment}`: {e}")))?;
        Ok(())
    }

    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<()> {
        for a in assignments {
            self.apply_override(a.as_ref())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let g = &self.grid;
        if g.fine_cells == 0 || g.coarse_cells == 0 || g.fine_cells % g.coarse_cells != 0 {
            return bad(format!(
                "grid.coarse_cells = {} must divide grid.fine_cells = {}",
                g.coarse_cells, g.fine_cells
            ));
        }
        for p in [&self.media.field_file, &self.media.fracture_file].into_iter().flatten() {
            if !p.exists() {
                return bad(format!("referenced file {} does not exist", p.display()));
            }
        }
        if self.media.fractures == FractureSource::File && self.media.fracture_file.is_none() {
            return bad("media.fractures = \"file\" needs media.fracture_file".into());
        }
        let s = &self.solver;
        let tolerances = [
            ("solver.newton.abs_tol", s.newton.abs_tol),
            ("solver.newton.rel_tol", s.newton.rel_tol),
            ("solver.coarse.abs_tol", s.coarse.abs_tol),
            ("solver.coarse.rel_tol", s.coarse.rel_tol),
            ("solver.coarse.stagnation_tol", s.coarse.stagnation_tol),
            ("solver.picard_tol", s.picard_tol),
        ];
        for (name, v) in tolerances {
            if !(v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.time.t_max > 0.0) || self.time.steps == 0 {
            return bad("time.t_max must be > 0 and time.steps >= 1".into());
        }
        if self.time.intervals == 0 || self.time.steps % self.time.intervals != 0 {
            return bad("time.intervals must divide time.steps".into());
        }
        if self.nlmc.layers == 0 {
            return bad("nlmc.layers must be >= 1".into());
        }
        if !(self.media.contrast >= 1.0) || !(self.media.fracture_permeability > 0.0) {
            return bad("media.contrast must be >= 1 and media.fracture_permeability > 0".into());
        }
        let nc = g.coarse_cells;
        let uses_cells = self.source.kind == SourceKind::Dipole || self.surrogate.physics == PhysicsKind::TwoPhase;
        if uses_cells && self.source.from.iter().chain(&self.source.to).any(|&c| c >= nc) {
            return bad(format!("source cells must lie in the {nc}x{nc} coarse grid"));
        }
        nlmc_core::surrogate::ModelKind::parse(&self.surrogate.model)?;
        Ok(())
    }

    /// Output directory, placed under `NLMC_OUTPUT_ROOT` when that is set
    /// and the configured directory is relative.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if self.output.dir.is_relative() => PathBuf::from(root).join(&self.output.dir),
            _ => self.output.dir.clone(),
        }
    }
}
