//! Experiment configuration (TOML) and the objects built from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qvcore::generators::PathRecipe;
use qvcore::io::{read_partition_levels_csv, read_path_csv};
use qvcore::{
    BilinearForm, CadlagPath, CrossnormChoice, FvPath, NormChoice, PartitionSequence, QvOptions, SmoothFunction,
};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Default seed; recipe `i` without its own seed uses `seed + i`.
    #[serde(default)]
    pub seed: u64,
    pub paths: Vec<PathEntry>,
    /// Path used by single-path commands (defaults to the first path).
    #[serde(default)]
    pub subject: Option<String>,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub bilinear: BilinearSpec,
    #[serde(default)]
    pub norm: NormChoice,
    #[serde(default)]
    pub crossnorm: CrossnormChoice,
    #[serde(default)]
    pub function: Option<FunctionSpec>,
    /// Reporting times; `0` and the horizon are always added.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub qv: QvSection,
    #[serde(default)]
    pub ito: ItoSection,
    #[serde(default)]
    pub density: DensitySection,
    #[serde(default)]
    pub check: CheckSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A path given inline as a generator recipe or loaded from a path CSV file.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct PathEntry {
    pub name: Option<String>,
    pub csv: Option<PathBuf>,
    #[serde(flatten)]
    pub recipe: toml::Table,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    Dyadic {
        #[serde(default)]
        n_min: u32,
        n_max: u32,
    },
    Uniform {
        /// Piece counts per level, strictly increasing.
        counts: Vec<u64>,
    },
    Osc {
        eps: Vec<f64>,
    },
    Explicit {
        file: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BilinearSpec {
    #[default]
    Inner,
    Outer,
    /// `coeffs[k][i][j]`: component `k` of `B(e_i, e_j)`.
    Coefficients { coeffs: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    NormSq,
    Sin,
    /// `x -> M x`; `matrix` is `q x d`.
    Linear { matrix: Vec<Vec<f64>> },
    /// `(a, x) -> a . x`, `a` read from the named parameter path.
    BilinearAx { parameter: String },
    /// `x -> sum_i sum_k coeffs[i][k] x_i^k`.
    CustomPoly { coeffs: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative Cauchy-tail tolerance for QV limits.
    pub qv: f64,
    pub richardson: bool,
    pub tail_levels: usize,
    /// Relative Ito residual tolerance.
    pub ito: f64,
    /// Relative gap tolerance for the C1 and integral-QV comparisons.
    pub gap: f64,
    /// Slack for density bounds and the decomposition.
    pub bound: f64,
    /// Convergence tolerance for condition checks.
    pub check: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let q = QvOptions::default();
        Self {
            qv: q.tolerance,
            richardson: q.richardson,
            tail_levels: q.tail_levels,
            ito: 1e-6,
            gap: 1e-2,
            bound: 1e-9,
            check: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn qv_options(&self) -> QvOptions {
        QvOptions { tolerance: self.qv, richardson: self.richardson, tail_levels: self.tail_levels }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct QvSection {
    /// First argument of the covariation (defaults to the first path).
    pub x: Option<String>,
    /// Second argument (defaults to `x`).
    pub y: Option<String>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ItoSection {
    /// Levels inspected for the nonincreasing-tail test.
    pub window: usize,
}

impl Default for ItoSection {
    fn default() -> Self {
        Self { window: 3 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySection {
    /// Number of equal dissection cells.
    pub cells: u64,
    pub floor: Option<f64>,
}

impl Default for DensitySection {
    fn default() -> Self {
        Self { cells: 64, floor: None }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub eps: Vec<f64>,
    pub window: usize,
    pub decay_factor: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self { eps: vec![0.5, 0.1, 0.02], window: 4, decay_factor: 0.5 }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// A loaded experiment: the parsed config, its hash and the built objects.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub names: Vec<String>,
    pub paths: Vec<CadlagPath>,
    pub seq: PartitionSequence,
}

impl Experiment {
    pub fn load(file: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(file).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
        let base = file.parent().unwrap_or(Path::new("."));
        Self::from_str(&text, base)
    }

    pub fn from_str(text: &str, base: &Path) -> Result<Self, CliError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let config_sha256 = hex(&Sha256::digest(text.as_bytes()));
        if config.paths.is_empty() {
            return Err(CliError::Config("at least one [[paths]] entry is required".into()));
        }
        let mut names = Vec::new();
        let mut paths = Vec::new();
        for (i, entry) in config.paths.iter().enumerate() {
            let name = entry.name.clone().unwrap_or_else(|| format!("path{}", i + 1));
            if names.contains(&name) {
                return Err(CliError::Config(format!("duplicate path name {name:?}")));
            }
            paths.push(build_path(entry, config.seed.wrapping_add(i as u64), base, &name)?);
            names.push(name);
        }
        let horizon = paths[0].horizon();
        if paths.iter().any(|p| p.horizon() != horizon) {
            return Err(CliError::Config("all paths must share one horizon".into()));
        }
        let seq = build_sequence(&config.partition, &paths, config.norm, horizon, base)?;
        if config.times.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
            return Err(CliError::Config(format!("reporting times must lie in [0, {horizon}]")));
        }
        Ok(Self { config, config_sha256, names, paths, seq })
    }

    pub fn path(&self, name: Option<&str>) -> Result<&CadlagPath, CliError> {
        match name {
            None => Ok(&self.paths[0]),
            Some(n) => self
                .names
                .iter()
                .position(|m| m == n)
                .map(|i| &self.paths[i])
                .ok_or_else(|| CliError::Config(format!("unknown path {n:?}"))),
        }
    }

    pub fn bilinear(&self, d: usize) -> Result<BilinearForm, CliError> {
        let b = match &self.config.bilinear {
            BilinearSpec::Inner => BilinearForm::inner(d),
            BilinearSpec::Outer => BilinearForm::outer(d),
            BilinearSpec::Coefficients { coeffs } => {
                let m = coeffs.len();
                let mut flat = Vec::with_capacity(m * d * d);
                for (k, slab) in coeffs.iter().enumerate() {
                    if slab.len() != d || slab.iter().any(|r| r.len() != d) {
                        return Err(CliError::Config(format!("coeffs[{k}] must be {d} x {d}")));
                    }
                    flat.extend(slab.iter().flatten());
                }
                BilinearForm::coefficients(d, m, flat).map_err(|e| CliError::Config(e.to_string()))?
            }
        };
        Ok(b)
    }

    /// The configured function and its parameter path, if any.
    pub fn function(&self, d: usize) -> Result<(SmoothFunction, Option<FvPath>), CliError> {
        let spec = self.config.function.as_ref().ok_or_else(|| CliError::Config("missing [function] section".into()))?;
        let cfg = |e: qvcore::Error| CliError::Config(e.to_string());
        Ok(match spec {
            FunctionSpec::NormSq => (SmoothFunction::norm_sq(d).map_err(cfg)?, None),
            FunctionSpec::Sin => (SmoothFunction::sin(d).map_err(cfg)?, None),
            FunctionSpec::Linear { matrix } => {
                let q = matrix.len();
                if matrix.iter().any(|r| r.len() != d) {
                    return Err(CliError::Config(format!("linear matrix rows must have length {d}")));
                }
                (SmoothFunction::linear(matrix.concat(), q, d).map_err(cfg)?, None)
            }
            FunctionSpec::BilinearAx { parameter } => {
                let a = self.path(Some(parameter))?;
                if a.dim() != d {
                    return Err(CliError::Config(format!("parameter path {parameter:?} must have dimension {d}")));
                }
                (SmoothFunction::bilinear_ax(d).map_err(cfg)?, Some(FvPath::new(a.clone())))
            }
            FunctionSpec::CustomPoly { coeffs } => {
                if coeffs.len() != d {
                    return Err(CliError::Config(format!("custom_poly needs {d} coefficient rows")));
                }
                (SmoothFunction::custom_poly(coeffs.clone()).map_err(cfg)?, None)
            }
        })
    }

    pub fn subject(&self) -> Result<&CadlagPath, CliError> {
        self.path(self.config.subject.as_deref())
    }

    pub fn times(&self) -> Vec<f64> {
        self.config.times.clone()
    }
}

fn build_path(entry: &PathEntry, default_seed: u64, base: &Path, name: &str) -> Result<CadlagPath, CliError> {
    if let Some(file) = &entry.csv {
        if !entry.recipe.is_empty() {
            return Err(CliError::Config(format!("path {name:?}: csv excludes recipe fields")));
        }
        let file = base.join(file);
        let text = std::fs::read_to_string(&file).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
        return read_path_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", file.display())));
    }
    let mut recipe: PathRecipe =
        entry.recipe.clone().try_into().map_err(|e| CliError::Config(format!("path {name:?}: {e}")))?;
    if !entry.recipe.contains_key("seed") {
        recipe.seed = default_seed;
    }
    recipe.generate().map_err(|e| CliError::Config(format!("path {name:?}: {e}")))
}

fn build_sequence(
    spec: &PartitionSpec,
    paths: &[CadlagPath],
    norm: NormChoice,
    horizon: f64,
    base: &Path,
) -> Result<PartitionSequence, CliError> {
    let cfg = |e: qvcore::Error| CliError::Config(format!("partition: {e}"));
    match spec {
        PartitionSpec::Dyadic { n_min, n_max } => PartitionSequence::dyadic_range(horizon, *n_min, *n_max).map_err(cfg),
        PartitionSpec::Uniform { counts } => {
            if counts.contains(&0) {
                return Err(CliError::Config("partition: counts must be positive".into()));
            }
            let meshes: Vec<f64> = counts.iter().map(|&c| horizon / c as f64).collect();
            PartitionSequence::uniform_mesh(horizon, &meshes).map_err(cfg)
        }
        PartitionSpec::Osc { eps } => {
            let family: Vec<&CadlagPath> = paths.iter().collect();
            PartitionSequence::oscillation_controlled(&family, eps, norm).map_err(cfg)
        }
        PartitionSpec::Explicit { file } => {
            let file = base.join(file);
            let text =
                std::fs::read_to_string(&file).map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
            let seq = read_partition_levels_csv(&text).map_err(cfg)?;
            if seq.horizon() != horizon {
                return Err(CliError::Config(format!("partition horizon {} differs from {horizon}", seq.horizon())));
            }
            Ok(seq)
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
