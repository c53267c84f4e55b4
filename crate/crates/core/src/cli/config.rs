use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::carleman::WeightFunction;
use crate::error::{Error, Result};
use crate::geometry::{Domain, PrincipalField};
use crate::identity_lab::TemporalFactor;
use crate::inverse::{BumpSpec, InversionMode};
use crate::spde::{CoefficientSet, Recording, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Audit,
    Forward,
    Identity,
    CarlemanRatio,
    Stability,
    Reconstruct,
    UniquenessProbe,
    Counterexample,
}

/// A value given inline or as a path to a JSON file holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inline<T> {
    File { file: PathBuf },
    Value(T),
}

impl<T: DeserializeOwned + Clone> Inline<T> {
    /// Reads a file reference relative to `base`.
    pub fn resolve(&self, base: &Path, field: &str) -> Result<T> {
        match self {
            Inline::Value(v) => Ok(v.clone()),
            Inline::File { file } => {
                let path = base.join(file);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    Error::Config(format!("{field}: cannot read {}: {e}", path.display()))
                })?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                serde_path_to_error::deserialize(de).map_err(|e| {
                    Error::Config(format!("{field}: {} at {}", e.inner(), e.path()))
                })
            }
        }
    }

    fn file(&self) -> Option<&Path> {
        match self {
            Inline::File { file } => Some(file),
            Inline::Value(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub d: WeightFunction,
    pub c0: f64,
    pub c1: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    /// Defaults to the value found by the condition check.
    #[serde(default)]
    pub mu0: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_samples")]
    pub time_samples: usize,
}

fn default_samples() -> usize {
    33
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub z0: Inline<ScalarField>,
    pub z1: Inline<ScalarField>,
    #[serde(default)]
    pub record: Recording,
    /// Writes `trajectories.bin` when the record is full.
    #[serde(default)]
    pub dump: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityConfig {
    pub profile: ScalarField,
    pub temporal: TemporalFactor,
    pub base_nodes: usize,
    pub base_steps: usize,
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub samples: usize,
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Admission threshold `|z(T)| <= tolerance |(z0, z1)|`.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Uses the Carleman weight in the stability ratio; otherwise `theta = 1`.
    #[serde(default)]
    pub weighted: bool,
}

fn default_modes() -> usize {
    5
}

fn default_tolerance() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthConfig {
    pub z0: Inline<ScalarField>,
    pub z1: Inline<ScalarField>,
    pub g2: Inline<ScalarField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    pub truth: TruthConfig,
    pub epsilon: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub mode: InversionMode,
    #[serde(default)]
    pub blind_seed: Option<u64>,
    /// Norm of Gaussian noise added to the observations.
    #[serde(default)]
    pub noise_level: f64,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniquenessConfig {
    pub deltas: Vec<f64>,
    pub epsilon: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    /// Defaults to the standard bump.
    #[serde(default)]
    pub bump: Option<BumpSpec>,
}

/// One experiment, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub domain: Domain,
    /// Nodes per axis; one entry is reused for every axis.
    pub resolution: Vec<usize>,
    pub horizon: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    /// Fraction of the CFL limit, used when `dt` is absent.
    #[serde(default)]
    pub cfl_factor: Option<f64>,
    #[serde(default = "one_path")]
    pub paths: usize,
    /// Defaults to the pure wave operator with `b = I`.
    #[serde(default)]
    pub coefficients: Option<Inline<CoefficientSet>>,
    #[serde(default)]
    pub weight: Option<WeightConfig>,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub audit: Option<AuditConfig>,
    #[serde(default)]
    pub forward: Option<ForwardConfig>,
    #[serde(default)]
    pub identity: Option<IdentityConfig>,
    #[serde(default)]
    pub ratio: Option<SampleConfig>,
    #[serde(default)]
    pub stability: Option<SampleConfig>,
    #[serde(default)]
    pub reconstruct: Option<ReconstructConfig>,
    #[serde(default)]
    pub uniqueness: Option<UniquenessConfig>,
    #[serde(default)]
    pub counterexample: Option<CounterexampleConfig>,
}

fn one_path() -> usize {
    1
}

impl ExperimentConfig {
    /// Parses JSON, reporting the path of the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                Error::Config(e.inner().to_string())
            } else {
                Error::Config(format!("{} (at `{path}`)", e.inner()))
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn coefficients(&self, base: &Path) -> Result<CoefficientSet> {
        match &self.coefficients {
            Some(c) => c.resolve(base, "coefficients"),
            None => Ok(CoefficientSet::wave(PrincipalField::identity(self.domain.dim()))),
        }
    }

    /// Checks kind-specific sections and file references.
    pub fn validate(&self, base: &Path) -> Result<()> {
        let need = |present: bool, field: &str| -> Result<()> {
            if present {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "missing field `{field}` required by kind {:?}",
                    self.kind
                )))
            }
        };
        if self.resolution.is_empty() {
            return Err(Error::Config("`resolution` needs at least one entry".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config("`horizon` must be positive".into()));
        }
        if self.paths == 0 {
            return Err(Error::Config("`paths` must be positive".into()));
        }
        let weighted = !matches!(
            self.kind,
            ExperimentKind::Forward | ExperimentKind::Counterexample
        );
        if weighted {
            need(self.weight.is_some(), "weight")?;
        }
        match self.kind {
            ExperimentKind::Audit | ExperimentKind::Counterexample => {}
            ExperimentKind::Forward => need(self.forward.is_some(), "forward")?,
            ExperimentKind::Identity => need(self.identity.is_some(), "identity")?,
            ExperimentKind::CarlemanRatio => need(self.ratio.is_some(), "ratio")?,
            ExperimentKind::Stability => need(self.stability.is_some(), "stability")?,
            ExperimentKind::Reconstruct => need(self.reconstruct.is_some(), "reconstruct")?,
            ExperimentKind::UniquenessProbe => need(self.uniqueness.is_some(), "uniqueness")?,
        }
        let mut files: Vec<(&str, &Path)> = Vec::new();
        if let Some(f) = self.coefficients.as_ref().and_then(|c| c.file()) {
            files.push(("coefficients", f));
        }
        if let Some(fw) = &self.forward {
            files.extend(fw.z0.file().map(|f| ("forward.z0", f)));
            files.extend(fw.z1.file().map(|f| ("forward.z1", f)));
        }
        if let Some(r) = &self.reconstruct {
            files.extend(r.truth.z0.file().map(|f| ("reconstruct.truth.z0", f)));
            files.extend(r.truth.z1.file().map(|f| ("reconstruct.truth.z1", f)));
            files.extend(r.truth.g2.file().map(|f| ("reconstruct.truth.g2", f)));
        }
        for (field, f) in files {
            if !base.join(f).is_file() {
                return Err(Error::Config(format!(
                    "{field}: referenced file {} does not exist",
                    f.display()
                )));
            }
        }
        Ok(())
    }
}
