use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PrincipalField, SpatialMesh};
use crate::tensor::Point;

/// A time-independent scalar field on the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScalarField {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `amplitude * prod_k sin(wavenumbers[k] * pi * (x_k - lo_k) / (hi_k - lo_k))`.
    Sine {
        amplitude: f64,
        wavenumbers: Vec<f64>,
    },
    Nodal { values: Vec<f64> },
}

impl ScalarField {
    pub fn sine(amplitude: f64, wavenumbers: &[f64]) -> Self {
        ScalarField::Sine {
            amplitude,
            wavenumbers: wavenumbers.to_vec(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarField::Zero => true,
            ScalarField::Constant { value } => *value == 0.0,
            ScalarField::Sine { amplitude, .. } => *amplitude == 0.0,
            ScalarField::Nodal { values } => values.iter().all(|v| *v == 0.0),
        }
    }

    fn value(&self, mesh: &SpatialMesh, x: Point) -> f64 {
        match self {
            ScalarField::Zero | ScalarField::Nodal { .. } => 0.0,
            ScalarField::Constant { value } => *value,
            ScalarField::Sine {
                amplitude,
                wavenumbers,
            } => {
                let mut v = *amplitude;
                for k in 0..mesh.dim {
                    let w = wavenumbers.get(k).copied().unwrap_or(1.0);
                    let s = (x[k] - mesh.lo[k]) / (mesh.hi[k] - mesh.lo[k]);
                    v *= (w * std::f64::consts::PI * s).sin();
                }
                v
            }
        }
    }

    /// Values at every mesh node.
    pub fn on_mesh(&self, mesh: &SpatialMesh) -> Result<Vec<f64>> {
        match self {
            ScalarField::Nodal { values } => {
                if values.len() != mesh.node_count() {
                    return Err(Error::Data(format!(
                        "{} nodal values for {} nodes",
                        values.len(),
                        mesh.node_count()
                    )));
                }
                Ok(values.clone())
            }
            _ => Ok((0..mesh.node_count())
                .map(|n| self.value(mesh, mesh.coords(n)))
                .collect()),
        }
    }
}

/// Deterministic time factor `g1(t)` of a separable force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TimeProfile {
    Constant { value: f64 },
    /// `amplitude * cos(2 pi frequency t + phase)`.
    Cosine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// One value per time level.
    Tabulated { values: Vec<f64> },
}

impl TimeProfile {
    pub fn at_level(&self, k: usize, dt: f64) -> f64 {
        match self {
            TimeProfile::Constant { value } => *value,
            TimeProfile::Cosine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (2.0 * std::f64::consts::PI * frequency * k as f64 * dt + phase).cos(),
            TimeProfile::Tabulated { values } => values.get(k).copied().unwrap_or(0.0),
        }
    }

    /// Values at levels `0..=steps`.
    pub fn levels(&self, steps: usize, dt: f64) -> Vec<f64> {
        (0..=steps).map(|k| self.at_level(k, dt)).collect()
    }
}

/// The force `g` multiplying `dB`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Force {
    #[default]
    None,
    /// `g(t, x) = g1(t) g2(x)`.
    Separable { g1: TimeProfile, g2: ScalarField },
    /// Deterministic `g` given per time level (rows) and node (columns).
    Tabulated { values: Vec<Vec<f64>> },
}

/// Coefficients of the stochastic wave equation
/// `dz_t - div(b grad z) dt = (b1 z_t + b2 . grad z + b3 z + f) dt + (b4 z + g) dB`.
///
/// `f` is an optional deterministic source given per time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub principal: PrincipalField,
    #[serde(default)]
    pub b1: ScalarField,
    /// One field per axis.
    #[serde(default)]
    pub b2: Vec<ScalarField>,
    #[serde(default)]
    pub b3: ScalarField,
    #[serde(default)]
    pub b4: ScalarField,
    #[serde(default)]
    pub force: Force,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Vec<Vec<f64>>>,
}

impl CoefficientSet {
    /// Pure wave operator with principal part `b`.
    pub fn wave(principal: PrincipalField) -> Self {
        Self {
            principal,
            b1: ScalarField::Zero,
            b2: Vec::new(),
            b3: ScalarField::Zero,
            b4: ScalarField::Zero,
            force: Force::None,
            source: None,
        }
    }

    pub fn with_force(mut self, force: Force) -> Self {
        self.force = force;
        self
    }

    /// True when neither multiplicative nor additive noise is present.
    pub fn is_deterministic(&self) -> bool {
        let no_force = match &self.force {
            Force::None => true,
            Force::Separable { g1, g2 } => {
                g2.is_zero() || matches!(g1, TimeProfile::Constant { value } if *value == 0.0)
            }
            Force::Tabulated { values } => values.iter().flatten().all(|v| *v == 0.0),
        };
        no_force && self.b4.is_zero()
    }
}

/// Nodal samples of a [`CoefficientSet`] for a fixed time grid.
#[derive(Debug, Clone)]
pub struct SampledCoefficients {
    pub b1: Vec<f64>,
    pub b2: Vec<Vec<f64>>,
    pub b3: Vec<f64>,
    pub b4: Vec<f64>,
    /// `g1` per time level, for the separable force.
    pub g1: Vec<f64>,
    /// `g2` with boundary entries cleared.
    pub g2: Vec<f64>,
    pub g_tab: Option<Vec<Vec<f64>>>,
    pub source: Option<Vec<Vec<f64>>>,
}

impl SampledCoefficients {
    pub fn new(c: &CoefficientSet, mesh: &SpatialMesh, steps: usize, dt: f64) -> Result<Self> {
        c.principal.validate(mesh)?;
        if c.b2.len() > mesh.dim {
            return Err(Error::Config(format!(
                "b2 has {} components in dimension {}",
                c.b2.len(),
                mesh.dim
            )));
        }
        let mut b2 = Vec::new();
        for k in 0..mesh.dim {
            b2.push(c.b2.get(k).cloned().unwrap_or_default().on_mesh(mesh)?);
        }
        let levels = steps + 1;
        let check_levels = |name: &str, v: &Vec<Vec<f64>>| -> Result<()> {
            if v.len() != levels || v.iter().any(|row| row.len() != mesh.node_count()) {
                return Err(Error::Data(format!(
                    "{name} must have {levels} levels of {} nodes",
                    mesh.node_count()
                )));
            }
            Ok(())
        };
        let (g1, mut g2, g_tab) = match &c.force {
            Force::None => (vec![0.0; levels], vec![0.0; mesh.node_count()], None),
            Force::Separable { g1, g2 } => {
                if let TimeProfile::Tabulated { values } = g1 {
                    if values.len() < steps {
                        return Err(Error::Data(format!(
                            "g1 has {} values, need at least {steps}",
                            values.len()
                        )));
                    }
                }
                (g1.levels(steps, dt), g2.on_mesh(mesh)?, None)
            }
            Force::Tabulated { values } => {
                check_levels("tabulated force", values)?;
                (vec![0.0; levels], vec![0.0; mesh.node_count()], Some(values.clone()))
            }
        };
        for b in &mesh.boundary {
            g2[b.node] = 0.0;
        }
        if let Some(src) = &c.source {
            check_levels("source", src)?;
        }
        Ok(Self {
            b1: c.b1.on_mesh(mesh)?,
            b2,
            b3: c.b3.on_mesh(mesh)?,
            b4: c.b4.on_mesh(mesh)?,
            g1,
            g2,
            g_tab,
            source: c.source.clone(),
        })
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `|b1|^2_inf + |b2|^2_inf + |b3|^2_{L^n} + |b4|^2_inf + 1`, with the discrete
/// `L^n` norm (`n` the dimension) by trapezoid quadrature.
pub fn compute_a_norm(c: &CoefficientSet, mesh: &SpatialMesh) -> Result<f64> {
    let s = SampledCoefficients::new(c, mesh, 0, 1.0)?;
    let b2_sup = (0..mesh.node_count())
        .map(|node| s.b2.iter().map(|f| f[node] * f[node]).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let w = mesh.trapezoid_weights();
    let n = mesh.dim as i32;
    let b3_ln = w
        .iter()
        .zip(&s.b3)
        .map(|(wi, v)| wi * v.abs().powi(n))
        .sum::<f64>()
        .powf(1.0 / n as f64);
    let a = sup(&s.b1).powi(2) + b2_sup.powi(2) + b3_ln.powi(2) + sup(&s.b4).powi(2) + 1.0;
    if !a.is_finite() {
        return Err(Error::Data("coefficient norms are not finite".into()));
    }
    Ok(a)
}
