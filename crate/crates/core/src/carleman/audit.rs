use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Result;
use crate::geometry::{PrincipalField, SpatialMesh};

use super::conditions::{
    gradient_energy, verify_condition_d, verify_condition_params, ConditionDReport,
    ConditionParamsReport,
};
use super::weight::{CarlemanParams, WeightEvaluator, WeightFunction};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSettings {
    pub lambda_grid: Vec<f64>,
    /// Uniform time samples in `[0, T]`, endpoints included.
    pub time_samples: usize,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self {
            lambda_grid: doubling_grid(1.0, 11),
            time_samples: 33,
        }
    }
}

/// `start, 2 start, 4 start, ...` with `len` entries.
pub fn doubling_grid(start: f64, len: usize) -> Vec<f64> {
    (0..len).map(|k| start * 2f64.powi(k as i32)).collect()
}

/// Where a threshold check is most violated at the last grid value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstPoint {
    pub lambda: f64,
    pub t: f64,
    pub node: usize,
    /// Scaled margin; negative means the check failed there.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ThresholdSearch {
    Found { lambda: f64 },
    NotFound { worst: WorstPoint },
}

impl ThresholdSearch {
    pub fn lambda(&self) -> Option<f64> {
        match self {
            ThresholdSearch::Found { lambda } => Some(*lambda),
            ThresholdSearch::NotFound { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub condition_d: ConditionDReport,
    pub condition_params: ConditionParamsReport,
    pub psi_residual_max: f64,
    pub cross_term_max: f64,
    pub lambda0: ThresholdSearch,
    pub lambda1: ThresholdSearch,
}

impl AuditReport {
    /// The report in the documented key layout.
    pub fn to_json(&self) -> Value {
        json!({
            "condition_d": {
                "mu0_max": self.condition_d.mu0_max,
                "min_grad_d": self.condition_d.min_grad_d,
                "pass": self.condition_d.pass,
            },
            "condition_params": {
                "part1_margin": self.condition_params.part1_margin,
                "part2_lower_margin": self.condition_params.part2_lower_margin,
                "part2_upper_margin": self.condition_params.part2_upper_margin,
                "pass": self.condition_params.pass,
            },
            "audit": {
                "psi_residual_max": self.psi_residual_max,
                "cross_term_max": self.cross_term_max,
                "lambda0": self.lambda0.lambda(),
                "lambda1": self.lambda1.lambda(),
            },
        })
    }
}

fn time_grid(horizon: f64, samples: usize) -> Vec<f64> {
    let m = samples.max(2) - 1;
    (0..=m).map(|k| horizon * k as f64 / m as f64).collect()
}

/// Runs the four positivity checks behind the weighted estimate.
pub fn audit_proof_coefficients(
    params: &CarlemanParams,
    d: &WeightFunction,
    field: &PrincipalField,
    mesh: &SpatialMesh,
    settings: &AuditSettings,
) -> Result<AuditReport> {
    let condition_d = verify_condition_d(d, field, mesh)?;
    let condition_params = verify_condition_params(params, d, field, mesh)?;
    let times = time_grid(params.horizon, settings.time_samples);
    let n = mesh.dim;
    let nodes = mesh.node_count();

    let ev = WeightEvaluator::new(*params, d, field, mesh)?;
    let mut psi_residual_max: f64 = 0.0;
    let mut cross_term_max: f64 = 0.0;
    let h = 1e-3 * params.horizon;
    for &t in &times {
        for node in 0..nodes {
            let nt = ev.node_terms(node);
            let p = &ev.params;
            let r = p.ell_tt() + nt.div_b_grad_ell - nt.psi - p.lambda * p.c0;
            psi_residual_max = psi_residual_max.max(r.abs());

            // sum_j (b^ij ell_{x_j})_t + b^ij ell_{t x_j}; ell_t carries no x-dependence
            let t2 = if t + h <= p.horizon { t + h } else { t - h };
            let now = ev.eval(t, node)?;
            let next = ev.eval(t2, node)?;
            for i in 0..n {
                let mut c = 0.0;
                for j in 0..n {
                    c += nt.b[i][j] * (next.grad_ell[j] - now.grad_ell[j]) / (t2 - t);
                }
                cross_term_max = cross_term_max.max(c.abs());
            }
        }
    }

    let q = gradient_energy(d, field, mesh);
    let inf_q = q.iter().copied().fold(f64::INFINITY, f64::min);
    let k = 4.0 * params.c1 + params.c0;
    let target = 0.5 * k * inf_q;

    let mut lambda0 = None;
    let mut worst0 = None;
    for &lambda in &settings.lambda_grid {
        let ev = WeightEvaluator::new(params.with_lambda(lambda), d, field, mesh)?;
        let mut worst = WorstPoint {
            lambda,
            t: 0.0,
            node: 0,
            margin: f64::INFINITY,
        };
        for &t in &times {
            for node in 0..nodes {
                let margin = ev.b(t, node) / lambda.powi(3) - target;
                if margin < worst.margin {
                    worst = WorstPoint {
                        lambda,
                        t,
                        node,
                        margin,
                    };
                }
            }
        }
        if worst.margin >= 0.0 {
            lambda0 = Some(lambda);
            break;
        }
        worst0 = Some(worst);
    }

    let mut lambda1 = None;
    let mut worst1 = None;
    for &lambda in &settings.lambda_grid {
        let ev = WeightEvaluator::new(params.with_lambda(lambda), d, field, mesh)?;
        let mut worst = WorstPoint {
            lambda,
            t: 0.0,
            node: 0,
            margin: f64::INFINITY,
        };
        for node in 0..nodes {
            let e = initial_form_min_eigenvalue(&ev, node)?;
            if e < worst.margin {
                worst = WorstPoint {
                    lambda,
                    t: 0.0,
                    node,
                    margin: e,
                };
            }
        }
        if worst.margin > 0.0 {
            lambda1 = Some(lambda);
            break;
        }
        worst1 = Some(worst);
    }

    let finish = |found: Option<f64>, worst: Option<WorstPoint>| match (found, worst) {
        (Some(lambda), _) => ThresholdSearch::Found { lambda },
        (None, Some(worst)) => ThresholdSearch::NotFound { worst },
        (None, None) => ThresholdSearch::NotFound {
            worst: WorstPoint {
                lambda: f64::NAN,
                t: f64::NAN,
                node: 0,
                margin: f64::NAN,
            },
        },
    };
    Ok(AuditReport {
        condition_d,
        condition_params,
        psi_residual_max,
        cross_term_max,
        lambda0: finish(lambda0, worst0),
        lambda1: finish(lambda1, worst1),
    })
}

/// Symmetric matrix of the `t = 0` boundary form in `(v_t, grad v, v)`.
pub fn initial_form_matrix(ev: &WeightEvaluator, node: usize) -> Result<DMatrix<f64>> {
    let n = ev.dim;
    let w = ev.eval(0.0, node)?;
    let nt = ev.node_terms(node);
    let size = n + 2;
    let mut m = DMatrix::zeros(size, size);
    m[(0, 0)] = w.ell_t;
    for j in 0..n {
        let c: f64 = -(0..n).map(|i| nt.b[i][j] * w.grad_ell[i]).sum::<f64>();
        m[(0, 1 + j)] = c;
        m[(1 + j, 0)] = c;
        for i in 0..n {
            m[(1 + i, 1 + j)] = w.ell_t * nt.b[i][j];
        }
    }
    m[(0, n + 1)] = -0.5 * w.psi;
    m[(n + 1, 0)] = -0.5 * w.psi;
    m[(n + 1, n + 1)] = w.a * w.ell_t;
    Ok(m)
}

/// Smallest eigenvalue after scaling `(v_t, grad v)` by `lambda^-1/2` and `v` by `lambda^-3/2`.
pub fn initial_form_min_eigenvalue(ev: &WeightEvaluator, node: usize) -> Result<f64> {
    let mut m = initial_form_matrix(ev, node)?;
    let lambda = ev.params.lambda;
    let size = m.nrows();
    let scale: Vec<f64> = (0..size)
        .map(|k| {
            if k == size - 1 {
                lambda.powf(-1.5)
            } else {
                lambda.powf(-0.5)
            }
        })
        .collect();
    for r in 0..size {
        for c in 0..size {
            m[(r, c)] *= scale[r] * scale[c];
        }
    }
    let eig = SymmetricEigen::new(m);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}
