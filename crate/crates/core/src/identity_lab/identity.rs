use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carleman::{condition_matrix, CarlemanParams, WeightEvaluator, WeightFunction};
use crate::error::{Error, Result};
use crate::geometry::{build_mesh, Domain, PrincipalField, SpatialMesh};
use crate::spde::{brownian_increments, coarsen, time_trapezoid, ScalarField, TimeGrid};
use crate::tensor::{bilinear, Mat2, Ten3, Vec2};

/// Time factor `h(t)` of a manufactured process `u = phi(x) h(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TemporalFactor {
    /// `h(t) = sum_k coefficients[k] t^k`, no noise.
    Polynomial { coefficients: Vec<f64> },
    /// `d h' = sigma dB`, `h(0) = h'(0) = 0`, `h` the trapezoid integral of `h'`.
    Brownian { sigma: f64 },
}

impl TemporalFactor {
    /// `t^2 (T - t)`.
    pub fn cubic_bump(horizon: f64) -> Self {
        TemporalFactor::Polynomial {
            coefficients: vec![0.0, 0.0, horizon, -1.0],
        }
    }
}

/// Manufactured adapted process `u(t, x) = phi(x) h(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedProcess {
    pub profile: ScalarField,
    pub temporal: TemporalFactor,
}

/// `h`, `h'`, drift and diffusion of `h'` on the time levels.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalPath {
    pub h: Vec<f64>,
    pub hp: Vec<f64>,
    pub drift: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl TemporalFactor {
    pub fn sample(&self, grid: &TimeGrid, increments: &[f64]) -> Result<TemporalPath> {
        let n = grid.levels();
        match self {
            TemporalFactor::Polynomial { coefficients } => {
                let eval = |t: f64, der: usize| -> f64 {
                    let mut s = 0.0;
                    for (k, c) in coefficients.iter().enumerate().skip(der) {
                        let fall: f64 = (0..der).map(|m| (k - m) as f64).product();
                        s += c * fall * t.powi((k - der) as i32);
                    }
                    s
                };
                let ts: Vec<f64> = (0..n).map(|k| grid.time(k)).collect();
                Ok(TemporalPath {
                    h: ts.iter().map(|&t| eval(t, 0)).collect(),
                    hp: ts.iter().map(|&t| eval(t, 1)).collect(),
                    drift: ts.iter().map(|&t| eval(t, 2)).collect(),
                    sigma: vec![0.0; n],
                })
            }
            TemporalFactor::Brownian { sigma } => {
                if increments.len() != grid.steps {
                    return Err(Error::Data(format!(
                        "{} increments for {} steps",
                        increments.len(),
                        grid.steps
                    )));
                }
                let mut h = vec![0.0; n];
                let mut hp = vec![0.0; n];
                for k in 0..grid.steps {
                    hp[k + 1] = hp[k] + sigma * increments[k];
                    h[k + 1] = h[k] + 0.5 * grid.dt * (hp[k] + hp[k + 1]);
                }
                Ok(TemporalPath {
                    h,
                    hp,
                    drift: vec![0.0; n],
                    sigma: vec![*sigma; n],
                })
            }
        }
    }
}

/// `phi`, its gradient and Hessian for the closed-form profiles.
fn profile_jet(profile: &ScalarField, mesh: &SpatialMesh, node: usize) -> Result<(f64, Vec2, Mat2)> {
    let x = mesh.coords(node);
    match profile {
        ScalarField::Zero => Ok((0.0, [0.0; 2], [[0.0; 2]; 2])),
        ScalarField::Sine {
            amplitude,
            wavenumbers,
        } => {
            let n = mesh.dim;
            let mut s = [0.0; 2];
            let mut c = [0.0; 2];
            let mut k = [0.0; 2];
            for a in 0..n {
                let len = mesh.hi[a] - mesh.lo[a];
                k[a] = wavenumbers.get(a).copied().unwrap_or(1.0) * std::f64::consts::PI / len;
                let arg = k[a] * (x[a] - mesh.lo[a]);
                s[a] = arg.sin();
                c[a] = arg.cos();
            }
            let prod = |skip: &[usize], cosines: &[usize]| -> f64 {
                let mut p = *amplitude;
                for a in 0..n {
                    if cosines.contains(&a) {
                        p *= c[a];
                    } else if !skip.contains(&a) {
                        p *= s[a];
                    }
                }
                p
            };
            let phi = prod(&[], &[]);
            let mut grad = [0.0; 2];
            let mut hess = [[0.0; 2]; 2];
            for a in 0..n {
                grad[a] = k[a] * prod(&[], &[a]);
                hess[a][a] = -k[a] * k[a] * phi;
                for b in 0..n {
                    if a != b {
                        hess[a][b] = k[a] * k[b] * prod(&[], &[a, b]);
                    }
                }
            }
            Ok((phi, grad, hess))
        }
        _ => Err(Error::Unsupported(
            "manufactured profiles need the closed-form sine or zero family".into(),
        )),
    }
}

/// Per-node quantities of the weight and the profile, independent of time.
struct NodeData {
    phi: f64,
    grad_phi: Vec2,
    /// `sum_ij (p^ij phi_i)_j`.
    div_p_grad_phi: f64,
    p: Mat2,
    grad_ell: Vec2,
    /// Coefficient matrix of `v_i v_j` without its `p^ij ell_tt` part.
    gradient_form: Mat2,
    psi: f64,
    grad_psi: Vec2,
}

fn node_data(
    ev: &WeightEvaluator,
    field: &PrincipalField,
    profile: &ScalarField,
    mesh: &SpatialMesh,
) -> Result<Vec<NodeData>> {
    let n = mesh.dim;
    let lam = ev.params.lambda;
    (0..mesh.node_count())
        .map(|node| {
            let jet = field.jet(mesh.coords(node)).ok_or_else(|| {
                Error::Unsupported("the identity check needs a closed-form principal field".into())
            })?;
            let nt = ev.node_terms(node);
            let (phi, grad_phi, hess_phi) = profile_jet(profile, mesh, node)?;
            let p = jet.value;
            let db: Ten3 = jet.d1;
            let mut div_p_grad_phi = 0.0;
            for i in 0..n {
                for j in 0..n {
                    div_p_grad_phi += db[i][j][j] * grad_phi[i] + p[i][j] * hess_phi[i][j];
                }
            }
            let mut grad_ell = [0.0; 2];
            let mut hess_ell = [[0.0; 2]; 2];
            for i in 0..n {
                grad_ell[i] = lam * nt.d.grad[i];
                for j in 0..n {
                    hess_ell[i][j] = lam * nt.d.hess[i][j];
                }
            }
            let cm = condition_matrix(n, &p, &db, &grad_ell, &hess_ell);
            let mut gradient_form = [[0.0; 2]; 2];
            for i in 0..n {
                for j in 0..n {
                    gradient_form[i][j] = cm[i][j] - p[i][j] * nt.div_b_grad_ell + nt.psi * p[i][j];
                }
            }
            Ok(NodeData {
                phi,
                grad_phi,
                div_p_grad_phi,
                p,
                grad_ell,
                gradient_form,
                psi: nt.psi,
                grad_psi: nt.grad_psi,
            })
        })
        .collect()
}

/// Pointwise values of `v`, `v_t`, `grad v` and the multiplier at `(t_k, node)`.
struct Local {
    theta: f64,
    ell_t: f64,
    v: f64,
    vt: f64,
    gv: Vec2,
    mult: f64,
}

fn local(ev: &WeightEvaluator, nd: &NodeData, node: usize, t: f64, h: f64, hp: f64) -> Local {
    let n = ev.dim;
    let p = &ev.params;
    let ell = p.ell(t, ev.node_terms(node).d.value);
    let theta = ell.exp();
    let ell_t = p.ell_t(t);
    let u = nd.phi * h;
    let ut = nd.phi * hp;
    let v = theta * u;
    let vt = theta * (ell_t * u + ut);
    let mut gv = [0.0; 2];
    for i in 0..n {
        gv[i] = theta * (nd.grad_ell[i] * u + nd.grad_phi[i] * h);
    }
    let mult = -2.0 * ell_t * vt + 2.0 * bilinear(n, &nd.p, &nd.grad_ell, &gv) + nd.psi * v;
    Local {
        theta,
        ell_t,
        v,
        vt,
        gv,
        mult,
    }
}

/// Both sides of the integrated identity for one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentitySides {
    /// Multiplier times `du_t - div(p grad u) dt`, integrated over `Q`.
    pub lhs_interior: f64,
    /// Boundary flux of the divergence term.
    pub lhs_boundary: f64,
    /// `int_G [E(T) - E(0)]` for the exact-differential term.
    pub lhs_endpoint: f64,
    pub lhs: f64,
    /// Quadratic form integrated over `Q`, without the quadratic variation term.
    pub rhs_form: f64,
    /// `int theta^2 ell_t (du_t)^2` with `(du_t)^2 = phi^2 sigma^2 dt`.
    pub rhs_variation: f64,
    /// The same term with squared increments of `u_t`.
    pub rhs_variation_empirical: f64,
    pub rhs: f64,
    pub residual: f64,
    pub normalized_residual: f64,
}

/// Evaluates both sides of the weighted identity for `u = phi(x) h(t)` along one
/// noise path.
///
/// All divergence terms are turned into boundary fluxes; the `d[...]` term becomes
/// its endpoint difference.
pub fn verify_pointwise_identity(
    u: &ManufacturedProcess,
    params: &CarlemanParams,
    d: &WeightFunction,
    field: &PrincipalField,
    mesh: &SpatialMesh,
    grid: &TimeGrid,
    increments: &[f64],
) -> Result<IdentitySides> {
    let phi = u
        .profile
        .on_mesh(mesh)
        .map_err(|_| Error::ManufacturedInput("profile cannot be sampled on the mesh".into()))?;
    let scale = phi.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for b in &mesh.boundary {
        if phi[b.node].abs() > 1e-12 * scale {
            return Err(Error::ManufacturedInput(format!(
                "u does not vanish at boundary node {}",
                b.node
            )));
        }
    }
    if (grid.horizon - params.horizon).abs() > 1e-12 * params.horizon {
        return Err(Error::Config("time grid and weight use different horizons".into()));
    }
    let ev = WeightEvaluator::new(*params, d, field, mesh)?;
    let nodes = node_data(&ev, field, &u.profile, mesh)?;
    let path = u.temporal.sample(grid, increments)?;
    let n = mesh.dim;
    let wts = mesh.trapezoid_weights();
    let ell_tt = params.ell_tt();
    let nt_div: Vec<f64> = (0..mesh.node_count())
        .map(|i| ev.node_terms(i).div_b_grad_ell)
        .collect();

    let mut drift_rate = vec![0.0; grid.levels()];
    let mut form_rate = vec![0.0; grid.levels()];
    let mut flux_rate = vec![0.0; grid.levels()];
    let mut martingale = 0.0;
    let mut variation = 0.0;
    let mut variation_emp = 0.0;
    let mut energy = [0.0; 2];

    for k in 0..grid.levels() {
        let t = grid.time(k);
        let (h, hp) = (path.h[k], path.hp[k]);
        for (node, nd) in nodes.iter().enumerate() {
            let l = local(&ev, nd, node, t, h, hp);
            let a = ev.a(t, node);
            let b = ev.b(t, node);
            let w = wts[node];
            // theta * M * (a dt - div(p grad u) dt)
            drift_rate[k] += w * l.theta * l.mult * (nd.phi * path.drift[k] - nd.div_p_grad_phi * h);
            let vt_coef = ell_tt + nt_div[node] - nd.psi;
            let mut gform = nd.gradient_form;
            for i in 0..n {
                for j in 0..n {
                    gform[i][j] += nd.p[i][j] * ell_tt;
                }
            }
            form_rate[k] += w
                * (vt_coef * l.vt * l.vt
                    + bilinear(n, &gform, &l.gv, &l.gv)
                    + b * l.v * l.v
                    + l.mult * l.mult);
            if k < grid.steps {
                let dhp = path.hp[k + 1] - path.hp[k];
                martingale += w * l.theta * l.mult * nd.phi * path.sigma[k] * increments.get(k).copied().unwrap_or(0.0);
                let c = w * l.theta * l.theta * l.ell_t * nd.phi * nd.phi;
                variation += c * path.sigma[k] * path.sigma[k] * grid.dt;
                variation_emp += c * dhp * dhp;
            }
            if k == 0 || k == grid.steps {
                let e = bilinear(n, &nd.p, &l.gv, &l.gv) * l.ell_t
                    - 2.0 * bilinear(n, &nd.p, &nd.grad_ell, &l.gv) * l.vt
                    + l.ell_t * l.vt * l.vt
                    - nd.psi * l.vt * l.v
                    + a * l.ell_t * l.v * l.v;
                energy[(k == grid.steps) as usize] += w * e;
            }
        }
        flux_rate[k] = boundary_flux(&ev, &nodes, mesh, t, h, hp);
    }

    let lhs_interior = time_trapezoid(&drift_rate, grid.dt) + martingale;
    let lhs_boundary = time_trapezoid(&flux_rate, grid.dt);
    let lhs_endpoint = energy[1] - energy[0];
    let lhs = lhs_interior + lhs_boundary + lhs_endpoint;
    let rhs_form = time_trapezoid(&form_rate, grid.dt);
    let rhs = rhs_form + variation;
    let residual = (lhs - rhs).abs();
    Ok(IdentitySides {
        lhs_interior,
        lhs_boundary,
        lhs_endpoint,
        lhs,
        rhs_form,
        rhs_variation: variation,
        rhs_variation_empirical: variation_emp,
        rhs,
        residual,
        normalized_residual: residual / lhs.abs().max(rhs.abs()).max(1.0),
    })
}

/// `int_Gamma V . nu` at one time, per-face trapezoid rule.
fn boundary_flux(
    ev: &WeightEvaluator,
    nodes: &[NodeData],
    mesh: &SpatialMesh,
    t: f64,
    h: f64,
    hp: f64,
) -> f64 {
    let n = mesh.dim;
    let flux = |node: usize, normal: &Vec2| -> f64 {
        let nd = &nodes[node];
        let l = local(ev, nd, node, t, h, hp);
        let a = ev.a(t, node);
        let p = &nd.p;
        let gl = &nd.grad_ell;
        let mut total = 0.0;
        for j in 0..n {
            let mut vj = 0.0;
            for i in 0..n {
                let mut inner = 0.0;
                for ip in 0..n {
                    for jp in 0..n {
                        inner += 2.0 * p[i][j] * p[ip][jp] * gl[ip] * l.gv[i] * l.gv[jp]
                            - p[i][j] * p[ip][jp] * gl[i] * l.gv[ip] * l.gv[jp];
                    }
                }
                vj += inner - 2.0 * p[i][j] * l.ell_t * l.gv[i] * l.vt
                    + p[i][j] * gl[i] * l.vt * l.vt
                    + nd.psi * p[i][j] * l.gv[i] * l.v
                    - (a * gl[i] + 0.5 * nd.grad_psi[i]) * p[i][j] * l.v * l.v;
            }
            total += vj * normal[j];
        }
        total
    };
    if n == 1 {
        return flux(0, &[-1.0, 0.0]) + flux(mesh.counts[0] - 1, &[1.0, 0.0]);
    }
    let mut sum = 0.0;
    for axis in 0..2 {
        let other = 1 - axis;
        for (fixed, side) in [(0usize, -1.0), (mesh.counts[axis] - 1, 1.0)] {
            let mut normal = [0.0; 2];
            normal[axis] = side;
            let m = mesh.counts[other];
            for s in 0..m {
                let mut idx = [0usize; 2];
                idx[axis] = fixed;
                idx[other] = s;
                let wgt = if s == 0 || s == m - 1 { 0.5 } else { 1.0 } * mesh.spacing[other];
                sum += wgt * flux(mesh.node_at(idx), &normal);
            }
        }
    }
    sum
}

/// Settings of a refinement study of the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityStudy {
    pub domain: Domain,
    /// Nodes per axis at the coarsest level.
    pub base_nodes: usize,
    /// Time steps at the coarsest level.
    pub base_steps: usize,
    pub levels: usize,
    pub paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityRow {
    pub refinement_level: usize,
    pub dt: f64,
    pub dx: f64,
    /// `|mean over paths of (L - R)|`.
    pub residual: f64,
    pub normalized_residual: f64,
    pub mean_lhs: f64,
    pub mean_rhs: f64,
    /// Mean over paths of `|L - R|`.
    pub mean_abs_residual: f64,
    /// Mean over paths of the model minus empirical quadratic variation terms.
    pub variation_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
    /// Least-squares slope of `log residual` against `log dt`.
    pub observed_order: f64,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Runs the identity on a ladder halving `dt` and `dx` together.
///
/// Noise is drawn at the finest step and summed onto coarser grids, so every level
/// sees the same Brownian paths.
pub fn identity_refinement(
    u: &ManufacturedProcess,
    params: &CarlemanParams,
    d: &WeightFunction,
    field: &PrincipalField,
    study: &IdentityStudy,
) -> Result<IdentityReport> {
    if study.levels == 0 || study.paths == 0 {
        return Err(Error::EmptyStudy("identity study needs levels and paths".into()));
    }
    let finest = study.base_steps << (study.levels - 1);
    let fine_grid = TimeGrid::with_steps(params.horizon, finest)?;
    let stochastic = matches!(u.temporal, TemporalFactor::Brownian { .. });
    let paths = if stochastic { study.paths } else { 1 };
    let noise: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            if stochastic {
                brownian_increments(study.seed, p as u64, finest, fine_grid.dt)
            } else {
                vec![0.0; finest]
            }
        })
        .collect();
    let mut rows = Vec::new();
    for level in 0..study.levels {
        let nodes = (study.base_nodes - 1) * (1 << level) + 1;
        let mesh = build_mesh(&study.domain, &[nodes])?;
        let steps = study.base_steps << level;
        let grid = TimeGrid::with_steps(params.horizon, steps)?;
        let factor = finest / steps;
        let sides = noise
            .par_iter()
            .map(|inc| {
                let inc = coarsen(inc, factor)?;
                verify_pointwise_identity(u, params, d, field, &mesh, &grid, &inc)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = sides.len() as f64;
        let mean = |f: &dyn Fn(&IdentitySides) -> f64| sides.iter().map(f).sum::<f64>() / m;
        let mean_lhs = mean(&|s| s.lhs);
        let mean_rhs = mean(&|s| s.rhs);
        let residual = mean(&|s| s.lhs - s.rhs).abs();
        rows.push(IdentityRow {
            refinement_level: level,
            dt: grid.dt,
            dx: mesh.min_spacing(),
            residual,
            normalized_residual: residual / mean_lhs.abs().max(mean_rhs.abs()).max(1.0),
            mean_lhs,
            mean_rhs,
            mean_abs_residual: mean(&|s| s.residual),
            variation_gap: mean(&|s| s.rhs_variation - s.rhs_variation_empirical),
        });
    }
    let dts: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let res: Vec<f64> = rows.iter().map(|r| r.residual.max(f64::MIN_POSITIVE)).collect();
    let observed_order = if rows.len() > 1 { loglog_slope(&dts, &res) } else { f64::NAN };
    Ok(IdentityReport {
        rows,
        observed_order,
    })
}
