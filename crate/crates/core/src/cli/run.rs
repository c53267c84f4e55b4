use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

use crate::carleman::{
    audit_proof_coefficients, verify_condition_d, AuditSettings, CarlemanParams, WeightFunction,
};
use crate::error::{Error, Result};
use crate::geometry::{build_mesh, extract_gamma0, BoundarySubset, SpatialMesh};
use crate::identity_lab::{
    carleman_ratio, identity_refinement, random_smooth_fields, reversed_ensemble,
    stability_ratio, IdentityStudy, ManufacturedProcess,
};
use crate::inverse::{
    deterministic_counterexample, observation_noise, reconstruct, uniqueness_probe, BumpSpec,
    InversionSettings, ObservationOperator, Unknowns,
};
use crate::spde::{
    cfl_limit, dump, energy, hidden_regularity_ratio, l2_norm, simulate_forward,
    solve_deterministic_reversed, trace_norm_sq, CoefficientSet, Recording, SimulationSpec,
    TimeGrid,
};

use super::config::{ExperimentConfig, ExperimentKind, WeightConfig};
use super::report::{emit_report, write_gamma0, write_json, write_nodal};

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub kind: ExperimentKind,
    /// File names inside the output directory.
    pub artifacts: Vec<String>,
    /// Invariant violations found after the outputs were written.
    pub violations: Vec<String>,
    pub summary: Value,
}

/// Exit status for an error: 3 numerical failure, 4 invariant violation, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => 3,
        Error::Invariant(_) => 4,
        _ => 2,
    }
}

fn category(e: &Error) -> &'static str {
    match exit_code(e) {
        3 => "numerical_failure",
        4 => "invariant_violation",
        _ => "config_error",
    }
}

/// Time grid from `dt`, or from a fraction of the CFL limit.
pub fn time_grid(cfg: &ExperimentConfig, mesh: &SpatialMesh, coeffs: &CoefficientSet) -> Result<TimeGrid> {
    if let Some(dt) = cfg.dt {
        return TimeGrid::new(cfg.horizon, dt);
    }
    let factor = cfg.cfl_factor.unwrap_or(0.5);
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::Config(format!("cfl_factor must lie in (0, 1], got {factor}")));
    }
    let limit = factor * cfl_limit(mesh, &coeffs.principal);
    TimeGrid::with_steps(cfg.horizon, (cfg.horizon / limit).ceil() as usize)
}

fn params(w: &WeightConfig, horizon: f64, coeffs: &CoefficientSet, mesh: &SpatialMesh) -> Result<CarlemanParams> {
    let mu0 = match w.mu0 {
        Some(m) => m,
        None => verify_condition_d(&w.d, &coeffs.principal, mesh)?.mu0_max,
    };
    Ok(CarlemanParams {
        lambda: w.lambda,
        c0: w.c0,
        c1: w.c1,
        mu0,
        horizon,
    })
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    base: &'a Path,
    out: &'a Path,
    mesh: SpatialMesh,
    coeffs: CoefficientSet,
    artifacts: Vec<String>,
    violations: Vec<String>,
}

impl Ctx<'_> {
    fn file(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn weight(&self) -> Result<(&WeightConfig, CarlemanParams)> {
        let w = self
            .cfg
            .weight
            .as_ref()
            .ok_or_else(|| Error::Config("missing field `weight`".into()))?;
        Ok((w, params(w, self.cfg.horizon, &self.coeffs, &self.mesh)?))
    }

    fn gamma0(&mut self, d: &WeightFunction) -> Result<BoundarySubset> {
        let subset = extract_gamma0(&self.mesh, &self.coeffs.principal, d)?;
        let path = self.file("gamma0.csv");
        write_gamma0(&path, &self.mesh, &subset)?;
        Ok(subset)
    }

    fn rows<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> Result<()> {
        emit_report(self.out, stem, "csv", rows)?;
        self.artifacts.push(format!("{stem}.csv"));
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.file(name);
        write_json(&path, value)
    }

    fn grid(&self) -> Result<TimeGrid> {
        time_grid(self.cfg, &self.mesh, &self.coeffs)
    }
}

/// Runs one experiment, writing its outputs into `out`.
///
/// Relative file references in the config resolve against `base`.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<RunSummary> {
    cfg.validate(base)?;
    std::fs::create_dir_all(out)?;
    let mesh = build_mesh(&cfg.domain, &cfg.resolution)?;
    let coeffs = cfg.coefficients(base)?;
    coeffs.principal.validate(&mesh)?;
    let mut ctx = Ctx {
        cfg,
        base,
        out,
        mesh,
        coeffs,
        artifacts: Vec::new(),
        violations: Vec::new(),
    };
    let summary = match cfg.kind {
        ExperimentKind::Audit => run_audit(&mut ctx)?,
        ExperimentKind::Forward => run_forward(&mut ctx)?,
        ExperimentKind::Identity => run_identity(&mut ctx)?,
        ExperimentKind::CarlemanRatio => run_ratio(&mut ctx)?,
        ExperimentKind::Stability => run_stability(&mut ctx)?,
        ExperimentKind::Reconstruct => run_reconstruct(&mut ctx)?,
        ExperimentKind::UniquenessProbe => run_uniqueness(&mut ctx)?,
        ExperimentKind::Counterexample => run_counterexample(&mut ctx)?,
    };
    Ok(RunSummary {
        kind: cfg.kind,
        artifacts: ctx.artifacts,
        violations: ctx.violations,
        summary,
    })
}

fn run_audit(ctx: &mut Ctx) -> Result<Value> {
    let (w, p) = ctx.weight()?;
    let d = w.d.clone();
    let mut settings = AuditSettings::default();
    if let Some(g) = &ctx.cfg.lambda_grid {
        settings.lambda_grid = g.clone();
    }
    if let Some(a) = &ctx.cfg.audit {
        settings.time_samples = a.time_samples;
    }
    ctx.gamma0(&d)?;
    let report = audit_proof_coefficients(&p, &d, &ctx.coeffs.principal, &ctx.mesh, &settings)?;
    let value = report.to_json();
    ctx.json("audit.json", &value)?;
    Ok(value)
}

#[derive(Serialize)]
struct ForwardRow {
    path: usize,
    terminal_l2: f64,
    terminal_energy: f64,
    boundary_trace: f64,
}

fn run_forward(ctx: &mut Ctx) -> Result<Value> {
    let fw = ctx.cfg.forward.clone().expect("validated");
    let z0 = fw.z0.resolve(ctx.base, "forward.z0")?.on_mesh(&ctx.mesh)?;
    let z1 = fw.z1.resolve(ctx.base, "forward.z1")?.on_mesh(&ctx.mesh)?;
    let grid = ctx.grid()?;
    let record = if fw.dump { Recording::Full } else { fw.record };
    let spec = SimulationSpec {
        horizon: grid.horizon,
        dt: grid.dt,
        paths: ctx.cfg.paths,
        seed: ctx.cfg.seed,
        record,
    };
    let ens = simulate_forward(&ctx.mesh, &ctx.coeffs, &z0, &z1, &spec)?;
    let whole = BoundarySubset::whole_boundary(&ctx.mesh);
    let rows: Vec<ForwardRow> = ens
        .paths
        .iter()
        .map(|p| ForwardRow {
            path: p.index,
            terminal_l2: l2_norm(&ctx.mesh, &p.z_final),
            terminal_energy: energy(&ctx.mesh, &ctx.coeffs, &p.z_final, &p.w_final),
            boundary_trace: if p.trace.is_empty() {
                f64::NAN
            } else {
                trace_norm_sq(&ctx.mesh, &p.trace, &whole, grid.dt).sqrt()
            },
        })
        .collect();
    ctx.rows("ensemble", &rows)?;
    let n = rows.len() as f64;
    let hidden = if record == Recording::Terminal {
        None
    } else {
        match hidden_regularity_ratio(&ctx.mesh, &ens, &ctx.coeffs) {
            Ok(h) => Some(h),
            Err(Error::UndefinedRatio(_)) => None,
            Err(e) => return Err(e),
        }
    };
    let value = json!({
        "paths": ens.len(),
        "steps": grid.steps,
        "dt": grid.dt,
        "initial_energy": energy(&ctx.mesh, &ctx.coeffs, &z0, &z1),
        "mean_terminal_energy": rows.iter().map(|r| r.terminal_energy).sum::<f64>() / n,
        "mean_terminal_l2_sq": rows.iter().map(|r| r.terminal_l2 * r.terminal_l2).sum::<f64>() / n,
        "hidden_regularity": hidden,
    });
    ctx.json("ensemble.json", &value)?;
    if fw.dump {
        let z: Vec<Vec<Vec<f64>>> = ens
            .paths
            .iter()
            .map(|p| p.levels.as_ref().expect("full recording").z.clone())
            .collect();
        let path = ctx.file("trajectories.bin");
        dump::write_trajectories(BufWriter::new(File::create(path)?), &z)?;
    }
    Ok(value)
}

#[derive(Serialize)]
struct IdentityCsvRow {
    refinement_level: usize,
    dt: f64,
    dx: f64,
    residual: f64,
    normalized_residual: f64,
}

fn run_identity(ctx: &mut Ctx) -> Result<Value> {
    let (w, p) = ctx.weight()?;
    let d = w.d.clone();
    let ic = ctx.cfg.identity.clone().expect("validated");
    let u = ManufacturedProcess {
        profile: ic.profile,
        temporal: ic.temporal,
    };
    let study = IdentityStudy {
        domain: ctx.cfg.domain.clone(),
        base_nodes: ic.base_nodes,
        base_steps: ic.base_steps,
        levels: ic.levels,
        paths: ctx.cfg.paths,
        seed: ctx.cfg.seed,
    };
    let report = identity_refinement(&u, &p, &d, &ctx.coeffs.principal, &study)?;
    let rows: Vec<IdentityCsvRow> = report
        .rows
        .iter()
        .map(|r| IdentityCsvRow {
            refinement_level: r.refinement_level,
            dt: r.dt,
            dx: r.dx,
            residual: r.residual,
            normalized_residual: r.normalized_residual,
        })
        .collect();
    ctx.rows("identity", &rows)?;
    let value = serde_json::to_value(&report)?;
    ctx.json("identity.json", &value)?;
    let deterministic = matches!(u.temporal, crate::identity_lab::TemporalFactor::Polynomial { .. });
    if deterministic {
        for pair in report.rows.windows(2) {
            if pair[1].residual > 1.1 * pair[0].residual {
                ctx.violations.push(format!(
                    "identity residual grew from {} to {} at level {}",
                    pair[0].residual, pair[1].residual, pair[1].refinement_level
                ));
            }
        }
    }
    Ok(value)
}

/// `max(lambda0, lambda1)` from the audit.
fn audited_lambda(ctx: &Ctx, p: &CarlemanParams, d: &WeightFunction) -> Result<f64> {
    let report = audit_proof_coefficients(p, d, &ctx.coeffs.principal, &ctx.mesh, &AuditSettings::default())?;
    match (report.lambda0.lambda(), report.lambda1.lambda()) {
        (Some(a), Some(b)) => Ok(a.max(b)),
        _ => Err(Error::Config(
            "the audit found no lambda threshold; give `lambda_grid` explicitly".into(),
        )),
    }
}

fn run_ratio(ctx: &mut Ctx) -> Result<Value> {
    let (w, p) = ctx.weight()?;
    let d = w.d.clone();
    let rc = ctx.cfg.ratio.clone().expect("validated");
    let lambdas = match &ctx.cfg.lambda_grid {
        Some(g) => g.clone(),
        None => {
            let l = audited_lambda(ctx, &p, &d)?;
            vec![l, 2.0 * l, 4.0 * l]
        }
    };
    let subset = ctx.gamma0(&d)?;
    let grid = ctx.grid()?;
    let velocities = random_smooth_fields(&ctx.mesh, rc.samples, rc.modes, ctx.cfg.seed);
    let solutions = velocities
        .iter()
        .map(|v| solve_deterministic_reversed(&ctx.mesh, &ctx.coeffs, v, grid))
        .collect::<Result<Vec<_>>>()?;
    let study = carleman_ratio(&ctx.mesh, &p, &d, &subset, &grid, &solutions, &lambdas)?;
    ctx.rows("carleman_ratio", &study.rows)?;
    let log_ratios: Vec<f64> = study.rows.iter().map(|r| r.log_max_ratio).collect();
    let value = json!({
        "lambdas": lambdas,
        "log_max_ratio": log_ratios,
        "z0_slope": study.z0_slope,
        "max_ratio_spread": study.max_ratio_spread,
        "log_max_ratio_spread": study.log_max_ratio_spread,
        "trivial": study.trivial,
        "violations": study.violations,
        "all_finite": study.all_finite(),
    });
    ctx.json("carleman_ratio.json", &value)?;
    for s in &study.violations {
        ctx.violations.push(format!("sample {s} has a zero boundary term under a positive left side"));
    }
    Ok(value)
}

fn run_stability(ctx: &mut Ctx) -> Result<Value> {
    let (w, p) = ctx.weight()?;
    let d = w.d.clone();
    let sc = ctx.cfg.stability.clone().expect("validated");
    let subset = ctx.gamma0(&d)?;
    let grid = ctx.grid()?;
    let velocities = random_smooth_fields(&ctx.mesh, sc.samples, sc.modes, ctx.cfg.seed);
    let ensembles = reversed_ensemble(&ctx.mesh, &ctx.coeffs, &velocities, grid)?;
    let weight = if sc.weighted { Some((&p, &d)) } else { None };
    let report = stability_ratio(&ctx.mesh, &ctx.coeffs, &ensembles, &subset, weight, sc.tolerance)?;
    ctx.rows("stability", &report.rows)?;
    let value = json!({
        "weighted": sc.weighted,
        "lambda": if sc.weighted { p.lambda } else { 0.0 },
        "rejected": report.rejected,
        "trivial": report.trivial,
        "max_s": report.max_s,
        "min_s": report.min_s,
    });
    ctx.json("stability.json", &value)?;
    Ok(value)
}

fn run_reconstruct(ctx: &mut Ctx) -> Result<Value> {
    let (w, _) = ctx.weight()?;
    let d = w.d.clone();
    let rc = ctx.cfg.reconstruct.clone().expect("validated");
    let subset = ctx.gamma0(&d)?;
    let grid = ctx.grid()?;
    let truth = Unknowns {
        z0: rc.truth.z0.resolve(ctx.base, "reconstruct.truth.z0")?.on_mesh(&ctx.mesh)?,
        z1: rc.truth.z1.resolve(ctx.base, "reconstruct.truth.z1")?.on_mesh(&ctx.mesh)?,
        g2: rc.truth.g2.resolve(ctx.base, "reconstruct.truth.g2")?.on_mesh(&ctx.mesh)?,
    };
    let op = ObservationOperator::seeded(&ctx.mesh, &ctx.coeffs, grid, &subset, ctx.cfg.seed, ctx.cfg.paths)?;
    let mut obs = op.record(&truth, ctx.cfg.seed)?;
    if rc.noise_level > 0.0 {
        let noise = observation_noise(&op, &obs, rc.noise_level, ctx.cfg.seed ^ 0x5bd1_e995);
        obs.axpy(1.0, &noise);
    }
    drop(op);
    let (trace, terminal) = obs.to_trajectories();
    let path = ctx.file("observed_trace.bin");
    dump::write_trajectories(BufWriter::new(File::create(path)?), &trace)?;
    let path = ctx.file("observed_terminal.bin");
    dump::write_trajectories(BufWriter::new(File::create(path)?), &terminal)?;
    let settings = InversionSettings {
        epsilon: rc.epsilon,
        tol: rc.tol,
        max_iter: rc.max_iter,
        mode: rc.mode,
    };
    let result = reconstruct(
        &ctx.mesh,
        &ctx.coeffs,
        grid,
        &subset,
        &obs,
        &settings,
        rc.blind_seed,
        Some(&truth),
    )?;
    if !result.converged {
        log::warn!(
            "reconstruction stopped after {} iterations without converging",
            result.iterations
        );
    }
    let value = serde_json::to_value(&result)?;
    ctx.json("reconstruction.json", &value)?;
    let est = &result.estimate;
    let path = ctx.file("reconstruction_fields.csv");
    write_nodal(
        &path,
        &ctx.mesh,
        &[
            ("z0", &est.z0),
            ("z1", &est.z1),
            ("g2", &est.g2),
            ("z0_true", &truth.z0),
            ("z1_true", &truth.z1),
            ("g2_true", &truth.g2),
        ],
    )?;
    Ok(value)
}

fn run_uniqueness(ctx: &mut Ctx) -> Result<Value> {
    let (w, _) = ctx.weight()?;
    let d = w.d.clone();
    let uc = ctx.cfg.uniqueness.clone().expect("validated");
    let subset = ctx.gamma0(&d)?;
    let grid = ctx.grid()?;
    let settings = InversionSettings {
        epsilon: uc.epsilon,
        tol: uc.tol,
        max_iter: uc.max_iter,
        mode: Default::default(),
    };
    let report = uniqueness_probe(
        &ctx.mesh,
        &ctx.coeffs,
        grid,
        &subset,
        &uc.deltas,
        ctx.cfg.paths,
        ctx.cfg.seed,
        &settings,
    )?;
    ctx.rows("uniqueness", &report.rows)?;
    let value = serde_json::to_value(&report)?;
    ctx.json("uniqueness.json", &value)?;
    for r in &report.rows {
        if r.delta == 0.0 && r.estimate_norm != 0.0 {
            ctx.violations.push(format!(
                "zero observations gave an estimate of norm {}",
                r.estimate_norm
            ));
        }
    }
    Ok(value)
}

fn run_counterexample(ctx: &mut Ctx) -> Result<Value> {
    let grid = ctx.grid()?;
    let spec = ctx
        .cfg
        .counterexample
        .as_ref()
        .and_then(|c| c.bump.clone())
        .unwrap_or_else(|| BumpSpec::standard(&ctx.mesh, grid.horizon));
    let field = ctx.coeffs.principal.clone();
    let ce = deterministic_counterexample(&spec, &field, &ctx.mesh, grid)?;
    let discrete = ce.forward_error(&ctx.mesh, &field, grid, true)?;
    let analytic = ce.forward_error(&ctx.mesh, &field, grid, false)?;
    let value = json!({
        "bump": spec,
        "summary": ce,
        "forward_error_discrete": discrete,
        "forward_error_analytic": analytic,
    });
    ctx.json("counterexample.json", &value)?;
    let path = ctx.file("source.bin");
    dump::write_trajectories(BufWriter::new(File::create(path)?), std::slice::from_ref(&ce.f_discrete))?;
    let zero_tol = 1e-12 * ce.y_norm;
    for (name, v) in [
        ("trace", ce.trace_norm),
        ("z(T)", ce.terminal_norm),
        ("z_t(T)", ce.terminal_velocity_norm),
        ("z(0)", ce.initial_norm),
        ("z_t(0)", ce.initial_velocity_norm),
    ] {
        if v > zero_tol {
            ctx.violations.push(format!("counterexample {name} norm {v} is not zero"));
        }
    }
    Ok(value)
}

/// Outcome of [`execute`].
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub summary: Option<RunSummary>,
    pub message: Option<String>,
}

fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_failure(out: &Path, code: i32, category: &str, message: &str) {
    let value = json!({ "exit_code": code, "category": category, "message": message });
    if std::fs::create_dir_all(out).is_ok() {
        if let Err(e) = write_json(&out.join("failure.json"), &value) {
            log::error!("cannot write failure report: {e}");
        }
    }
}

/// Loads a config, runs it on a pool of `threads` workers, and writes
/// `manifest.json`, or `failure.json` on a nonzero status.
pub fn execute(config: &Path, out: Option<&Path>, threads: Option<usize>) -> Outcome {
    let start = Instant::now();
    let fallback = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out"));
    let fail = |e: Error, dir: &Path| {
        let code = exit_code(&e);
        let msg = e.to_string();
        log::error!("{msg}");
        write_failure(dir, code, category(&e), &msg);
        Outcome {
            code,
            summary: None,
            message: Some(msg),
        }
    };
    let cfg = match ExperimentConfig::load(config) {
        Ok(c) => c,
        Err(e) => return fail(e, &fallback),
    };
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or(fallback);
    let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => return fail(Error::Config(format!("thread pool: {e}")), &out_dir),
    };
    let result = pool.install(|| run_experiment(&cfg, &base, &out_dir));
    let summary = match result {
        Ok(s) => s,
        Err(e) => return fail(e, &out_dir),
    };
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "artifacts": summary.artifacts,
        "violations": summary.violations,
        "threads": pool.current_num_threads(),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "timestamp": unix_time(),
    });
    if let Err(e) = write_json(&out_dir.join("manifest.json"), &manifest) {
        return fail(e, &out_dir);
    }
    if !summary.violations.is_empty() {
        let msg = summary.violations.join("; ");
        write_failure(&out_dir, 4, "invariant_violation", &msg);
        return Outcome {
            code: 4,
            summary: Some(summary),
            message: Some(msg),
        };
    }
    Outcome {
        code: 0,
        summary: Some(summary),
        message: None,
    }
}
