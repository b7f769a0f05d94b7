//! Subcommand pipelines. Each returns typed results together with the
//! [`Report`] that the CLI writes out.

use std::collections::BTreeMap;

use neumann_core::estimator::{
    boundary_dirichlet_check, certify, estimate_gradient, estimate_value, martingale_residual,
    GradientEstimate, CERTIFY_SAMPLES, GENERATOR_TERMS,
};
use neumann_core::executor::try_map_paths;
use neumann_core::linalg::{self, dot};
use neumann_core::model::{
    check_declared_bounds, check_derivatives, check_ellipticity, check_noncharacteristic,
    RadialCosine,
};
use neumann_core::oracle::{
    crank_nicolson_neumann_1d, free_jacobian_closed_form, gradient_system_1d,
    mc_finite_difference_gradient, radial_ball, series_gradient_1d, Coupling, Grid1D, GridSpec,
};
use neumann_core::penalized::{jacobian_sup_moment, occupation_moment_study, PenaltySweep};
use neumann_core::reflected::{compose_jacobians, excursion_decomposition, restart_jacobian};
use neumann_core::stats::{combined_se, MeanSe};
use neumann_core::{
    CoefficientField, Domain, InitialCondition, JumpMode, NoiseStream, PenalizedScheme, Problem,
    ReflectedScheme, Scheme, Shape,
};
use serde::Serialize;

use crate::config::{
    DomainConfig, ExperimentConfig, InitialConfig, ModeName, ModelConfig, OracleName, Quantity,
    SchemeName, SweepParameter,
};
use crate::error::{AppError, AppResult};
use crate::executor::RayonExecutor;
use crate::output::{
    estimates_csv, excursions_csv, num, penalized_path_csv, reflected_path_csv, EstimateRecord,
    Report, RuleOutcome,
};

/// Paths used for the per-estimate path diagnostics.
pub const DIAGNOSTIC_PATHS: usize = 1000;

pub struct Runtime {
    pub executor: RayonExecutor,
}

impl Runtime {
    pub fn new(workers: usize) -> AppResult<Self> {
        let executor = RayonExecutor::new(workers)
            .map_err(|e| AppError::Config(format!("cannot start {workers} workers: {e}")))?;
        Ok(Self { executor })
    }

    pub fn workers(&self) -> usize {
        self.executor.workers()
    }
}

/// Owned domain, coefficients and datum of a configuration.
pub struct Built {
    pub domain: Domain,
    pub field: Box<dyn CoefficientField>,
    pub initial: Box<dyn InitialCondition>,
}

impl Built {
    pub fn new(cfg: &ExperimentConfig) -> AppResult<Self> {
        Ok(Self {
            domain: cfg.domain()?,
            field: cfg.field()?,
            initial: cfg.initial()?,
        })
    }

    pub fn problem(&self, scheme: Scheme) -> Problem<'_> {
        Problem {
            domain: &self.domain,
            field: &*self.field,
            initial: &*self.initial,
            scheme,
        }
    }
}

fn precondition(msg: String) -> AppError {
    AppError::Precondition(msg)
}

fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    e
}

// ---------------------------------------------------------------- validate

pub fn validate(cfg: &ExperimentConfig) -> AppResult<Report> {
    let built = Built::new(cfg)?;
    let c = &cfg.checks;
    let seed = cfg.estimate.seed;
    let mut report = Report::new("validate");
    let inside = built.domain.contains(&cfg.estimate.x);
    report.rules.push(RuleOutcome::flag(
        "geometry:start_point_in_domain",
        inside,
        format!("x = {:?}", cfg.estimate.x),
    ));
    let ell = check_ellipticity(
        &*built.field,
        &built.domain,
        c.ellipticity_threshold,
        c.samples,
        seed,
    )?;
    let min_eig = ell.min_ellipticity.unwrap_or(f64::NAN);
    report.rules.push(RuleOutcome {
        name: "ellipticity".into(),
        pass: ell.ellipticity_pass().unwrap_or(false),
        value: min_eig,
        limit: c.ellipticity_threshold,
        detail: "smallest eigenvalue of σσᵀ, must be at least the limit".into(),
    });
    let nc = check_noncharacteristic(
        &*built.field,
        &built.domain,
        c.noncharacteristic_threshold,
        c.shell_width,
        c.samples,
        seed,
    )?;
    report.rules.push(RuleOutcome {
        name: "noncharacteristic".into(),
        pass: nc.noncharacteristic_pass().unwrap_or(false),
        value: nc.min_noncharacteristic.unwrap_or(f64::NAN),
        limit: c.noncharacteristic_threshold,
        detail: "smallest |σᵀγ|² near the boundary, must be at least the limit".into(),
    });
    let der = check_derivatives(
        &*built.field,
        &*built.initial,
        &built.domain,
        c.samples,
        c.derivative_step,
        c.derivative_tolerance,
    )?;
    report.rules.push(RuleOutcome::at_most(
        "derivatives",
        der.max_derivative_mismatch.unwrap_or(f64::NAN),
        c.derivative_tolerance,
        "largest gap between supplied derivatives and central differences",
    ));
    let bounds = check_declared_bounds(&*built.field, &built.domain, c.samples)?;
    if let Some(excess) = bounds.max_bound_excess {
        report.rules.push(RuleOutcome::at_most(
            "declared_bounds",
            excess,
            0.0,
            "largest excess over declared bounds",
        ));
    }
    if let Some(conv) = &cfg.convergence {
        for (j, tf) in conv.test_functions.iter().enumerate() {
            let test = cfg.test_function(tf)?;
            let adm = certify(&test, &built.domain, CERTIFY_SAMPLES)?;
            report.rules.push(RuleOutcome::flag(
                format!("test_function[{j}]:admissible"),
                adm.pass(),
                format!(
                    "normal derivative {:e}, tangential invariance {:e}",
                    adm.normal_derivative, adm.tangential_invariance
                ),
            ));
        }
    }
    report.text = report.rule_lines();
    report.add_summary()?;
    Ok(report)
}

// ---------------------------------------------------------------- estimate

pub struct EstimateOutcome {
    pub estimates: Vec<GradientEstimate>,
    pub records: Vec<EstimateRecord>,
    pub report: Report,
}

/// Local time or occupation statistics over the first `paths` paths.
fn path_diagnostics(
    built: &Built,
    scheme: Scheme,
    x: &[f64],
    t: f64,
    paths: usize,
    seed: u64,
    rt: &Runtime,
) -> AppResult<BTreeMap<String, f64>> {
    let mut diag = BTreeMap::new();
    diag.insert("diagnostic_paths".to_string(), paths as f64);
    diag.insert("steps".to_string(), (t / scheme.dt()).ceil());
    match scheme {
        Scheme::Penalized { penalty, dt } => {
            let s = PenalizedScheme::new(&built.domain, &*built.field, penalty, dt)?;
            let occ = try_map_paths(&rt.executor, paths, |p| {
                Ok(s.simulate(x, t, &mut NoiseStream::new(seed, p as u64))?
                    .occupation)
            })?;
            let m = MeanSe::from_samples(occ.iter().copied());
            diag.insert("mean_occupation".into(), m.mean);
            diag.insert("mean_occupation_se".into(), m.se);
        }
        Scheme::Reflected { dt, mode } => {
            let s = ReflectedScheme::new(&built.domain, &*built.field, dt, mode)?;
            let rows = try_map_paths(&rt.executor, paths, |p| {
                let st = s.simulate(x, t, &mut NoiseStream::new(seed, p as u64))?;
                Ok([st.local_time, st.contacts as f64, st.jumps as f64])
            })?;
            let col = |k: usize| MeanSe::from_samples(rows.iter().map(move |r| r[k]));
            let lt = col(0);
            diag.insert("mean_local_time".into(), lt.mean);
            diag.insert("mean_local_time_se".into(), lt.se);
            diag.insert("mean_contacts".into(), col(1).mean);
            diag.insert("mean_jumps".into(), col(2).mean);
        }
    }
    Ok(diag)
}

fn estimate_table(records: &[EstimateRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&format!(
            "{:<20} dt={} n={} paths={} u={} ± {}",
            r.scheme,
            num(r.dt),
            r.n.map(num).unwrap_or_else(|| "-".into()),
            r.paths,
            num(r.u_hat),
            num(r.u_se)
        ));
        for (v, e) in r.v_hat.iter().zip(&r.v_se) {
            s.push_str(&format!("  v={} ± {}", num(*v), num(*e)));
        }
        s.push('\n');
    }
    s
}

fn run_estimates(
    cfg: &ExperimentConfig,
    built: &Built,
    rt: &Runtime,
    report: &mut Report,
) -> AppResult<EstimateOutcome> {
    let e = &cfg.estimate;
    let mut estimates = Vec::new();
    let mut records = Vec::new();
    for name in cfg.schemes() {
        let scheme = cfg.scheme(name)?;
        let paths = cfg.paths(name);
        let problem = built.problem(scheme);
        let est = estimate_gradient(&problem, &e.x, e.t, paths, e.seed, &rt.executor)?;
        let diag = path_diagnostics(
            built,
            scheme,
            &e.x,
            e.t,
            paths.min(DIAGNOSTIC_PATHS),
            e.seed,
            rt,
        )?;
        records.push(EstimateRecord::new(&est, diag));
        estimates.push(est);
        dump_path(cfg, built, scheme, report)?;
    }
    report.add_json("estimate.json", &records)?;
    let (h, rows) = estimates_csv(&records);
    report.add_csv("estimate.csv", &h, &rows)?;
    Ok(EstimateOutcome {
        estimates,
        records,
        report: Report::default(),
    })
}

/// Writes path 0 when `record_full_path` is set for the scheme.
fn dump_path(
    cfg: &ExperimentConfig,
    built: &Built,
    scheme: Scheme,
    report: &mut Report,
) -> AppResult<()> {
    let e = &cfg.estimate;
    let mut noise = NoiseStream::new(e.seed, 0);
    match scheme {
        Scheme::Penalized { penalty, dt }
            if cfg.penalized.as_ref().is_some_and(|p| p.record_full_path) =>
        {
            let s = PenalizedScheme::new(&built.domain, &*built.field, penalty, dt)?;
            let (_, path) = s.record(&e.x, e.t, &mut noise)?;
            let (h, rows) = penalized_path_csv(&path);
            report.add_csv("path_penalized.csv", &h, &rows)?;
        }
        Scheme::Reflected { dt, mode }
            if cfg.reflected.as_ref().is_some_and(|r| r.record_full_path) =>
        {
            let s = ReflectedScheme::new(&built.domain, &*built.field, dt, mode)?;
            let rec = s.record(&e.x, e.t, &mut noise)?;
            let (h, rows) = reflected_path_csv(&rec);
            report.add_csv("path_reflected.csv", &h, &rows)?;
            let epsilon = cfg.reflected.as_ref().map_or(0.0, |r| r.epsilon);
            let (exc, _) = excursion_decomposition(&rec, epsilon);
            let rows_in: Vec<_> = exc
                .iter()
                .map(|x| (0usize, x, rec.times[x.start_index], rec.times[x.end_index]))
                .collect();
            let (h, rows) = excursions_csv(built.domain.dim(), &rows_in);
            report.add_csv("path_reflected_excursions.csv", &h, &rows)?;
        }
        _ => {}
    }
    Ok(())
}

pub fn estimate(cfg: &ExperimentConfig, rt: &Runtime) -> AppResult<EstimateOutcome> {
    let built = Built::new(cfg)?;
    let mut report = Report::new("estimate");
    let mut out = run_estimates(cfg, &built, rt, &mut report)?;
    report.text = estimate_table(&out.records);
    report.add_summary()?;
    out.report = report;
    Ok(out)
}

// ----------------------------------------------------------------- compare

/// One estimate-versus-reference comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub oracle: String,
    pub scheme: String,
    pub quantity: String,
    pub estimate: f64,
    pub se: f64,
    pub reference: f64,
    pub reference_se: f64,
    pub diff: f64,
    pub limit: f64,
    pub pass: bool,
}

impl OracleRow {
    fn new(
        oracle: &str,
        scheme: &str,
        quantity: String,
        est: MeanSe,
        reference: MeanSe,
        z: f64,
        allowance: f64,
    ) -> Self {
        let diff = (est.mean - reference.mean).abs();
        let limit = z * combined_se(est.se, reference.se) + allowance;
        Self {
            oracle: oracle.to_string(),
            scheme: scheme.to_string(),
            quantity,
            estimate: est.mean,
            se: est.se,
            reference: reference.mean,
            reference_se: reference.se,
            diff,
            limit,
            pass: diff <= limit,
        }
    }

    fn rule(&self) -> RuleOutcome {
        RuleOutcome {
            name: format!("{}:{}:{}", self.oracle, self.scheme, self.quantity),
            pass: self.pass,
            value: self.diff,
            limit: self.limit,
            detail: format!(
                "estimate {} vs reference {}",
                num(self.estimate),
                num(self.reference)
            ),
        }
    }
}

pub struct CompareOutcome {
    pub estimates: Vec<GradientEstimate>,
    pub rows: Vec<OracleRow>,
    pub report: Report,
}

fn exact(v: f64) -> MeanSe {
    MeanSe {
        mean: v,
        se: 0.0,
        count: 0,
    }
}

/// `σ` of a one-dimensional driftless model with constant diffusion.
fn scalar_sigma(cfg: &ExperimentConfig) -> Option<f64> {
    match &cfg.model {
        ModelConfig::Brownian { scale, .. } => Some(scale.abs()),
        ModelConfig::Linear {
            drift_matrix,
            drift_offset,
            sigma,
        } if sigma.len() == 1 => {
            let zero_drift = drift_matrix.iter().flatten().all(|v| *v == 0.0)
                && drift_offset
                    .as_ref()
                    .is_none_or(|c| c.iter().all(|v| *v == 0.0));
            zero_drift.then(|| sigma[0][0].abs())
        }
        _ => None,
    }
}

/// `(k, σ, lo, hi)` when the closed-form cosine solution applies.
fn series_setup(cfg: &ExperimentConfig) -> Option<(u32, f64, f64, f64)> {
    let DomainConfig::Interval { lo, hi } = cfg.domain else {
        return None;
    };
    let InitialConfig::Cosine {
        k,
        lo: flo,
        hi: fhi,
        ..
    } = cfg.initial
    else {
        return None;
    };
    let sigma = scalar_sigma(cfg)?;
    (flo == lo && fhi == hi).then_some((k, sigma, lo, hi))
}

fn need_1d(built: &Built, oracle: &str) -> AppResult<(f64, f64)> {
    match built.domain.shape() {
        Shape::Interval { lo, hi } => Ok((*lo, *hi)),
        _ => Err(AppError::Config(format!(
            "the {oracle} oracle needs an interval domain"
        ))),
    }
}

/// Result of the grid self-consistency checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub points: usize,
    pub spacing: f64,
    pub gradient_gap: f64,
    pub gradient_limit: f64,
    pub coarse_error: f64,
    pub fine_error: f64,
    pub ratio: f64,
    /// `series` or `richardson`.
    pub reference: String,
}

/// Compares the gradient system with the grid derivative, and measures
/// the error reduction of the grid solver when `h` is halved.
pub fn grid_consistency(cfg: &ExperimentConfig, built: &Built) -> AppResult<GridReport> {
    let (lo, hi) = need_1d(built, "grid_consistency")?;
    let o = &cfg.oracle;
    let t = cfg.estimate.t;
    let grid = GridSpec {
        lo,
        hi,
        points: o.grid_points,
    };
    let cn = crank_nicolson_neumann_1d(&*built.field, &*built.initial, t, grid, o.grid_steps)?;
    let w = gradient_system_1d(&*built.field, &*built.initial, t, grid, o.grid_steps)?;
    let h = cn.u.spacing();
    let gradient_gap = linalg::max_abs_diff(&w.values, &cn.du.values);
    let solve = |points: usize, steps: usize| -> AppResult<Grid1D> {
        let g = GridSpec { lo, hi, points };
        Ok(crank_nicolson_neumann_1d(&*built.field, &*built.initial, t, g, steps)?.u)
    };
    let fine_points = 2 * o.grid_points - 1;
    let fine = solve(fine_points, 2 * o.grid_steps)?;
    let (coarse_error, fine_error, reference) = match series_setup(cfg) {
        Some((k, sigma, lo, hi)) => {
            let err = |g: &Grid1D| {
                (0..g.points())
                    .map(|i| {
                        (g.values[i] - series_gradient_1d(k, sigma, t, g.node(i), lo, hi).0).abs()
                    })
                    .fold(0.0, f64::max)
            };
            (err(&cn.u), err(&fine), "series")
        }
        None => {
            let finest = solve(2 * fine_points - 1, 4 * o.grid_steps)?;
            let gap = |a: &Grid1D, b: &Grid1D, stride: usize| {
                (0..a.points())
                    .map(|i| (a.values[i] - b.values[i * stride]).abs())
                    .fold(0.0, f64::max)
            };
            (gap(&cn.u, &finest, 4), gap(&fine, &finest, 2), "richardson")
        }
    };
    Ok(GridReport {
        points: o.grid_points,
        spacing: h,
        gradient_gap,
        gradient_limit: 5.0 * h * h + 1e-8,
        coarse_error,
        fine_error,
        ratio: coarse_error / fine_error,
        reference: reference.to_string(),
    })
}

fn oracle_rows(
    cfg: &ExperimentConfig,
    built: &Built,
    estimates: &[GradientEstimate],
    rt: &Runtime,
    report: &mut Report,
) -> AppResult<Vec<OracleRow>> {
    let o = &cfg.oracle;
    let e = &cfg.estimate;
    let (z, allow) = (o.z, o.allowance);
    let d = built.domain.dim();
    let mut rows = Vec::new();
    for oracle in &o.run {
        match oracle {
            OracleName::Series => {
                let (k, sigma, lo, hi) = series_setup(cfg).ok_or_else(|| {
                    AppError::Config("the series oracle needs an interval, b = 0, constant σ and a matching cosine datum".into())
                })?;
                let (u, du) = series_gradient_1d(k, sigma, e.t, e.x[0], lo, hi);
                for est in estimates {
                    let name = est.scheme.name();
                    rows.push(OracleRow::new(
                        "series",
                        name,
                        "v[0]".into(),
                        est.component(0),
                        exact(du),
                        z,
                        allow,
                    ));
                    rows.push(OracleRow::new(
                        "series",
                        name,
                        "u".into(),
                        est.value,
                        exact(u),
                        z,
                        allow,
                    ));
                }
            }
            OracleName::CrankNicolson => {
                let (lo, hi) = need_1d(built, "crank_nicolson")?;
                let grid = GridSpec {
                    lo,
                    hi,
                    points: o.grid_points,
                };
                let sol = crank_nicolson_neumann_1d(
                    &*built.field,
                    &*built.initial,
                    e.t,
                    grid,
                    o.grid_steps,
                )?;
                let (u, du) = (sol.u.value_at(e.x[0]), sol.du.value_at(e.x[0]));
                for est in estimates {
                    let name = est.scheme.name();
                    rows.push(OracleRow::new(
                        "crank_nicolson",
                        name,
                        "v[0]".into(),
                        est.component(0),
                        exact(du),
                        z,
                        allow,
                    ));
                    rows.push(OracleRow::new(
                        "crank_nicolson",
                        name,
                        "u".into(),
                        est.value,
                        exact(u),
                        z,
                        allow,
                    ));
                }
            }
            OracleName::GridConsistency => {
                let g = grid_consistency(cfg, built)?;
                report.rules.push(RuleOutcome::at_most(
                    "grid:gradient_system",
                    g.gradient_gap,
                    g.gradient_limit,
                    "max node gap between the gradient system and the grid derivative",
                ));
                report.rules.push(RuleOutcome {
                    name: "grid:convergence_ratio".into(),
                    pass: g.ratio >= 3.5,
                    value: g.ratio,
                    limit: 3.5,
                    detail: format!(
                        "max node error {} -> {} ({} reference)",
                        num(g.coarse_error),
                        num(g.fine_error),
                        g.reference
                    ),
                });
                report.add_json("grid.json", &g)?;
            }
            OracleName::Radial => {
                let (
                    InitialConfig::RadialCosine { k, center, radius },
                    Shape::Ball {
                        center: bc,
                        radius: br,
                    },
                ) = (&cfg.initial, built.domain.shape())
                else {
                    return Err(AppError::Config(
                        "the radial oracle needs a ball and a radial_cosine datum".into(),
                    ));
                };
                let sigma = match &cfg.model {
                    ModelConfig::Brownian { scale, .. } => scale.abs(),
                    _ => {
                        return Err(AppError::Config(
                            "the radial oracle needs the brownian model".into(),
                        ))
                    }
                };
                if center != bc || radius != br {
                    return Err(AppError::Config(
                        "radial datum must share the ball's center and radius".into(),
                    ));
                }
                let profile = RadialCosine {
                    center: center.clone(),
                    radius: *radius,
                    k: *k,
                };
                let sol = radial_ball(
                    d,
                    sigma,
                    *radius,
                    |r| profile.profile(r).0,
                    e.t,
                    o.grid_points,
                    o.grid_steps,
                )?;
                let offset: Vec<f64> = e.x.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = linalg::norm(&offset);
                let (u, ur) = (sol.u.value_at(r), sol.du.value_at(r));
                for est in estimates {
                    let name = est.scheme.name();
                    for i in 0..d {
                        let reference = if r > 0.0 { ur * offset[i] / r } else { 0.0 };
                        rows.push(OracleRow::new(
                            "radial",
                            name,
                            format!("v[{i}]"),
                            est.component(i),
                            exact(reference),
                            z,
                            allow,
                        ));
                    }
                    rows.push(OracleRow::new(
                        "radial",
                        name,
                        "u".into(),
                        est.value,
                        exact(u),
                        z,
                        allow,
                    ));
                }
            }
            OracleName::FreeJacobian => {
                let (ModelConfig::Linear { drift_matrix, .. }, InitialConfig::Linear { weights }) =
                    (&cfg.model, &cfg.initial)
                else {
                    return Err(AppError::Config(
                        "the free_jacobian oracle needs the linear model and a linear datum".into(),
                    ));
                };
                let mut b = vec![0.0; d * d];
                for (i, row) in drift_matrix.iter().enumerate() {
                    for (j, v) in row.iter().enumerate() {
                        b[j * d + i] = *v;
                    }
                }
                let jac = free_jacobian_closed_form(&b, d, e.t)?;
                for est in estimates {
                    let name = est.scheme.name();
                    for i in 0..d {
                        let reference = dot(weights, &jac[i * d..(i + 1) * d]);
                        rows.push(OracleRow::new(
                            "free_jacobian",
                            name,
                            format!("v[{i}]"),
                            est.component(i),
                            exact(reference),
                            z,
                            allow,
                        ));
                    }
                }
            }
            OracleName::FiniteDifference => {
                let seed = o.fd_seed.unwrap_or(e.seed.wrapping_add(1));
                for est in estimates {
                    let name = est.scheme.name();
                    let problem = built.problem(est.scheme);
                    let paths = o.fd_paths.unwrap_or(est.paths);
                    for i in 0..d {
                        let dir = unit(d, i);
                        let crn = mc_finite_difference_gradient(
                            &problem,
                            &e.x,
                            &dir,
                            o.fd_epsilon,
                            e.t,
                            paths,
                            seed,
                            Coupling::Common,
                            &rt.executor,
                        )?;
                        rows.push(OracleRow::new(
                            "finite_difference",
                            name,
                            format!("v[{i}]"),
                            est.component(i),
                            crn,
                            z,
                            0.0,
                        ));
                        if o.fd_independent {
                            let ind = mc_finite_difference_gradient(
                                &problem,
                                &e.x,
                                &dir,
                                o.fd_epsilon,
                                e.t,
                                paths,
                                seed,
                                Coupling::Independent,
                                &rt.executor,
                            )?;
                            report.rules.push(RuleOutcome {
                                name: format!(
                                    "finite_difference:{name}:crn_se_below_independent[{i}]"
                                ),
                                pass: crn.se < ind.se,
                                value: crn.se,
                                limit: ind.se,
                                detail: "common-noise SE must be below independent-noise SE".into(),
                            });
                        }
                    }
                }
            }
            OracleName::SchemeAgreement => {
                if estimates.len() < 2 {
                    return Err(AppError::Config(
                        "scheme_agreement needs at least two schemes".into(),
                    ));
                }
                for a in 0..estimates.len() {
                    for b in a + 1..estimates.len() {
                        let (ea, eb) = (&estimates[a], &estimates[b]);
                        let label = format!("{}~{}", ea.scheme.name(), eb.scheme.name());
                        for i in 0..d {
                            rows.push(OracleRow::new(
                                "scheme_agreement",
                                &label,
                                format!("v[{i}]"),
                                ea.component(i),
                                eb.component(i),
                                z,
                                0.0,
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn compare(cfg: &ExperimentConfig, rt: &Runtime) -> AppResult<CompareOutcome> {
    if cfg.oracle.run.is_empty() {
        return Err(AppError::Config(
            "compare needs at least one entry in [oracle] run".into(),
        ));
    }
    let built = Built::new(cfg)?;
    let mut report = Report::new("compare");
    let est = run_estimates(cfg, &built, rt, &mut report)?;
    let mut grid_rules = Report::new("compare");
    let rows = oracle_rows(cfg, &built, &est.estimates, rt, &mut grid_rules)?;
    report.files.extend(grid_rules.files);
    report.rules.extend(rows.iter().map(OracleRow::rule));
    report.rules.extend(grid_rules.rules);
    let headers: Vec<String> = [
        "oracle",
        "scheme",
        "quantity",
        "estimate",
        "se",
        "reference",
        "reference_se",
        "diff",
        "limit",
        "pass",
    ]
    .map(String::from)
    .to_vec();
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.oracle.clone(),
                r.scheme.clone(),
                r.quantity.clone(),
                num(r.estimate),
                num(r.se),
                num(r.reference),
                num(r.reference_se),
                num(r.diff),
                num(r.limit),
                r.pass.to_string(),
            ]
        })
        .collect();
    report.add_csv("comparison.csv", &headers, &csv_rows)?;
    report.add_json("comparison.json", &rows)?;
    report.text = format!("{}{}", estimate_table(&est.records), report.rule_lines());
    report.add_summary()?;
    Ok(CompareOutcome {
        estimates: est.estimates,
        rows,
        report,
    })
}

// ------------------------------------------------------------- convergence

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: f64,
    pub label: String,
    pub dt: f64,
    pub mean: f64,
    pub se: f64,
    pub extra: BTreeMap<String, f64>,
}

impl SweepRow {
    fn new(parameter: f64, label: impl Into<String>, dt: f64, m: MeanSe) -> Self {
        Self {
            parameter,
            label: label.into(),
            dt,
            mean: m.mean,
            se: m.se,
            extra: BTreeMap::new(),
        }
    }
}

pub struct ConvergenceOutcome {
    pub rows: Vec<SweepRow>,
    /// Fitted slope of the occupation-moment study, when run.
    pub slope: Option<f64>,
    pub report: Report,
}

fn swept(
    cfg: &ExperimentConfig,
    base: Scheme,
    param: SweepParameter,
    v: f64,
    paths: usize,
) -> AppResult<(Scheme, usize)> {
    let step = cfg.convergence.as_ref().map_or(0.1, |c| c.penalty_step);
    Ok(match param {
        SweepParameter::Dt => (base.with_dt(v), paths),
        SweepParameter::N => {
            if !matches!(base, Scheme::Penalized { .. }) {
                return Err(AppError::Config(
                    "sweeping n needs the penalized scheme".into(),
                ));
            }
            (
                Scheme::Penalized {
                    penalty: v,
                    dt: step / v,
                },
                paths,
            )
        }
        SweepParameter::Epsilon => match base {
            Scheme::Reflected { dt, .. } => (
                Scheme::Reflected {
                    dt,
                    mode: JumpMode::EpsilonExcursion { epsilon: v },
                },
                paths,
            ),
            _ => {
                return Err(AppError::Config(
                    "sweeping epsilon needs the reflected scheme".into(),
                ))
            }
        },
        SweepParameter::Paths => {
            if v.fract() != 0.0 {
                return Err(AppError::Config(format!(
                    "path counts must be integers, got {v}"
                )));
            }
            (base, v as usize)
        }
    })
}

pub fn convergence(cfg: &ExperimentConfig, rt: &Runtime) -> AppResult<ConvergenceOutcome> {
    let conv = cfg
        .convergence
        .as_ref()
        .ok_or_else(|| AppError::Config("missing [convergence] section".into()))?;
    let built = Built::new(cfg)?;
    let e = &cfg.estimate;
    let name = cfg.schemes()[0];
    let base = cfg.scheme(name)?;
    let paths = cfg.paths(name);
    let mut report = Report::new("convergence");
    let mut rows = Vec::new();
    let mut slope = None;
    let need_n = |q: &str| -> AppResult<()> {
        if conv.parameter != SweepParameter::N {
            return Err(AppError::Config(format!("quantity {q} is swept over n")));
        }
        Ok(())
    };
    let sweep = PenaltySweep {
        domain: &built.domain,
        field: &*built.field,
        start: &e.x,
        horizon: e.t,
        paths,
        seed: e.seed,
        penalty_step: conv.penalty_step,
    };
    match conv.quantity {
        Quantity::Gradient | Quantity::Value | Quantity::LocalTime => {
            for &v in &conv.values {
                let (scheme, paths) = swept(cfg, base, conv.parameter, v, paths)?;
                let problem = built.problem(scheme);
                match conv.quantity {
                    Quantity::Gradient => {
                        let est =
                            estimate_gradient(&problem, &e.x, e.t, paths, e.seed, &rt.executor)?;
                        for i in 0..est.components.len() {
                            rows.push(SweepRow::new(
                                v,
                                format!("v[{i}]"),
                                scheme.dt(),
                                est.component(i),
                            ));
                        }
                        rows.push(SweepRow::new(v, "u", scheme.dt(), est.value));
                    }
                    Quantity::Value => {
                        let est = estimate_value(&problem, &e.x, e.t, paths, e.seed, &rt.executor)?;
                        rows.push(SweepRow::new(v, "u", scheme.dt(), est.value));
                    }
                    _ => {
                        let diag = path_diagnostics(&built, scheme, &e.x, e.t, paths, e.seed, rt)?;
                        let (label, key) = match scheme {
                            Scheme::Penalized { .. } => ("occupation", "mean_occupation"),
                            Scheme::Reflected { .. } => ("local_time", "mean_local_time"),
                        };
                        let m = MeanSe {
                            mean: diag[key],
                            se: diag[&format!("{key}_se")],
                            count: paths,
                        };
                        let mut row = SweepRow::new(v, label, scheme.dt(), m);
                        row.extra = diag;
                        rows.push(row);
                    }
                }
            }
        }
        Quantity::OccupationMoment => {
            need_n("occupation_moment")?;
            let study = occupation_moment_study(&sweep, &conv.values, &rt.executor)?;
            for r in &study.rows {
                rows.push(SweepRow::new(
                    r.penalty,
                    "fourth_moment",
                    r.dt,
                    r.fourth_moment,
                ));
                rows.push(SweepRow::new(
                    r.penalty,
                    "mean_occupation",
                    r.dt,
                    r.mean_occupation,
                ));
            }
            report.rules.push(RuleOutcome::at_most(
                "occupation_moment:slope",
                study.slope,
                conv.max_slope,
                format!("log-log slope ± {}", num(study.slope_se)),
            ));
            slope = Some(study.slope);
        }
        Quantity::JacobianMoment => {
            need_n("jacobian_moment")?;
            let mut moments = Vec::new();
            for &n in &conv.values {
                let m = jacobian_sup_moment(&sweep, n, &rt.executor)?;
                rows.push(SweepRow::new(
                    n,
                    "sup_jacobian_fourth_moment",
                    conv.penalty_step / n,
                    m,
                ));
                moments.push(m.mean);
            }
            let (first, last) = (moments[0], moments[moments.len() - 1]);
            report.rules.push(RuleOutcome::at_most(
                "jacobian_moment:ratio",
                last / first,
                conv.max_ratio,
                "moment at the last n over the moment at the first n",
            ));
        }
        Quantity::Dirichlet => {
            need_n("dirichlet")?;
            let alpha = conv.boundary_point.clone().unwrap_or_else(|| e.x.clone());
            if !built.domain.on_boundary(&alpha) {
                return Err(precondition(format!(
                    "point {alpha:?} is not on the boundary"
                )));
            }
            let mut est = Vec::new();
            for &n in &conv.values {
                let scheme = Scheme::Penalized {
                    penalty: n,
                    dt: conv.penalty_step / n,
                };
                let m = boundary_dirichlet_check(
                    &built.problem(scheme),
                    &alpha,
                    None,
                    e.t,
                    paths,
                    e.seed,
                    &rt.executor,
                )?;
                rows.push(SweepRow::new(n, "penalized", scheme.dt(), m));
                est.push(m);
            }
            let decreasing = est.windows(2).all(|w| w[1].mean.abs() < w[0].mean.abs());
            let trail: Vec<String> = est.iter().map(|m| num(m.mean.abs())).collect();
            report.rules.push(RuleOutcome::flag(
                "dirichlet:penalized_decreasing",
                decreasing,
                trail.join(" > "),
            ));
            let last = est[est.len() - 1];
            report.rules.push(RuleOutcome::at_most(
                "dirichlet:penalized_last_within_se",
                last.mean.abs(),
                cfg.oracle.z * last.se,
                "|estimate| at the largest n against z·SE",
            ));
            if cfg.reflected.is_some() {
                let scheme = cfg.scheme(SchemeName::Reflected)?;
                let m = boundary_dirichlet_check(
                    &built.problem(scheme),
                    &alpha,
                    None,
                    e.t,
                    cfg.paths(SchemeName::Reflected),
                    e.seed,
                    &rt.executor,
                )?;
                rows.push(SweepRow::new(0.0, "reflected", scheme.dt(), m));
                report.rules.push(RuleOutcome::flag(
                    "dirichlet:reflected_exact_zero",
                    m.mean == 0.0 && m.se == 0.0,
                    format!("mean {} se {}", num(m.mean), num(m.se)),
                ));
            }
        }
        Quantity::MartingaleResidual => {
            if conv.parameter != SweepParameter::Dt {
                return Err(AppError::Config(
                    "quantity martingale_residual is swept over dt".into(),
                ));
            }
            if conv.test_functions.is_empty() {
                return Err(AppError::Config(
                    "martingale_residual needs [[convergence.test_functions]]".into(),
                ));
            }
            let nu = conv
                .direction
                .clone()
                .unwrap_or_else(|| unit(built.domain.dim(), 0));
            for (j, tf) in conv.test_functions.iter().enumerate() {
                let test = cfg.test_function(tf)?;
                let mut points = Vec::new();
                for &dt in &conv.values {
                    let scheme = base.with_dt(dt);
                    let r = martingale_residual(
                        &test,
                        &built.problem(scheme),
                        &e.x,
                        &nu,
                        e.t,
                        paths,
                        e.seed,
                        conv.record_every,
                        &rt.executor,
                    )?;
                    let mut row = SweepRow::new(dt, format!("residual[{j}]"), dt, r.residual);
                    for (k, term) in GENERATOR_TERMS.iter().enumerate() {
                        row.extra.insert((*term).to_string(), r.terms[k]);
                    }
                    row.extra.insert("terminal".into(), r.terminal.mean);
                    row.extra.insert("initial".into(), r.initial);
                    rows.push(row);
                    points.push((dt, r.residual));
                }
                martingale_rules(j, &points, cfg.oracle.z, &mut report);
            }
        }
    }
    let headers: Vec<String> = ["parameter", "label", "dt", "mean", "se"]
        .map(String::from)
        .to_vec();
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.parameter),
                r.label.clone(),
                num(r.dt),
                num(r.mean),
                num(r.se),
            ]
        })
        .collect();
    report.add_csv("convergence.csv", &headers, &csv_rows)?;
    report.add_json("convergence.json", &rows)?;
    let mut text = String::new();
    for r in &rows {
        text.push_str(&format!(
            "{:>12} {:<28} dt={:<10} {} ± {}\n",
            num(r.parameter),
            r.label,
            num(r.dt),
            num(r.mean),
            num(r.se)
        ));
    }
    text.push_str(&report.rule_lines());
    report.text = text;
    report.add_summary()?;
    Ok(ConvergenceOutcome {
        rows,
        slope,
        report,
    })
}

/// `C` is the least-squares fit of `|R| ≈ C·Δt` over the sweep; each point
/// must satisfy `|R| ≤ z·SE + C·Δt`, and `|R|` must not grow as `Δt`
/// shrinks.
pub fn martingale_rules(j: usize, points: &[(f64, MeanSe)], z: f64, report: &mut Report) {
    let num_c: f64 = points.iter().map(|(dt, r)| r.mean.abs() * dt).sum();
    let den_c: f64 = points.iter().map(|(dt, _)| dt * dt).sum();
    let c = num_c / den_c;
    for (dt, r) in points {
        report.rules.push(RuleOutcome::at_most(
            format!("martingale[{j}]:dt={}", num(*dt)),
            r.mean.abs(),
            z * r.se + c * dt,
            format!("|R| against z·SE + C·dt with C = {}", num(c)),
        ));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let decreasing = sorted
        .windows(2)
        .all(|w| w[1].1.mean.abs() <= w[0].1.mean.abs());
    let trail: Vec<String> = sorted
        .iter()
        .map(|(dt, r)| format!("{}@{}", num(r.mean.abs()), num(*dt)))
        .collect();
    report.rules.push(RuleOutcome::flag(
        format!("martingale[{j}]:decreasing"),
        decreasing,
        trail.join(" >= "),
    ));
}

// -------------------------------------------------------------- excursions

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcursionSummary {
    pub paths: usize,
    pub epsilon: f64,
    pub split: f64,
    pub mean_excursions: f64,
    pub mean_duration: f64,
    pub mean_jumps: f64,
    pub mean_contacts: f64,
    pub mean_local_time: f64,
    pub mof_max_error_project: f64,
    pub mof_max_error_excursion: f64,
    pub tangential_max: f64,
    pub contact_steps: u64,
}

pub struct ExcursionOutcome {
    pub summary: ExcursionSummary,
    pub report: Report,
}

/// Max-entry gap between the direct Jacobian over `[0, t]` and the
/// composition of the flows over `[0, s]` and `[s, t]` on the same noise.
fn mof_gap(
    scheme: &ReflectedScheme<'_>,
    x: &[f64],
    s: f64,
    t: f64,
    seed: u64,
    path: u64,
) -> neumann_core::Result<f64> {
    let d = x.len();
    let direct = scheme.simulate(x, t, &mut NoiseStream::new(seed, path))?;
    let mut st = scheme.start(x)?;
    let mut noise = NoiseStream::new(seed, path);
    let mut ws = scheme.workspace();
    scheme.advance_to(&mut st, s, &mut noise, &mut ws, |_, _| {})?;
    let first = st.jacobian.clone();
    restart_jacobian(&mut st);
    scheme.advance_to(&mut st, t, &mut noise, &mut ws, |_, _| {})?;
    scheme.flush(&mut st);
    let composed = compose_jacobians(&first, &st.jacobian, d)?;
    if st.position != direct.position {
        return Err(neumann_core::Error::Numerical(
            "split and direct runs diverged".into(),
        ));
    }
    Ok(linalg::max_abs_diff(&composed, &direct.jacobian))
}

pub fn excursions(cfg: &ExperimentConfig, rt: &Runtime) -> AppResult<ExcursionOutcome> {
    let ex = cfg
        .excursions
        .as_ref()
        .ok_or_else(|| AppError::Config("missing [excursions] section".into()))?;
    let rc = cfg
        .reflected
        .as_ref()
        .ok_or_else(|| AppError::Config("excursions need a [reflected] section".into()))?;
    let built = Built::new(cfg)?;
    let e = &cfg.estimate;
    let d = built.domain.dim();
    let epsilon = if rc.mode == ModeName::Excursion {
        rc.epsilon
    } else {
        ex.epsilon
    };
    let configured = ReflectedScheme::new(
        &built.domain,
        &*built.field,
        rc.dt,
        cfg_mode(rc.mode, rc.epsilon),
    )?;
    let project = ReflectedScheme::new(
        &built.domain,
        &*built.field,
        rc.dt,
        JumpMode::ProjectEveryContact,
    )?;
    let excursion = ReflectedScheme::new(
        &built.domain,
        &*built.field,
        rc.dt,
        JumpMode::EpsilonExcursion { epsilon },
    )?;
    let split = ex.split * e.t;
    struct PathResult {
        excursions: Vec<(f64, f64, neumann_core::reflected::ExcursionRecord)>,
        count: f64,
        mean_duration: f64,
        jumps: f64,
        contacts: f64,
        local_time: f64,
        mof_project: f64,
        mof_excursion: f64,
        tangential: f64,
        contact_steps: u64,
    }
    let results = try_map_paths(
        &rt.executor,
        ex.paths,
        |p| -> neumann_core::Result<PathResult> {
            let rec = configured.record(&e.x, e.t, &mut NoiseStream::new(e.seed, p as u64))?;
            let (list, _) = excursion_decomposition(&rec, epsilon);
            let count = list.len() as f64;
            let mean_duration = if list.is_empty() {
                0.0
            } else {
                list.iter().map(|x| x.duration).sum::<f64>() / count
            };
            let mut tangential: f64 = 0.0;
            let mut contact_steps = 0u64;
            let mut normal = vec![0.0; d];
            let mut st = project.start(&e.x)?;
            project.simulate_from(
                &mut st,
                e.t,
                &mut NoiseStream::new(e.seed, p as u64),
                |s, ev| {
                    if ev.contact {
                        contact_steps += 1;
                        built.domain.normal_into(&s.position, &mut normal);
                        for k in 0..s.columns() {
                            tangential = tangential.max(dot(s.column(k), &normal).abs());
                        }
                    }
                },
            )?;
            Ok(PathResult {
                excursions: if p < ex.dump_paths {
                    list.into_iter()
                        .map(|x| (rec.times[x.start_index], rec.times[x.end_index], x))
                        .collect()
                } else {
                    Vec::new()
                },
                count,
                mean_duration,
                jumps: rec.jumps as f64,
                contacts: rec.contacts.iter().filter(|c| **c).count() as f64,
                local_time: rec.local_time.last().copied().unwrap_or(0.0),
                mof_project: mof_gap(&project, &e.x, split, e.t, e.seed, p as u64)?,
                mof_excursion: mof_gap(&excursion, &e.x, split, e.t, e.seed, p as u64)?,
                tangential,
                contact_steps,
            })
        },
    )?;
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&PathResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let max = |f: &dyn Fn(&PathResult) -> f64| results.iter().map(f).fold(0.0, f64::max);
    let summary = ExcursionSummary {
        paths: ex.paths,
        epsilon,
        split,
        mean_excursions: mean(&|r| r.count),
        mean_duration: mean(&|r| r.mean_duration),
        mean_jumps: mean(&|r| r.jumps),
        mean_contacts: mean(&|r| r.contacts),
        mean_local_time: mean(&|r| r.local_time),
        mof_max_error_project: max(&|r| r.mof_project),
        mof_max_error_excursion: max(&|r| r.mof_excursion),
        tangential_max: max(&|r| r.tangential),
        contact_steps: results.iter().map(|r| r.contact_steps).sum(),
    };
    let mut report = Report::new("excursions");
    report.rules.push(RuleOutcome::at_most(
        "mof:project",
        summary.mof_max_error_project,
        1e-12,
        "max entry gap of J_{s,t}·J_{0,s} against J_{0,t}",
    ));
    report.rules.push(RuleOutcome::at_most(
        "mof:excursion",
        summary.mof_max_error_excursion,
        1e-12,
        format!("same, epsilon = {}", num(epsilon)),
    ));
    report.rules.push(RuleOutcome::flag(
        "tangential:contacts_seen",
        summary.contact_steps > 0,
        format!("{} contact steps", summary.contact_steps),
    ));
    report.rules.push(RuleOutcome::at_most(
        "tangential",
        summary.tangential_max,
        1e-12,
        "max |γ·J column| after a projection",
    ));
    let dumped: Vec<(usize, &neumann_core::reflected::ExcursionRecord, f64, f64)> = results
        .iter()
        .enumerate()
        .flat_map(|(p, r)| r.excursions.iter().map(move |(s, t, x)| (p, x, *s, *t)))
        .collect();
    let (h, rows) = excursions_csv(d, &dumped);
    report.add_csv("excursions.csv", &h, &rows)?;
    report.add_json("excursions.json", &summary)?;
    report.text = format!(
        "paths={} epsilon={} excursions/path={} mean duration={} jumps/path={} local time={}\n{}",
        summary.paths,
        num(epsilon),
        num(summary.mean_excursions),
        num(summary.mean_duration),
        num(summary.mean_jumps),
        num(summary.mean_local_time),
        report.rule_lines()
    );
    report.add_summary()?;
    Ok(ExcursionOutcome { summary, report })
}

fn cfg_mode(mode: ModeName, epsilon: f64) -> JumpMode {
    match mode {
        ModeName::Project => JumpMode::ProjectEveryContact,
        ModeName::Excursion => JumpMode::EpsilonExcursion { epsilon },
    }
}
