//! Monte Carlo estimators for `u(t,x) = E f(X_t)` and the gradient
//! `v_i(t,x) = E ∇f(X_t)·J_t e_i`, plus the validation functionals built on
//! the same paths.
//!
//! Every estimator simulates path `p` with `NoiseStream::new(seed, p)` and
//! reduces the per-path results in path order with compensated sums, so
//! results do not depend on the executor.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::executor::{try_map_paths, PathExecutor};
use crate::geometry::{remove_normal_component, BoundaryFrame, Domain, Shape};
use crate::linalg::{self, dot};
use crate::math;
use crate::model::{boundary_samples, halton, CoefficientField, InitialCondition};
use crate::noise::NoiseStream;
use crate::penalized::PenalizedScheme;
use crate::reflected::{JumpMode, ReflectedScheme};
use crate::stats::MeanSe;

/// Confidence multiplier used for every `mean ± z·SE` statement.
pub const Z_SCORE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Penalized { penalty: f64, dt: f64 },
    Reflected { dt: f64, mode: JumpMode },
}

impl Scheme {
    pub fn dt(&self) -> f64 {
        match self {
            Scheme::Penalized { dt, .. } | Scheme::Reflected { dt, .. } => *dt,
        }
    }

    pub fn penalty(&self) -> Option<f64> {
        match self {
            Scheme::Penalized { penalty, .. } => Some(*penalty),
            Scheme::Reflected { .. } => None,
        }
    }

    /// `"penalized"`, `"reflected"` or `"reflected-excursion"`.
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Penalized { .. } => "penalized",
            Scheme::Reflected {
                mode: JumpMode::ProjectEveryContact,
                ..
            } => "reflected",
            Scheme::Reflected {
                mode: JumpMode::EpsilonExcursion { .. },
                ..
            } => "reflected-excursion",
        }
    }

    pub fn with_dt(self, dt: f64) -> Self {
        match self {
            Scheme::Penalized { penalty, .. } => Scheme::Penalized { penalty, dt },
            Scheme::Reflected { mode, .. } => Scheme::Reflected { dt, mode },
        }
    }
}

/// Domain, coefficients, initial datum and scheme of one experiment.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub domain: &'a Domain,
    pub field: &'a dyn CoefficientField,
    pub initial: &'a dyn InitialCondition,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueEstimate {
    pub x: Vec<f64>,
    pub t: f64,
    pub value: MeanSe,
    pub paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub x: Vec<f64>,
    pub t: f64,
    /// `û` from the same paths.
    pub value: MeanSe,
    pub components: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl GradientEstimate {
    pub fn component(&self, i: usize) -> MeanSe {
        MeanSe {
            mean: self.components[i],
            se: self.standard_errors[i],
            count: self.paths,
        }
    }
}

/// A built scheme behind one interface.
enum Driver<'a> {
    Penalized(PenalizedScheme<'a>),
    Reflected(ReflectedScheme<'a>),
}

/// Per-step view handed to path observers.
pub struct PathView<'s> {
    pub time: f64,
    pub position: &'s [f64],
    pub jacobian: &'s [f64],
    pub contact: bool,
    pub local_time_increment: f64,
}

impl<'a> Driver<'a> {
    fn new(problem: &Problem<'a>) -> Result<Self> {
        if problem.initial.dim() != problem.domain.dim() {
            bail!(
                InvalidInput,
                "initial condition dimension {} differs from domain dimension {}",
                problem.initial.dim(),
                problem.domain.dim()
            );
        }
        Ok(match problem.scheme {
            Scheme::Penalized { penalty, dt } => Driver::Penalized(PenalizedScheme::new(
                problem.domain,
                problem.field,
                penalty,
                dt,
            )?),
            Scheme::Reflected { dt, mode } => Driver::Reflected(ReflectedScheme::new(
                problem.domain,
                problem.field,
                dt,
                mode,
            )?),
        })
    }

    /// Simulates one path from `x` with the given initial Jacobian columns
    /// and returns the terminal position and Jacobian.
    fn run<O>(
        &self,
        x: &[f64],
        jacobian: Vec<f64>,
        t: f64,
        noise: &mut NoiseStream,
        mut observer: O,
    ) -> Result<(Vec<f64>, Vec<f64>)>
    where
        O: FnMut(&PathView<'_>),
    {
        match self {
            Driver::Penalized(s) => {
                let mut st = s.start_with_jacobian(x, jacobian)?;
                s.advance_to(&mut st, t, noise, |st| {
                    observer(&PathView {
                        time: st.time,
                        position: &st.position,
                        jacobian: &st.jacobian,
                        contact: false,
                        local_time_increment: 0.0,
                    })
                })?;
                Ok((st.position, st.jacobian))
            }
            Driver::Reflected(s) => {
                let mut st = s.start_with_jacobian(x, jacobian)?;
                s.simulate_from(&mut st, t, noise, |st, e| {
                    observer(&PathView {
                        time: st.time,
                        position: &st.position,
                        jacobian: &st.jacobian,
                        contact: e.contact,
                        local_time_increment: e.local_time,
                    })
                })?;
                Ok((st.position, st.jacobian))
            }
        }
    }
}

fn check_request(problem: &Problem<'_>, x: &[f64], t: f64, paths: usize) -> Result<()> {
    if x.len() != problem.domain.dim() {
        bail!(
            InvalidInput,
            "point {x:?} has dimension {}, expected {}",
            x.len(),
            problem.domain.dim()
        );
    }
    if !(t > 0.0) || !t.is_finite() {
        bail!(InvalidInput, "horizon must be positive, got {t}");
    }
    if paths == 0 {
        bail!(InvalidInput, "need at least one path");
    }
    if !problem.domain.contains(x)
        && problem.domain.distance(x)? > problem.domain.boundary_tolerance()
    {
        bail!(Precondition, "point {x:?} is outside the domain");
    }
    Ok(())
}

/// `û(t,x)` with its standard error.
pub fn estimate_value<E: PathExecutor + ?Sized>(
    problem: &Problem<'_>,
    x: &[f64],
    t: f64,
    paths: usize,
    seed: u64,
    executor: &E,
) -> Result<ValueEstimate> {
    check_request(problem, x, t, paths)?;
    let driver = Driver::new(problem)?;
    let d = x.len();
    let samples = try_map_paths(executor, paths, |p| {
        let mut noise = NoiseStream::new(seed, p as u64);
        // A single zero column: the value needs no Jacobian.
        let (pos, _) = driver.run(x, vec![0.0; d], t, &mut noise, |_| {})?;
        Ok(problem.initial.value(&pos))
    })?;
    Ok(ValueEstimate {
        x: x.to_vec(),
        t,
        value: MeanSe::from_samples(samples.iter().copied()),
        paths,
        seed,
        scheme: problem.scheme,
    })
}

/// `v̂_i(t,x)` for every `i` from the full Jacobian of each path, with `û`
/// from the same paths.
pub fn estimate_gradient<E: PathExecutor + ?Sized>(
    problem: &Problem<'_>,
    x: &[f64],
    t: f64,
    paths: usize,
    seed: u64,
    executor: &E,
) -> Result<GradientEstimate> {
    check_request(problem, x, t, paths)?;
    let driver = Driver::new(problem)?;
    let d = x.len();
    let samples = try_map_paths(executor, paths, |p| {
        let mut noise = NoiseStream::new(seed, p as u64);
        let (pos, jac) = driver.run(x, linalg::identity(d), t, &mut noise, |_| {})?;
        let mut grad = vec![0.0; d];
        problem.initial.gradient(&pos, &mut grad);
        let mut row = Vec::with_capacity(d + 1);
        row.push(problem.initial.value(&pos));
        row.extend(jac.chunks_exact(d).map(|col| dot(&grad, col)));
        Ok(row)
    })?;
    let value = MeanSe::from_samples(samples.iter().map(|r| r[0]));
    let per: Vec<MeanSe> = (0..d)
        .map(|i| MeanSe::from_samples(samples.iter().map(|r| r[i + 1])))
        .collect();
    Ok(GradientEstimate {
        x: x.to_vec(),
        t,
        value,
        components: per.iter().map(|m| m.mean).collect(),
        standard_errors: per.iter().map(|m| m.se).collect(),
        paths,
        seed,
        scheme: problem.scheme,
    })
}

/// `E ∇f(X_t)·J^ν_t` with the Jacobian started at the column `ν`.
pub fn estimate_directional<E: PathExecutor + ?Sized>(
    problem: &Problem<'_>,
    x: &[f64],
    direction: &[f64],
    t: f64,
    paths: usize,
    seed: u64,
    executor: &E,
) -> Result<MeanSe> {
    check_request(problem, x, t, paths)?;
    if direction.len() != x.len() {
        bail!(InvalidInput, "direction has the wrong dimension");
    }
    directional_from(problem, x, direction.to_vec(), t, paths, seed, executor)
}

fn directional_from<E: PathExecutor + ?Sized>(
    problem: &Problem<'_>,
    x: &[f64],
    column: Vec<f64>,
    t: f64,
    paths: usize,
    seed: u64,
    executor: &E,
) -> Result<MeanSe> {
    let driver = Driver::new(problem)?;
    let d = x.len();
    let samples = try_map_paths(executor, paths, |p| {
        let mut noise = NoiseStream::new(seed, p as u64);
        let (pos, jac) = driver.run(x, column.clone(), t, &mut noise, |_| {})?;
        let mut grad = vec![0.0; d];
        problem.initial.gradient(&pos, &mut grad);
        Ok(dot(&grad, &jac))
    })?;
    Ok(MeanSe::from_samples(samples.iter().copied()))
}

/// `E ∇f(X_t)·J_t` started from a boundary point with the Jacobian column
/// `γ(α)` (or `direction` when given). The reflected scheme projects the
/// column at time 0, so the normal direction gives exactly zero.
pub fn boundary_dirichlet_check<E: PathExecutor + ?Sized>(
    problem: &Problem<'_>,
    alpha: &[f64],
    direction: Option<&[f64]>,
    t: f64,
    paths: usize,
    seed: u64,
    executor: &E,
) -> Result<MeanSe> {
    check_request(problem, alpha, t, paths)?;
    if !problem.domain.on_boundary(alpha) {
        bail!(Precondition, "point {alpha:?} is not on the boundary");
    }
    let column = match direction {
        Some(v) => {
            if v.len() != alpha.len() {
                bail!(InvalidInput, "direction has the wrong dimension");
            }
            v.to_vec()
        }
        None => problem.domain.inward_normal(alpha)?,
    };
    directional_from(problem, alpha, column, t, paths, seed, executor)
}

/// Accumulated curvature term `−Σ (∇f(X), 𝒮(X)J e_i) ΔL` over contact
/// steps, per direction, next to the flat sum `−Σ (∇f(X)·J e_i) ΔL`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeingartenReport {
    pub shape_term: Vec<MeanSe>,
    pub flat_term: Vec<MeanSe>,
    /// Largest per-path gap `|shape − flat/R|` for a ball of radius `R`;
    /// `None` for other shapes.
    pub ball_identity_gap: Option<f64>,
    pub paths: usize,
}

/// Runs reflected paths and accumulates the shape-operator term along the
/// post-jump Jacobian at every contact step.
pub fn weingarten_diagnostic<E: PathExecutor + ?Sized>(
    problem: &Problem<'_>,
    x: &[f64],
    t: f64,
    paths: usize,
    seed: u64,
    executor: &E,
) -> Result<WeingartenReport> {
    check_request(problem, x, t, paths)?;
    let Scheme::Reflected { dt, mode } = problem.scheme else {
        bail!(
            InvalidInput,
            "the curvature diagnostic needs the reflected scheme"
        );
    };
    let scheme = ReflectedScheme::new(problem.domain, problem.field, dt, mode)?;
    let d = x.len();
    let radius = match problem.domain.shape() {
        Shape::Ball { radius, .. } => Some(*radius),
        _ => None,
    };
    let rows = try_map_paths(executor, paths, |p| {
        let mut noise = NoiseStream::new(seed, p as u64);
        let mut st = scheme.start(x)?;
        let mut frame = BoundaryFrame {
            point: vec![0.0; d],
            normal: vec![0.0; d],
        };
        let mut grad = vec![0.0; d];
        let mut shaped = vec![0.0; d];
        let mut shape = vec![0.0; d];
        let mut flat = vec![0.0; d];
        scheme.simulate_from(&mut st, t, &mut noise, |s, e| {
            if !e.contact {
                return;
            }
            frame.point.copy_from_slice(&s.position);
            problem.domain.normal_into(&s.position, &mut frame.normal);
            problem.initial.gradient(&s.position, &mut grad);
            for k in 0..d {
                let col = s.column(k);
                problem.domain.weingarten_into(&frame, col, &mut shaped);
                shape[k] -= dot(&grad, &shaped) * e.local_time;
                flat[k] -= dot(&grad, col) * e.local_time;
            }
        })?;
        shape.extend_from_slice(&flat);
        Ok(shape)
    })?;
    let shape_term = (0..d)
        .map(|k| MeanSe::from_samples(rows.iter().map(|r| r[k])))
        .collect();
    let flat_term = (0..d)
        .map(|k| MeanSe::from_samples(rows.iter().map(|r| r[d + k])))
        .collect();
    let ball_identity_gap = radius.map(|r| {
        rows.iter()
            .flat_map(|row| (0..d).map(move |k| math::abs(row[k] - row[d + k] / r)))
            .fold(0.0, f64::max)
    });
    Ok(WeingartenReport {
        shape_term,
        flat_term,
        ball_identity_gap,
        paths,
    })
}

/// A function `F(x, ν)` with the derivatives the coupled generator needs.
///
/// Matrix outputs are column-major `d × d`; `hess_x_nu` has entry `(i, j)`
/// equal to `∂_{x_i} ∂_{ν_j} F`.
pub trait TestFunction: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64], nu: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], nu: &[f64], out: &mut [f64]);
    fn grad_nu(&self, x: &[f64], nu: &[f64], out: &mut [f64]);
    fn hess_xx(&self, x: &[f64], nu: &[f64], out: &mut [f64]);
    fn hess_x_nu(&self, x: &[f64], nu: &[f64], out: &mut [f64]);
    fn hess_nu_nu(&self, x: &[f64], nu: &[f64], out: &mut [f64]);
}

/// Boundary conditions checked on sampled boundary points and directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admissibility {
    /// Largest `|∂_γ F(·,ν)(α)|`.
    pub normal_derivative: f64,
    /// Largest `|F(α,ν) − F(α, N⊥(α)ν)|`.
    pub tangential_invariance: f64,
    pub samples: usize,
}

impl Admissibility {
    pub const NORMAL_DERIVATIVE_TOL: f64 = 1e-8;
    pub const INVARIANCE_TOL: f64 = 1e-10;

    pub fn normal_derivative_pass(&self) -> bool {
        self.normal_derivative <= Self::NORMAL_DERIVATIVE_TOL
    }

    pub fn invariance_pass(&self) -> bool {
        self.tangential_invariance <= Self::INVARIANCE_TOL
    }

    pub fn pass(&self) -> bool {
        self.normal_derivative_pass() && self.invariance_pass()
    }
}

/// Checks both boundary conditions at `samples` boundary points, each with
/// a few directions drawn from `[-2, 2]^d`.
pub fn certify<F: TestFunction + ?Sized>(
    test: &F,
    domain: &Domain,
    samples: usize,
) -> Result<Admissibility> {
    let d = domain.dim();
    if test.dim() != d {
        bail!(
            InvalidInput,
            "test function dimension {} differs from domain dimension {d}",
            test.dim()
        );
    }
    let frames = boundary_samples(domain, samples, 0);
    let mut nu = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut worst_normal: f64 = 0.0;
    let mut worst_inv: f64 = 0.0;
    let mut count = 0;
    for (i, frame) in frames.iter().enumerate() {
        for j in 0..4u64 {
            halton(7 + 4 * i as u64 + j, d, &mut nu);
            nu.iter_mut().for_each(|v| *v = 4.0 * *v - 2.0);
            test.grad_x(&frame.point, &nu, &mut grad);
            worst_normal = worst_normal.max(math::abs(dot(&grad, &frame.normal)));
            let mut tangential = nu.clone();
            remove_normal_component(&mut tangential, &frame.normal);
            worst_inv = worst_inv.max(math::abs(
                test.value(&frame.point, &nu) - test.value(&frame.point, &tangential),
            ));
            count += 1;
        }
    }
    Ok(Admissibility {
        normal_derivative: worst_normal,
        tangential_invariance: worst_inv,
        samples: count,
    })
}

/// How the weight `ψ` multiplies the direction in [`NeumannTestFunction`].
#[derive(Debug, Clone, PartialEq)]
pub enum DirectionFactor {
    /// `h(ν) = w·ν`.
    Linear(Vec<f64>),
    /// `h(ν) = |ν|²`.
    Quadratic,
}

/// `F(x,ν) = c_g g(x) + c_ψ ψ(x) h(ν)` with
///
/// * on an interval: `g = cos(kπ(x−lo)/(hi−lo))`, `ψ = (x−lo)²(hi−x)²`;
/// * on a ball: `g = cos(kπ|x−c|²/R²)`, `ψ = (R² − |x−c|²)²`.
///
/// `g` has zero normal derivative on the boundary, and `ψ`, `∇ψ` vanish
/// there, so both boundary conditions hold by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NeumannTestFunction {
    dim: usize,
    shape: Shape,
    pub k: u32,
    pub g_weight: f64,
    pub psi_weight: f64,
    pub factor: DirectionFactor,
}

struct Parts {
    g: f64,
    psi: f64,
}

impl NeumannTestFunction {
    pub fn new(
        domain: &Domain,
        k: u32,
        g_weight: f64,
        psi_weight: f64,
        factor: DirectionFactor,
    ) -> Result<Self> {
        match domain.shape() {
            Shape::Interval { .. } | Shape::Ball { .. } => {}
            _ => bail!(
                InvalidInput,
                "the Neumann test family is defined on intervals and balls"
            ),
        }
        if let DirectionFactor::Linear(w) = &factor {
            if w.len() != domain.dim() {
                bail!(InvalidInput, "direction weights have the wrong dimension");
            }
        }
        Ok(Self {
            dim: domain.dim(),
            shape: domain.shape().clone(),
            k,
            g_weight,
            psi_weight,
            factor,
        })
    }

    /// Values of `g`, `ψ` and their gradients and Hessians at `x`.
    fn parts(
        &self,
        x: &[f64],
        dg: &mut [f64],
        dpsi: &mut [f64],
        hg: Option<&mut [f64]>,
        hpsi: Option<&mut [f64]>,
    ) -> Parts {
        let k = self.k as f64;
        let pi = core::f64::consts::PI;
        match &self.shape {
            Shape::Interval { lo, hi } => {
                let len = hi - lo;
                let w = k * pi / len;
                let phase = k * (x[0] - lo) / len;
                let (c, s) = (math::cos_pi(phase), math::sin_pi(phase));
                let p = x[0] - lo;
                let q = hi - x[0];
                dg[0] = -w * s;
                dpsi[0] = 2.0 * p * q * (q - p);
                if let Some(h) = hg {
                    h[0] = -w * w * c;
                }
                if let Some(h) = hpsi {
                    h[0] = 2.0 * (q * q - 4.0 * p * q + p * p);
                }
                Parts {
                    g: c,
                    psi: p * p * q * q,
                }
            }
            Shape::Ball { center, radius } => {
                let d = self.dim;
                let r2 = radius * radius;
                let s2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                let kappa = k * pi / r2;
                let phase = k * s2 / r2;
                let (c, s) = (math::cos_pi(phase), math::sin_pi(phase));
                let gap = r2 - s2;
                for i in 0..d {
                    let y = x[i] - center[i];
                    dg[i] = -2.0 * kappa * s * y;
                    dpsi[i] = -4.0 * gap * y;
                }
                if let Some(h) = hg {
                    for i in 0..d {
                        for j in 0..d {
                            let yy = (x[i] - center[i]) * (x[j] - center[j]);
                            h[j * d + i] = -4.0 * kappa * kappa * c * yy
                                - if i == j { 2.0 * kappa * s } else { 0.0 };
                        }
                    }
                }
                if let Some(h) = hpsi {
                    for i in 0..d {
                        for j in 0..d {
                            let yy = (x[i] - center[i]) * (x[j] - center[j]);
                            h[j * d + i] = 8.0 * yy - if i == j { 4.0 * gap } else { 0.0 };
                        }
                    }
                }
                Parts {
                    g: c,
                    psi: gap * gap,
                }
            }
            _ => unreachable!("checked in the constructor"),
        }
    }

    fn h(&self, nu: &[f64]) -> f64 {
        match &self.factor {
            DirectionFactor::Linear(w) => dot(w, nu),
            DirectionFactor::Quadratic => dot(nu, nu),
        }
    }

    fn grad_h(&self, nu: &[f64], out: &mut [f64]) {
        match &self.factor {
            DirectionFactor::Linear(w) => out.copy_from_slice(w),
            DirectionFactor::Quadratic => {
                for (o, v) in out.iter_mut().zip(nu) {
                    *o = 2.0 * v;
                }
            }
        }
    }
}

// Derivative buffers for dimensions up to this size live on the stack.
const STACK_DIM: usize = 4;

impl TestFunction for NeumannTestFunction {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64], nu: &[f64]) -> f64 {
        let mut dg = [0.0; STACK_DIM];
        let mut dp = [0.0; STACK_DIM];
        let parts = self.parts(x, &mut dg[..self.dim], &mut dp[..self.dim], None, None);
        self.g_weight * parts.g + self.psi_weight * parts.psi * self.h(nu)
    }

    fn grad_x(&self, x: &[f64], nu: &[f64], out: &mut [f64]) {
        let mut dp = [0.0; STACK_DIM];
        self.parts(x, out, &mut dp[..self.dim], None, None);
        let h = self.h(nu);
        for i in 0..self.dim {
            out[i] = self.g_weight * out[i] + self.psi_weight * h * dp[i];
        }
    }

    fn grad_nu(&self, x: &[f64], nu: &[f64], out: &mut [f64]) {
        let mut dg = [0.0; STACK_DIM];
        let mut dp = [0.0; STACK_DIM];
        let parts = self.parts(x, &mut dg[..self.dim], &mut dp[..self.dim], None, None);
        self.grad_h(nu, out);
        for o in out.iter_mut() {
            *o *= self.psi_weight * parts.psi;
        }
    }

    fn hess_xx(&self, x: &[f64], nu: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut dg = [0.0; STACK_DIM];
        let mut dp = [0.0; STACK_DIM];
        let mut hp = [0.0; STACK_DIM * STACK_DIM];
        self.parts(
            x,
            &mut dg[..d],
            &mut dp[..d],
            Some(out),
            Some(&mut hp[..d * d]),
        );
        let h = self.h(nu);
        for i in 0..d * d {
            out[i] = self.g_weight * out[i] + self.psi_weight * h * hp[i];
        }
    }

    fn hess_x_nu(&self, x: &[f64], nu: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut dg = [0.0; STACK_DIM];
        let mut dp = [0.0; STACK_DIM];
        let mut dh = [0.0; STACK_DIM];
        self.parts(x, &mut dg[..d], &mut dp[..d], None, None);
        self.grad_h(nu, &mut dh[..d]);
        for j in 0..d {
            for i in 0..d {
                out[j * d + i] = self.psi_weight * dp[i] * dh[j];
            }
        }
    }

    fn hess_nu_nu(&self, x: &[f64], _nu: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.fill(0.0);
        if let DirectionFactor::Quadratic = self.factor {
            let mut dg = [0.0; STACK_DIM];
            let mut dp = [0.0; STACK_DIM];
            let parts = self.parts(x, &mut dg[..d], &mut dp[..d], None, None);
            for i in 0..d {
                out[i * d + i] = 2.0 * self.psi_weight * parts.psi;
            }
        }
    }
}

/// Names of the generator terms, in the order of
/// [`ResidualReport::terms`].
pub const GENERATOR_TERMS: [&str; 5] = ["x_second", "x_first", "nu_second", "mixed", "nu_first"];

/// The five terms of `(L^X + L^J)F(x, ν)`.
pub fn generator_terms<F: TestFunction + ?Sized>(
    test: &F,
    field: &dyn CoefficientField,
    x: &[f64],
    nu: &[f64],
    scratch: &mut GeneratorScratch,
) -> [f64; 5] {
    let d = x.len();
    let s = scratch;
    field.drift(x, &mut s.drift);
    field.diffusion(x, &mut s.sigma);
    field.drift_jacobian(x, &mut s.drift_jac);
    let varying = !field.constant_diffusion();
    if varying {
        field.diffusion_jacobian(x, &mut s.sigma_jac);
    }
    test.grad_x(x, nu, &mut s.gx);
    test.grad_nu(x, nu, &mut s.gn);
    test.hess_xx(x, nu, &mut s.hxx);
    test.hess_x_nu(x, nu, &mut s.hxn);
    test.hess_nu_nu(x, nu, &mut s.hnn);

    // ½ a^{ij} ∂²_{x_i x_j} F with a = σσᵀ.
    let mut x_second = 0.0;
    for k in 0..d {
        let col = &s.sigma[k * d..(k + 1) * d];
        linalg::mat_vec(&s.hxx, d, col, &mut s.tmp);
        x_second += 0.5 * dot(col, &s.tmp);
    }
    let x_first = dot(&s.drift, &s.gx);
    let mut nu_second = 0.0;
    let mut mixed = 0.0;
    if varying {
        for k in 0..d {
            let block = &s.sigma_jac[k * d * d..(k + 1) * d * d];
            linalg::mat_vec(block, d, nu, &mut s.snu);
            linalg::mat_vec(&s.hnn, d, &s.snu, &mut s.tmp);
            nu_second += 0.5 * dot(&s.snu, &s.tmp);
            linalg::mat_vec(&s.hxn, d, &s.snu, &mut s.tmp);
            mixed += dot(&s.sigma[k * d..(k + 1) * d], &s.tmp);
        }
    }
    linalg::mat_vec(&s.drift_jac, d, nu, &mut s.tmp);
    let nu_first = dot(&s.tmp, &s.gn);
    [x_second, x_first, nu_second, mixed, nu_first]
}

/// Buffers for [`generator_terms`].
pub struct GeneratorScratch {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    drift_jac: Vec<f64>,
    sigma_jac: Vec<f64>,
    gx: Vec<f64>,
    gn: Vec<f64>,
    hxx: Vec<f64>,
    hxn: Vec<f64>,
    hnn: Vec<f64>,
    snu: Vec<f64>,
    tmp: Vec<f64>,
}

impl GeneratorScratch {
    pub fn new(d: usize) -> Self {
        Self {
            drift: vec![0.0; d],
            sigma: vec![0.0; d * d],
            drift_jac: vec![0.0; d * d],
            sigma_jac: vec![0.0; d * d * d],
            gx: vec![0.0; d],
            gn: vec![0.0; d],
            hxx: vec![0.0; d * d],
            hxn: vec![0.0; d * d],
            hnn: vec![0.0; d * d],
            snu: vec![0.0; d],
            tmp: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `E F(X_t, J_t) − F(x,ν) − ∫₀ᵗ E LF ds`.
    pub residual: MeanSe,
    pub terminal: MeanSe,
    pub initial: f64,
    /// Path means of the time integrals of each generator term, ordered as
    /// [`GENERATOR_TERMS`].
    pub terms: [f64; 5],
    pub admissibility: Admissibility,
    pub dt: f64,
    pub paths: usize,
}

/// Sampled boundary points used to certify a test function.
pub const CERTIFY_SAMPLES: usize = 64;

/// Monte Carlo residual of the martingale problem for `(X, J^ν)`. The time
/// integral uses the trapezoid rule on the states recorded every
/// `record_every` steps (the terminal state is always recorded).
#[allow(clippy::too_many_arguments)]
pub fn martingale_residual<F, E>(
    test: &F,
    problem: &Problem<'_>,
    x: &[f64],
    nu: &[f64],
    t: f64,
    paths: usize,
    seed: u64,
    record_every: usize,
    executor: &E,
) -> Result<ResidualReport>
where
    F: TestFunction + ?Sized,
    E: PathExecutor + ?Sized,
{
    check_request(problem, x, t, paths)?;
    if nu.len() != x.len() {
        bail!(InvalidInput, "direction has the wrong dimension");
    }
    if record_every == 0 {
        bail!(InvalidInput, "recording interval must be at least one step");
    }
    let admissibility = certify(test, problem.domain, CERTIFY_SAMPLES)?;
    if !admissibility.pass() {
        bail!(
            Precondition,
            "test function violates the boundary conditions (normal derivative {:e}, invariance {:e})",
            admissibility.normal_derivative,
            admissibility.tangential_invariance
        );
    }
    let driver = Driver::new(problem)?;
    let d = x.len();
    let initial = test.value(x, nu);
    let rows = try_map_paths(executor, paths, |p| {
        let mut noise = NoiseStream::new(seed, p as u64);
        let mut scratch = GeneratorScratch::new(d);
        let mut integrals = [0.0f64; 5];
        let mut prev: Option<(f64, [f64; 5])> = None;
        let mut step = 0usize;
        let (pos, jac) = driver.run(x, nu.to_vec(), t, &mut noise, |v| {
            let due = step % record_every == 0;
            step += 1;
            if !due && v.time < t {
                return;
            }
            let terms = generator_terms(test, problem.field, v.position, v.jacobian, &mut scratch);
            if let Some((t0, l0)) = prev {
                let h = v.time - t0;
                for k in 0..5 {
                    integrals[k] += 0.5 * h * (l0[k] + terms[k]);
                }
            }
            prev = Some((v.time, terms));
        })?;
        let terminal = test.value(&pos, &jac);
        let mut row = Vec::with_capacity(7);
        row.push(terminal - initial - integrals.iter().sum::<f64>());
        row.push(terminal);
        row.extend_from_slice(&integrals);
        Ok(row)
    })?;
    let residual = MeanSe::from_samples(rows.iter().map(|r| r[0]));
    let terminal = MeanSe::from_samples(rows.iter().map(|r| r[1]));
    let mut terms = [0.0; 5];
    for (k, term) in terms.iter_mut().enumerate() {
        *term = MeanSe::from_samples(rows.iter().map(|r| r[2 + k])).mean;
    }
    Ok(ResidualReport {
        residual,
        terminal,
        initial,
        terms,
        admissibility,
        dt: problem.scheme.dt(),
        paths,
    })
}

/// Human-readable scheme label, with its parameters.
pub fn describe(scheme: &Scheme) -> String {
    match scheme {
        Scheme::Penalized { penalty, dt } => alloc::format!("penalized(n={penalty}, dt={dt})"),
        Scheme::Reflected {
            dt,
            mode: JumpMode::ProjectEveryContact,
        } => alloc::format!("reflected(dt={dt})"),
        Scheme::Reflected {
            dt,
            mode: JumpMode::EpsilonExcursion { epsilon },
        } => {
            alloc::format!("reflected-excursion(dt={dt}, epsilon={epsilon})")
        }
    }
}
