//! Reference solutions independent of the path schemes: closed forms,
//! Crank–Nicolson grid solvers, a finite-difference Monte Carlo gradient
//! and the free Jacobian of a linear drift.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, ensure_finite, Result};
use crate::estimator::Problem;
use crate::estimator::Scheme;
use crate::executor::{try_map_paths, PathExecutor};
use crate::linalg;
use crate::math;
use crate::model::{CoefficientField, InitialCondition};
use crate::noise::NoiseStream;
use crate::penalized::PenalizedScheme;
use crate::reflected::ReflectedScheme;
use crate::stats::MeanSe;

/// `(u, ∂u)` for `f = cos(kπ(x−lo)/(hi−lo))`, `b = 0` and constant `σ`:
/// `u = exp(−σ²λt/2) cos(kπ(x−lo)/(hi−lo))` with `λ = (kπ/(hi−lo))²`.
pub fn series_gradient_1d(k: u32, sigma: f64, t: f64, x: f64, lo: f64, hi: f64) -> (f64, f64) {
    let len = hi - lo;
    let rate = k as f64 * core::f64::consts::PI / len;
    let decay = math::exp(-0.5 * sigma * sigma * rate * rate * t);
    let phase = k as f64 * (x - lo) / len;
    (
        decay * math::cos_pi(phase),
        -decay * rate * math::sin_pi(phase),
    )
}

/// Node values on a uniform grid of `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
    pub time: f64,
}

impl Grid1D {
    pub fn points(&self) -> usize {
        self.values.len()
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.values.len() - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }

    /// Piecewise-linear interpolation, clamped to the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let h = self.spacing();
        let s = ((x - self.lo) / h).clamp(0.0, (self.points() - 1) as f64);
        let i = (math::floor(s) as usize).min(self.points() - 2);
        let w = s - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    /// Centered differences inside, second-order one-sided at the ends.
    pub fn derivative(&self) -> Grid1D {
        let n = self.points();
        let h = self.spacing();
        let u = &self.values;
        let mut du = vec![0.0; n];
        for i in 1..n - 1 {
            du[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
        }
        du[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
        du[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h);
        Grid1D {
            lo: self.lo,
            hi: self.hi,
            values: du,
            time: self.time,
        }
    }
}

/// Uniform grid specification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    fn check(&self) -> Result<()> {
        if self.points < 3 {
            bail!(
                InvalidInput,
                "grid needs at least 3 points, got {}",
                self.points
            );
        }
        if !(self.hi > self.lo) {
            bail!(
                InvalidInput,
                "grid interval [{}, {}] is empty",
                self.lo,
                self.hi
            );
        }
        Ok(())
    }

    fn nodes(&self) -> Vec<f64> {
        let h = (self.hi - self.lo) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.lo + i as f64 * h).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Closure {
    /// Zero derivative through a mirrored ghost node.
    Neumann,
    /// Zero value.
    Dirichlet,
}

/// `∂_t u = p(x) u'' + q(x) u' + c(x) u` on a uniform grid.
struct Operator {
    p: Vec<f64>,
    q: Vec<f64>,
    c: Vec<f64>,
    left: Closure,
    right: Closure,
    /// Left end is the center of a ball of this dimension: `q = p(d−1)/r`
    /// there is replaced by its limit.
    radial_center: Option<usize>,
}

impl Operator {
    /// Tridiagonal rows `(lower, diag, upper)` of the spatial operator.
    fn rows(&self, h: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.p.len();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            let p = self.p[i] / (h * h);
            let q = self.q[i] / (2.0 * h);
            lower[i] = p - q;
            diag[i] = -2.0 * p + self.c[i];
            upper[i] = p + q;
        }
        // Mirrored ghost node: u_{-1} = u_1, u_{n} = u_{n-2}.
        if self.left == Closure::Neumann {
            if let Some(dim) = self.radial_center {
                // (d−1)u'/r → (d−1)u'' at the center.
                let p = self.p[0] * dim as f64 / (h * h);
                diag[0] = -2.0 * p + self.c[0];
                upper[0] = 2.0 * p;
            } else {
                upper[0] += lower[0];
            }
            lower[0] = 0.0;
        }
        if self.right == Closure::Neumann {
            lower[n - 1] += upper[n - 1];
            upper[n - 1] = 0.0;
        }
        (lower, diag, upper)
    }

    fn solve(&self, grid: GridSpec, mut u: Vec<f64>, t: f64, steps: usize) -> Result<Grid1D> {
        let n = grid.points;
        let h = (grid.hi - grid.lo) / (n - 1) as f64;
        let dt = t / steps as f64;
        let (lo_a, di_a, up_a) = self.rows(h);
        // (I − ½Δt A) u' = (I + ½Δt A) u
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            lower[i] = -0.5 * dt * lo_a[i];
            diag[i] = 1.0 - 0.5 * dt * di_a[i];
            upper[i] = -0.5 * dt * up_a[i];
        }
        let pinned = |i: usize| {
            (i == 0 && self.left == Closure::Dirichlet)
                || (i == n - 1 && self.right == Closure::Dirichlet)
        };
        for i in 0..n {
            if pinned(i) {
                lower[i] = 0.0;
                diag[i] = 1.0;
                upper[i] = 0.0;
            }
        }
        if self.left == Closure::Dirichlet {
            u[0] = 0.0;
        }
        if self.right == Closure::Dirichlet {
            u[n - 1] = 0.0;
        }
        let mut rhs = vec![0.0; n];
        for _ in 0..steps {
            for i in 0..n {
                if pinned(i) {
                    rhs[i] = 0.0;
                    continue;
                }
                let mut v = u[i] + 0.5 * dt * di_a[i] * u[i];
                if i > 0 {
                    v += 0.5 * dt * lo_a[i] * u[i - 1];
                }
                if i + 1 < n {
                    v += 0.5 * dt * up_a[i] * u[i + 1];
                }
                rhs[i] = v;
            }
            linalg::solve_tridiagonal(&lower, &diag, &upper, &mut rhs)?;
            u.copy_from_slice(&rhs);
        }
        ensure_finite("grid solution", &u)?;
        Ok(Grid1D {
            lo: grid.lo,
            hi: grid.hi,
            values: u,
            time: t,
        })
    }
}

/// Grid solution and its grid derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct NeumannSolution {
    pub u: Grid1D,
    pub du: Grid1D,
}

struct Coefficients1D {
    a: f64,
    da: f64,
    b: f64,
    db: f64,
}

fn coefficients_1d(field: &dyn CoefficientField, x: f64) -> Coefficients1D {
    let (mut s, mut ds, mut b, mut db) = ([0.0], [0.0], [0.0], [0.0]);
    field.diffusion(&[x], &mut s);
    field.diffusion_jacobian(&[x], &mut ds);
    field.drift(&[x], &mut b);
    field.drift_jacobian(&[x], &mut db);
    Coefficients1D {
        a: s[0] * s[0],
        da: 2.0 * s[0] * ds[0],
        b: b[0],
        db: db[0],
    }
}

fn check_1d(
    field: &dyn CoefficientField,
    f: &dyn InitialCondition,
    grid: GridSpec,
    t: f64,
    steps: usize,
) -> Result<()> {
    if field.dim() != 1 || f.dim() != 1 {
        bail!(
            InvalidInput,
            "grid solvers need one-dimensional coefficients"
        );
    }
    grid.check()?;
    if steps == 0 {
        bail!(InvalidInput, "need at least one time step");
    }
    if !(t >= 0.0) || !t.is_finite() {
        bail!(InvalidInput, "horizon must be nonnegative, got {t}");
    }
    Ok(())
}

/// Crank–Nicolson for `∂_t u = ½a u″ + b u′`, `u′ = 0` at both ends.
pub fn crank_nicolson_neumann_1d(
    field: &dyn CoefficientField,
    f: &dyn InitialCondition,
    t: f64,
    grid: GridSpec,
    steps: usize,
) -> Result<NeumannSolution> {
    check_1d(field, f, grid, t, steps)?;
    let nodes = grid.nodes();
    let coef: Vec<Coefficients1D> = nodes.iter().map(|x| coefficients_1d(field, *x)).collect();
    let op = Operator {
        p: coef.iter().map(|c| 0.5 * c.a).collect(),
        q: coef.iter().map(|c| c.b).collect(),
        c: vec![0.0; nodes.len()],
        left: Closure::Neumann,
        right: Closure::Neumann,
        radial_center: None,
    };
    let u0 = nodes.iter().map(|x| f.value(&[*x])).collect();
    let u = op.solve(grid, u0, t, steps)?;
    let du = u.derivative();
    Ok(NeumannSolution { u, du })
}

/// Crank–Nicolson for the derivative `w = u′`:
/// `∂_t w = ½a w″ + (b + ½a′) w′ + b′ w`, `w = 0` at both ends, `w(0) = f′`.
pub fn gradient_system_1d(
    field: &dyn CoefficientField,
    f: &dyn InitialCondition,
    t: f64,
    grid: GridSpec,
    steps: usize,
) -> Result<Grid1D> {
    check_1d(field, f, grid, t, steps)?;
    let nodes = grid.nodes();
    let coef: Vec<Coefficients1D> = nodes.iter().map(|x| coefficients_1d(field, *x)).collect();
    let op = Operator {
        p: coef.iter().map(|c| 0.5 * c.a).collect(),
        q: coef.iter().map(|c| c.b + 0.5 * c.da).collect(),
        c: coef.iter().map(|c| c.db).collect(),
        left: Closure::Dirichlet,
        right: Closure::Dirichlet,
        radial_center: None,
    };
    let mut g = [0.0];
    let w0 = nodes
        .iter()
        .map(|x| {
            f.gradient(&[*x], &mut g);
            g[0]
        })
        .collect();
    op.solve(grid, w0, t, steps)
}

/// Radial reduction on a ball of dimension `dim` and radius `R`, for
/// `b = 0`, `σ = s·Id`: `∂_t u = ½s²(u″ + (d−1)u′/r)` on `r ∈ [0, R]` with
/// `u′(0) = 0` and `u′(R) = 0`. `profile` gives the initial datum as a
/// function of `r`.
pub fn radial_ball<P: Fn(f64) -> f64>(
    dim: usize,
    sigma: f64,
    radius: f64,
    profile: P,
    t: f64,
    points: usize,
    steps: usize,
) -> Result<NeumannSolution> {
    if dim < 2 {
        bail!(InvalidInput, "radial reduction needs dimension at least 2");
    }
    let grid = GridSpec {
        lo: 0.0,
        hi: radius,
        points,
    };
    grid.check()?;
    if steps == 0 {
        bail!(InvalidInput, "need at least one time step");
    }
    let nodes = grid.nodes();
    let p = 0.5 * sigma * sigma;
    let op = Operator {
        p: vec![p; points],
        q: nodes
            .iter()
            .map(|r| {
                if *r > 0.0 {
                    p * (dim - 1) as f64 / r
                } else {
                    0.0
                }
            })
            .collect(),
        c: vec![0.0; points],
        left: Closure::Neumann,
        right: Closure::Neumann,
        radial_center: Some(dim),
    };
    let u0 = nodes.iter().map(|r| profile(*r)).collect();
    let u = op.solve(grid, u0, t, steps)?;
    let du = u.derivative();
    Ok(NeumannSolution { u, du })
}

/// Noise coupling between the two displaced runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// Same stream for both points.
    Common,
    /// Independent streams.
    Independent,
}

const INDEPENDENT_SEED_SHIFT: u64 = 0x9E37_79B9_7F4A_7C15;

/// `(û(x+εν) − û(x−εν)) / 2ε` from per-path differences.
#[allow(clippy::too_many_arguments)]
pub fn mc_finite_difference_gradient<E: PathExecutor + ?Sized>(
    problem: &Problem<'_>,
    x: &[f64],
    direction: &[f64],
    epsilon: f64,
    t: f64,
    paths: usize,
    seed: u64,
    coupling: Coupling,
    executor: &E,
) -> Result<MeanSe> {
    let d = problem.domain.dim();
    if x.len() != d || direction.len() != d {
        bail!(InvalidInput, "point and direction must have dimension {d}");
    }
    if !(epsilon > 0.0) {
        bail!(InvalidInput, "epsilon must be positive, got {epsilon}");
    }
    if paths == 0 {
        bail!(InvalidInput, "need at least one path");
    }
    let plus: Vec<f64> = x
        .iter()
        .zip(direction)
        .map(|(a, v)| a + epsilon * v)
        .collect();
    let minus: Vec<f64> = x
        .iter()
        .zip(direction)
        .map(|(a, v)| a - epsilon * v)
        .collect();
    for p in [&plus, &minus] {
        if !problem.domain.contains(p) {
            bail!(Precondition, "displaced point {p:?} is outside the domain");
        }
    }
    let terminal = |start: &[f64], noise: &mut NoiseStream| -> Result<f64> {
        let end = match problem.scheme {
            Scheme::Penalized { penalty, dt } => {
                let s = PenalizedScheme::new(problem.domain, problem.field, penalty, dt)?;
                let mut st = s.start_with_jacobian(start, vec![0.0; d])?;
                s.advance_to(&mut st, t, noise, |_| {})?;
                st.position
            }
            Scheme::Reflected { dt, mode } => {
                let s = ReflectedScheme::new(problem.domain, problem.field, dt, mode)?;
                let mut st = s.start_with_jacobian(start, vec![0.0; d])?;
                s.simulate_from(&mut st, t, noise, |_, _| {})?;
                st.position
            }
        };
        Ok(problem.initial.value(&end))
    };
    let other_seed = match coupling {
        Coupling::Common => seed,
        Coupling::Independent => seed ^ INDEPENDENT_SEED_SHIFT,
    };
    let samples = try_map_paths(executor, paths, |p| {
        let up = terminal(&plus, &mut NoiseStream::new(seed, p as u64))?;
        let down = terminal(&minus, &mut NoiseStream::new(other_seed, p as u64))?;
        Ok((up - down) / (2.0 * epsilon))
    })?;
    Ok(MeanSe::from_samples(samples.iter().copied()))
}

/// `exp(Bt)`, the Jacobian of the flow of `ẋ = Bx`.
pub fn free_jacobian_closed_form(b: &[f64], d: usize, t: f64) -> Result<Vec<f64>> {
    if b.len() != d * d {
        bail!(InvalidInput, "expected a {d}×{d} matrix");
    }
    ensure_finite("drift matrix", b)?;
    let scaled: Vec<f64> = b.iter().map(|v| v * t).collect();
    Ok(linalg::expm(&scaled, d))
}
