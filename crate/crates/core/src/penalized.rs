//! Penalized approximation of the reflecting diffusion.
//!
//! The reflection is replaced by the restoring drift `-n β₀(X)`, with
//! `β₀(x) = x − π(x)` outside the domain, and the Jacobian is the pathwise
//! derivative of that equation:
//!
//! ```text
//! X' = X + b(X)Δt + σ(X)ΔB − n β₀(X) Δt
//! J' = J + ∂b(X) J Δt + Σ_j ∂σ_j(X) J ΔB^j − n 1{X ∉ D} N(π(X)) J Δt
//! 𝒯' = 𝒯 + 1{X ∉ D} Δt
//! ```
//!
//! `N(π(X))` is the projection on the inward normal at the projection of
//! the exterior point. The explicit penalty is stable only for `nΔt ≤ 1`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, ensure_finite, Error, Result};
use crate::executor::{try_map_paths, PathExecutor};
use crate::geometry::Domain;
use crate::kernel::{step_plan, FreeStep};
use crate::linalg::{self, dot};
use crate::math;
use crate::model::CoefficientField;
use crate::noise::NoiseStream;
use crate::stats::{weighted_line_fit, MeanSe};

/// Default `nΔt` used when a step size is derived from the penalty.
pub const DEFAULT_PENALTY_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedPathState {
    pub time: f64,
    pub position: Vec<f64>,
    /// `d × m` column-major; column `k` is `J^{ν_k}` (`ν_k = e_k` by default).
    pub jacobian: Vec<f64>,
    /// Time spent outside the domain.
    pub occupation: f64,
    pub penalty: f64,
    pub steps: u64,
}

impl PenalizedPathState {
    pub fn dim(&self) -> usize {
        self.position.len()
    }

    pub fn columns(&self) -> usize {
        self.jacobian.len() / self.position.len()
    }

    pub fn column(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.jacobian[k * d..(k + 1) * d]
    }
}

/// Penalized Euler scheme with penalty `n` and nominal step `dt`.
pub struct PenalizedScheme<'a> {
    domain: &'a Domain,
    field: &'a dyn CoefficientField,
    penalty: f64,
    dt: f64,
}

/// Scratch owned by one path.
pub struct PenalizedWorkspace {
    free: FreeStep,
    next: Vec<f64>,
    beta: Vec<f64>,
    normal: Vec<f64>,
    foot: Vec<f64>,
    along: Vec<f64>,
}

impl PenalizedWorkspace {
    pub fn new(dim: usize, columns: usize) -> Self {
        Self {
            free: FreeStep::new(dim),
            next: vec![0.0; dim],
            beta: vec![0.0; dim],
            normal: vec![0.0; dim],
            foot: vec![0.0; dim],
            along: vec![0.0; columns],
        }
    }
}

impl<'a> PenalizedScheme<'a> {
    pub fn new(
        domain: &'a Domain,
        field: &'a dyn CoefficientField,
        penalty: f64,
        dt: f64,
    ) -> Result<Self> {
        if field.dim() != domain.dim() {
            bail!(
                InvalidInput,
                "field dimension {} differs from domain dimension {}",
                field.dim(),
                domain.dim()
            );
        }
        if !(penalty > 0.0) || !penalty.is_finite() {
            bail!(InvalidInput, "penalty must be positive, got {penalty}");
        }
        if !(dt > 0.0) || !dt.is_finite() {
            bail!(InvalidInput, "time step must be positive, got {dt}");
        }
        if dt * penalty > 1.0 {
            return Err(Error::Stability {
                product: dt * penalty,
            });
        }
        Ok(Self {
            domain,
            field,
            penalty,
            dt,
        })
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn domain(&self) -> &Domain {
        self.domain
    }

    pub fn field(&self) -> &dyn CoefficientField {
        self.field
    }

    /// State at `x` with `J = Id`.
    pub fn start(&self, x: &[f64]) -> Result<PenalizedPathState> {
        self.start_with_jacobian(x, linalg::identity(self.domain.dim()))
    }

    /// State at `x` with the given `d × m` initial Jacobian columns.
    pub fn start_with_jacobian(&self, x: &[f64], jacobian: Vec<f64>) -> Result<PenalizedPathState> {
        let d = self.domain.dim();
        if x.len() != d || jacobian.is_empty() || jacobian.len() % d != 0 {
            bail!(InvalidInput, "start point or Jacobian has the wrong shape");
        }
        ensure_finite("start point", x)?;
        if !self.domain.contains(x) && self.domain.distance(x)? > self.domain.boundary_tolerance() {
            bail!(Precondition, "start point {x:?} is outside the domain");
        }
        Ok(PenalizedPathState {
            time: 0.0,
            position: x.to_vec(),
            jacobian,
            occupation: 0.0,
            penalty: self.penalty,
            steps: 0,
        })
    }

    pub fn workspace(&self, state: &PenalizedPathState) -> PenalizedWorkspace {
        PenalizedWorkspace::new(self.domain.dim(), state.columns())
    }

    /// One Euler step of size `dt` driven by the Brownian increment `dw`.
    pub fn step(
        &self,
        state: &mut PenalizedPathState,
        dt: f64,
        dw: &[f64],
        ws: &mut PenalizedWorkspace,
    ) -> Result<()> {
        if !(dt > 0.0) {
            bail!(InvalidInput, "time step must be positive, got {dt}");
        }
        if dt * self.penalty > 1.0 {
            return Err(Error::Stability {
                product: dt * self.penalty,
            });
        }
        let d = self.domain.dim();
        ws.free.evaluate(self.field, &state.position);
        let exterior = self.domain.beta0_into(&state.position, &mut ws.beta) > 0.0;
        ws.free
            .advance_position(&state.position, dt, dw, &mut ws.next);
        if exterior {
            for i in 0..d {
                ws.next[i] -= self.penalty * ws.beta[i] * dt;
            }
            // Normal at π(X) = X − β₀(X).
            for i in 0..d {
                ws.foot[i] = state.position[i] - ws.beta[i];
            }
            self.domain.normal_into(&ws.foot, &mut ws.normal);
            for (k, col) in state.jacobian.chunks_exact(d).enumerate() {
                ws.along[k] = dot(col, &ws.normal);
            }
        }
        ws.free.advance_jacobian(&mut state.jacobian, dt, dw);
        if exterior {
            for (k, col) in state.jacobian.chunks_exact_mut(d).enumerate() {
                let scale = self.penalty * dt * ws.along[k];
                for i in 0..d {
                    col[i] -= scale * ws.normal[i];
                }
            }
            state.occupation += dt;
        }
        state.position.copy_from_slice(&ws.next);
        state.time += dt;
        state.steps += 1;
        Ok(())
    }

    /// Runs from `state` to `horizon` (absolute time), with a final partial
    /// step so the horizon is hit exactly. `observer` sees the initial state
    /// and the state after every step.
    pub fn advance_to<O>(
        &self,
        state: &mut PenalizedPathState,
        horizon: f64,
        noise: &mut NoiseStream,
        mut observer: O,
    ) -> Result<()>
    where
        O: FnMut(&PenalizedPathState),
    {
        let remaining = horizon - state.time;
        if !(remaining > 0.0) {
            bail!(
                InvalidInput,
                "horizon {horizon} is not after the current time {}",
                state.time
            );
        }
        let mut ws = self.workspace(state);
        let mut dw = vec![0.0; state.dim()];
        let (full, last) = step_plan(remaining, self.dt);
        let t0 = state.time;
        observer(state);
        for k in 0..full {
            noise.brownian_increments(self.dt, &mut dw);
            self.step(state, self.dt, &dw, &mut ws)?;
            state.time = if k + 1 == full && last == 0.0 {
                horizon
            } else {
                t0 + (k + 1) as f64 * self.dt
            };
            observer(state);
        }
        if last > 0.0 {
            noise.brownian_increments(last, &mut dw);
            self.step(state, last, &dw, &mut ws)?;
        }
        state.time = horizon;
        if last > 0.0 {
            observer(state);
        }
        Ok(())
    }

    /// Terminal state of the path started at `x` with `J = Id`.
    pub fn simulate(
        &self,
        x: &[f64],
        horizon: f64,
        noise: &mut NoiseStream,
    ) -> Result<PenalizedPathState> {
        let mut state = self.start(x)?;
        self.advance_to(&mut state, horizon, noise, |_| {})?;
        Ok(state)
    }

    /// Terminal state together with every intermediate state.
    pub fn record(
        &self,
        x: &[f64],
        horizon: f64,
        noise: &mut NoiseStream,
    ) -> Result<(PenalizedPathState, Vec<PenalizedPathState>)> {
        let mut state = self.start(x)?;
        let mut path = Vec::new();
        self.advance_to(&mut state, horizon, noise, |s| path.push(s.clone()))?;
        Ok((state, path))
    }

    /// `(X_n^{x+εν}(t) − X_n^x(t)) / ε` on common noise.
    pub fn flow_ratio(
        &self,
        x: &[f64],
        direction: &[f64],
        epsilon: f64,
        horizon: f64,
        noise: &NoiseStream,
    ) -> Result<Vec<f64>> {
        if !(epsilon > 0.0) {
            bail!(InvalidInput, "epsilon must be positive, got {epsilon}");
        }
        if direction.len() != x.len() {
            bail!(InvalidInput, "direction has the wrong dimension");
        }
        let shifted: Vec<f64> = x
            .iter()
            .zip(direction)
            .map(|(a, v)| a + epsilon * v)
            .collect();
        if !self.domain.contains(x) || !self.domain.contains(&shifted) {
            bail!(
                Precondition,
                "both {x:?} and the displaced point {shifted:?} must lie in the domain"
            );
        }
        let base = self.simulate(x, horizon, &mut noise.clone())?;
        let moved = self.simulate(&shifted, horizon, &mut noise.clone())?;
        Ok(moved
            .position
            .iter()
            .zip(&base.position)
            .map(|(a, b)| (a - b) / epsilon)
            .collect())
    }
}

/// One row of the occupation-moment table.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub penalty: f64,
    pub dt: f64,
    /// Monte Carlo estimate of `E(𝒯ⁿ(t))⁴` with its standard error.
    pub fourth_moment: MeanSe,
    /// Monte Carlo estimate of `E 𝒯ⁿ(t)`.
    pub mean_occupation: MeanSe,
}

/// Fitted scaling of `E(𝒯ⁿ)⁴` against `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStudy {
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    pub rows: Vec<MomentRow>,
}

/// Setup shared by the penalty sweeps.
#[derive(Clone, Copy)]
pub struct PenaltySweep<'a> {
    pub domain: &'a Domain,
    pub field: &'a dyn CoefficientField,
    pub start: &'a [f64],
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    /// `Δt = penalty_step / n`; must not exceed 0.1.
    pub penalty_step: f64,
}

/// Estimates `E(𝒯ⁿ(t))⁴` for each penalty and fits the slope of
/// `log E(𝒯ⁿ)⁴` against `log n` by weighted least squares (weights from the
/// delta-method errors of the logarithms).
pub fn occupation_moment_study<E: PathExecutor + ?Sized>(
    sweep: &PenaltySweep<'_>,
    penalties: &[f64],
    executor: &E,
) -> Result<MomentStudy> {
    if penalties.len() < 3 {
        bail!(
            Precondition,
            "need at least three penalties, got {}",
            penalties.len()
        );
    }
    let lo = penalties.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = penalties.iter().cloned().fold(0.0, f64::max);
    if !(hi / lo >= 100.0 * (1.0 - 1e-12)) {
        bail!(
            Precondition,
            "penalties must span at least two decades, got [{lo}, {hi}]"
        );
    }
    if !(sweep.penalty_step > 0.0 && sweep.penalty_step <= 0.1) {
        bail!(
            Precondition,
            "step rule must keep dt·n ≤ 0.1, got {}",
            sweep.penalty_step
        );
    }
    if sweep.paths < 2 {
        bail!(Precondition, "need at least two paths per penalty");
    }
    let mut rows = Vec::with_capacity(penalties.len());
    for &n in penalties {
        let dt = sweep.penalty_step / n;
        let scheme = PenalizedScheme::new(sweep.domain, sweep.field, n, dt)?;
        let occupations = try_map_paths(executor, sweep.paths, |p| {
            let mut noise = NoiseStream::new(sweep.seed, p as u64);
            Ok(scheme
                .simulate(sweep.start, sweep.horizon, &mut noise)?
                .occupation)
        })?;
        rows.push(MomentRow {
            penalty: n,
            dt,
            fourth_moment: MeanSe::from_samples(occupations.iter().map(|t| math::powi(*t, 4))),
            mean_occupation: MeanSe::from_samples(occupations.iter().copied()),
        });
    }
    if let Some(row) = rows.iter().find(|r| !(r.fourth_moment.mean > 0.0)) {
        bail!(
            DegenerateData,
            "no path left the domain at n = {}; use a smaller penalty or start nearer the boundary",
            row.penalty
        );
    }
    let xs: Vec<f64> = rows.iter().map(|r| math::ln(r.penalty)).collect();
    let ys: Vec<f64> = rows
        .iter()
        .map(|r| math::ln(r.fourth_moment.mean))
        .collect();
    let sig: Vec<f64> = rows
        .iter()
        .map(|r| r.fourth_moment.se / r.fourth_moment.mean)
        .collect();
    let fit = weighted_line_fit(&xs, &ys, &sig)?;
    Ok(MomentStudy {
        slope: fit.slope,
        slope_se: fit.slope_se,
        intercept: fit.intercept,
        rows,
    })
}

/// Monte Carlo estimate of `E sup_{s≤t} |J_n(s)|⁴` (Frobenius norm) for one
/// penalty.
pub fn jacobian_sup_moment<E: PathExecutor + ?Sized>(
    sweep: &PenaltySweep<'_>,
    penalty: f64,
    executor: &E,
) -> Result<MeanSe> {
    let dt = sweep.penalty_step / penalty;
    let scheme = PenalizedScheme::new(sweep.domain, sweep.field, penalty, dt)?;
    let sups = try_map_paths(executor, sweep.paths, |p| {
        let mut noise = NoiseStream::new(sweep.seed, p as u64);
        let mut state = scheme.start(sweep.start)?;
        let mut sup: f64 = 0.0;
        scheme.advance_to(&mut state, sweep.horizon, &mut noise, |s| {
            sup = sup.max(dot(&s.jacobian, &s.jacobian));
        })?;
        Ok(sup * sup)
    })?;
    Ok(MeanSe::from_samples(sups.iter().copied()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::Sequential;
    use crate::model::LinearDriftField;

    fn interval() -> Domain {
        Domain::interval(0.0, 1.0).unwrap()
    }

    #[test]
    fn quiescent_interior_step() {
        let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let f = LinearDriftField::brownian(2, 1.0).unwrap();
        let s = PenalizedScheme::new(&d, &f, 10.0, 0.01).unwrap();
        let mut st = s.start(&[0.2, 0.3]).unwrap();
        let before = st.clone();
        let mut ws = s.workspace(&st);
        s.step(&mut st, 0.01, &[0.0, 0.0], &mut ws).unwrap();
        assert_eq!(st.position, before.position);
        assert_eq!(st.jacobian, before.jacobian);
        assert_eq!(st.occupation, 0.0);
    }

    #[test]
    fn exterior_step_hand_evaluation() {
        let d = interval();
        let f = LinearDriftField::brownian(1, 0.0).unwrap();
        let s = PenalizedScheme::new(&d, &f, 10.0, 0.01).unwrap();
        let mut st = PenalizedPathState {
            time: 0.0,
            position: vec![1.2],
            jacobian: vec![2.0],
            occupation: 0.5,
            penalty: 10.0,
            steps: 0,
        };
        let mut ws = s.workspace(&st);
        s.step(&mut st, 0.01, &[0.0], &mut ws).unwrap();
        assert!((st.position[0] - 1.18).abs() < 1e-15);
        assert!((st.jacobian[0] - 2.0 * 0.9).abs() < 1e-15);
        assert!((st.occupation - 0.51).abs() < 1e-15);
    }

    #[test]
    fn linear_drift_interior_jacobian() {
        let d = Domain::ball(vec![0.0, 0.0], 10.0).unwrap();
        let f = LinearDriftField::linear(vec![-1.0, 0.0, 0.0, -1.0]).unwrap();
        let s = PenalizedScheme::new(&d, &f, 5.0, 0.01).unwrap();
        let mut st = s.start(&[0.1, 0.0]).unwrap();
        let mut ws = s.workspace(&st);
        s.step(&mut st, 0.01, &[0.3, -0.2], &mut ws).unwrap();
        assert_eq!(st.jacobian, vec![0.99, 0.0, 0.0, 0.99]);
    }

    #[test]
    fn stability_guard() {
        let d = interval();
        let f = LinearDriftField::brownian(1, 1.0).unwrap();
        assert!(matches!(
            PenalizedScheme::new(&d, &f, 100.0, 0.011),
            Err(Error::Stability { .. })
        ));
        let s = PenalizedScheme::new(&d, &f, 100.0, 0.01).unwrap();
        let mut st = s.start(&[0.5]).unwrap();
        let mut ws = s.workspace(&st);
        assert!(matches!(
            s.step(&mut st, 0.02, &[0.0], &mut ws),
            Err(Error::Stability { .. })
        ));
    }

    #[test]
    fn frozen_path_and_exact_horizon() {
        let d = interval();
        let f = LinearDriftField::brownian(1, 0.0).unwrap();
        let s = PenalizedScheme::new(&d, &f, 10.0, 0.03).unwrap();
        let (end, path) = s.record(&[0.4], 1.0, &mut NoiseStream::new(1, 0)).unwrap();
        assert_eq!(end.position, vec![0.4]);
        assert_eq!(end.jacobian, vec![1.0]);
        assert_eq!(end.occupation, 0.0);
        assert_eq!(end.time, 1.0);
        // 33 full steps plus a partial one, plus the initial state.
        assert_eq!(path.len(), 35);
        assert_eq!(end.steps, 34);
    }

    #[test]
    fn start_outside_rejected() {
        let d = interval();
        let f = LinearDriftField::brownian(1, 1.0).unwrap();
        let s = PenalizedScheme::new(&d, &f, 10.0, 0.01).unwrap();
        assert!(matches!(s.start(&[1.5]), Err(Error::Precondition(_))));
    }

    #[test]
    fn flow_ratio_identity_flow() {
        let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let f = LinearDriftField::brownian(2, 0.0).unwrap();
        let s = PenalizedScheme::new(&d, &f, 10.0, 0.01).unwrap();
        let nu = [0.6, 0.8];
        for eps in [1e-2, 1e-4] {
            let r = s
                .flow_ratio(&[0.1, 0.1], &nu, eps, 0.5, &NoiseStream::new(3, 0))
                .unwrap();
            assert!((r[0] - 0.6).abs() < 1e-9 && (r[1] - 0.8).abs() < 1e-9);
        }
        assert!(matches!(
            s.flow_ratio(&[0.99, 0.0], &[1.0, 0.0], 0.1, 0.5, &NoiseStream::new(3, 0)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn moment_study_degenerate_without_noise() {
        let d = interval();
        let f = LinearDriftField::brownian(1, 0.0).unwrap();
        let sweep = PenaltySweep {
            domain: &d,
            field: &f,
            start: &[0.5],
            horizon: 0.1,
            paths: 4,
            seed: 0,
            penalty_step: 0.1,
        };
        let err = occupation_moment_study(&sweep, &[1.0, 10.0, 100.0], &Sequential).unwrap_err();
        assert!(matches!(err, Error::DegenerateData(_)));
        let err = occupation_moment_study(&sweep, &[1.0, 10.0, 50.0], &Sequential).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
