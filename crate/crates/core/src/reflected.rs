//! Projection scheme for the reflecting diffusion and its jump Jacobian.
//!
//! A step moves to the Euler point `Y = X + bΔt + σΔB` and the Jacobian to
//! its free update `H`. When `Y` leaves the domain the state is projected,
//! `X' = π(Y)`, the local time grows by `d(Y, D)`, and the Jacobian loses
//! its normal component according to the [`JumpMode`].
//!
//! Columns of `J` are the directional derivatives `J^{e_k}`. A jump acts
//! column-wise as `J ← (I − γγᵀ) J`, and flows compose as
//! `J_{r,t} = J_{s,t} J_{r,s}` (see [`compose_jacobians`]).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, ensure_finite, Error, Result};
use crate::geometry::{remove_normal_component, Domain};
use crate::kernel::{step_plan, FreeStep};
use crate::linalg::{self, dot};
use crate::model::CoefficientField;
use crate::noise::NoiseStream;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum JumpMode {
    /// Tangential projection at every projected step.
    #[default]
    ProjectEveryContact,
    /// Contacts separated by interior stretches of length at most `epsilon`
    /// form one cluster; a single projection is applied at the last contact
    /// of each cluster, once the cluster is known to be complete.
    EpsilonExcursion { epsilon: f64 },
}


/// Jump owed to the last contact of an open cluster.
///
/// With `P` the free flow since that contact and `γ` the normal there, the
/// deferred jump turns the current Jacobian `J = P J_c` into
/// `P (I − γγᵀ) J_c = (I − w rᵀ) J`, where `w = Pγ` and `rᵀ = γᵀP⁻¹`. The
/// correction does not depend on `J`, which keeps the multiplicative
/// structure when the Jacobian is restarted while a jump is pending.
/// Relative slack, in steps, of the cluster-length comparison.
const CLUSTER_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PendingJump {
    pub contact_time: f64,
    pub w: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedState {
    pub time: f64,
    pub position: Vec<f64>,
    /// `d × m` column-major.
    pub jacobian: Vec<f64>,
    pub local_time: f64,
    pub steps: u64,
    pub contacts: u64,
    pub jumps: u64,
    pub pending: Option<PendingJump>,
}

impl ReflectedState {
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

/// What happened during the last step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepEvent {
    /// The Euler point left the domain and was projected.
    pub contact: bool,
    /// Local time increment `d(Y, D)`.
    pub local_time: f64,
    /// A tangential projection was applied to the Jacobian in this step.
    pub jumped: bool,
}

/// Full path. Index 0 is the initial state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReflectedPathRecord {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub jacobians: Vec<Vec<f64>>,
    pub local_time: Vec<f64>,
    pub contacts: Vec<bool>,
    pub jumps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionRecord {
    pub start_index: usize,
    pub end_index: usize,
    pub duration: f64,
    pub start_point: Vec<f64>,
    pub end_point: Vec<f64>,
}

pub struct ReflectedScheme<'a> {
    domain: &'a Domain,
    field: &'a dyn CoefficientField,
    dt: f64,
    mode: JumpMode,
}

/// Scratch owned by one path.
pub struct ReflectedWorkspace {
    free: FreeStep,
    next: Vec<f64>,
    normal: Vec<f64>,
    step_t: Vec<f64>,
    dw: Vec<f64>,
}

impl ReflectedWorkspace {
    pub fn new(dim: usize) -> Self {
        Self {
            free: FreeStep::new(dim),
            next: vec![0.0; dim],
            normal: vec![0.0; dim],
            step_t: vec![0.0; dim * dim],
            dw: vec![0.0; dim],
        }
    }
}

impl<'a> ReflectedScheme<'a> {
    pub fn new(
        domain: &'a Domain,
        field: &'a dyn CoefficientField,
        dt: f64,
        mode: JumpMode,
    ) -> Result<Self> {
        if field.dim() != domain.dim() {
            bail!(
                InvalidInput,
                "field dimension {} differs from domain dimension {}",
                field.dim(),
                domain.dim()
            );
        }
        if !(dt > 0.0) || !dt.is_finite() {
            bail!(InvalidInput, "time step must be positive, got {dt}");
        }
        if let JumpMode::EpsilonExcursion { epsilon } = mode {
            if !(epsilon >= 0.0) || !epsilon.is_finite() {
                bail!(
                    InvalidInput,
                    "excursion threshold must be nonnegative, got {epsilon}"
                );
            }
        }
        Ok(Self {
            domain,
            field,
            dt,
            mode,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mode(&self) -> JumpMode {
        self.mode
    }

    pub fn domain(&self) -> &Domain {
        self.domain
    }

    pub fn field(&self) -> &dyn CoefficientField {
        self.field
    }

    /// State at `x` with `J = I`, projected to the tangent space when `x`
    /// lies on the boundary.
    pub fn start(&self, x: &[f64]) -> Result<ReflectedState> {
        self.start_with_jacobian(x, linalg::identity(self.domain.dim()))
    }

    /// State at `x` with the given initial Jacobian columns. On the boundary
    /// the columns are projected to the tangent space before the first step.
    pub fn start_with_jacobian(&self, x: &[f64], mut jacobian: Vec<f64>) -> Result<ReflectedState> {
        let d = self.domain.dim();
        if x.len() != d || jacobian.is_empty() || jacobian.len() % d != 0 {
            bail!(InvalidInput, "start point or Jacobian has the wrong shape");
        }
        ensure_finite("start point", x)?;
        ensure_finite("initial Jacobian", &jacobian)?;
        if !self.domain.contains(x) && self.domain.distance(x)? > self.domain.boundary_tolerance() {
            bail!(Precondition, "start point {x:?} is outside the domain");
        }
        if self.domain.on_boundary(x) {
            let mut normal = vec![0.0; d];
            self.domain.normal_into(x, &mut normal);
            for col in jacobian.chunks_exact_mut(d) {
                remove_normal_component(col, &normal);
            }
        }
        Ok(ReflectedState {
            time: 0.0,
            position: x.to_vec(),
            jacobian,
            local_time: 0.0,
            steps: 0,
            contacts: 0,
            jumps: 0,
            pending: None,
        })
    }

    pub fn workspace(&self) -> ReflectedWorkspace {
        ReflectedWorkspace::new(self.domain.dim())
    }

    /// One projection step of size `dt` driven by `dw`.
    pub fn step(
        &self,
        state: &mut ReflectedState,
        dt: f64,
        dw: &[f64],
        ws: &mut ReflectedWorkspace,
    ) -> Result<StepEvent> {
        if !(dt > 0.0) {
            bail!(InvalidInput, "time step must be positive, got {dt}");
        }
        if !self.domain.contains(&state.position)
            && self.domain.distance(&state.position)? > self.domain.boundary_tolerance()
        {
            return Err(Error::CorruptedState(alloc::format!(
                "position {:?} left the domain at t = {}",
                state.position,
                state.time
            )));
        }
        let d = self.domain.dim();
        ws.free.evaluate(self.field, &state.position);
        ws.free
            .advance_position(&state.position, dt, dw, &mut ws.next);
        ws.free.advance_jacobian(&mut state.jacobian, dt, dw);
        if let Some(p) = state.pending.as_mut() {
            ws.free.advance_jacobian(&mut p.w, dt, dw);
            // rᵀ ← rᵀ M⁻¹, i.e. solve Mᵀ r' = r.
            ws.free.step_matrix_transposed(dt, dw, &mut ws.step_t);
            linalg::solve_in_place(&mut ws.step_t, d, &mut p.r)?;
        }
        let dist = self.domain.project_into(&ws.next, &mut state.position);
        state.time += dt;
        state.steps += 1;
        let mut event = StepEvent::default();
        if dist > 0.0 {
            event.contact = true;
            event.local_time = dist;
            state.local_time += dist;
            state.contacts += 1;
            self.domain.normal_into(&state.position, &mut ws.normal);
            match self.mode {
                JumpMode::ProjectEveryContact => {
                    for col in state.jacobian.chunks_exact_mut(d) {
                        remove_normal_component(col, &ws.normal);
                    }
                    state.jumps += 1;
                    event.jumped = true;
                }
                JumpMode::EpsilonExcursion { .. } => {
                    // A later contact within the cluster supersedes this one.
                    match state.pending.as_mut() {
                        Some(p) => {
                            p.contact_time = state.time;
                            p.w.copy_from_slice(&ws.normal);
                            p.r.copy_from_slice(&ws.normal);
                        }
                        None => {
                            state.pending = Some(PendingJump {
                                contact_time: state.time,
                                w: ws.normal.clone(),
                                r: ws.normal.clone(),
                            })
                        }
                    }
                }
            }
        } else if let JumpMode::EpsilonExcursion { epsilon } = self.mode {
            // Gaps within rounding of ε count as equal to ε, so a restarted
            // clock (t0 + k·dt) and a direct one (k·dt) close clusters on
            // the same step.
            let slack = CLUSTER_SLACK * self.dt;
            if state
                .pending
                .as_ref()
                .is_some_and(|p| state.time - p.contact_time - epsilon > slack)
            {
                self.flush(state);
                event.jumped = true;
            }
        }
        Ok(event)
    }

    /// Applies a pending jump now. Used when a cluster completes and at the
    /// end of a path.
    pub fn flush(&self, state: &mut ReflectedState) {
        let Some(p) = state.pending.take() else {
            return;
        };
        let d = state.dim();
        if d == 1 {
            state.jacobian.fill(0.0);
        } else {
            for col in state.jacobian.chunks_exact_mut(d) {
                let a = dot(&p.r, col);
                for i in 0..d {
                    col[i] -= a * p.w[i];
                }
            }
        }
        state.jumps += 1;
    }

    /// Runs from the current state to the absolute time `horizon` without
    /// settling a pending jump. `observer` sees the initial state (with a
    /// default event) and the state after every step.
    pub fn advance_to<O>(
        &self,
        state: &mut ReflectedState,
        horizon: f64,
        noise: &mut NoiseStream,
        ws: &mut ReflectedWorkspace,
        mut observer: O,
    ) -> Result<()>
    where
        O: FnMut(&ReflectedState, &StepEvent),
    {
        let remaining = horizon - state.time;
        if !(remaining > 0.0) {
            bail!(
                InvalidInput,
                "horizon {horizon} is not after the current time {}",
                state.time
            );
        }
        let mut dw = core::mem::take(&mut ws.dw);
        let (full, last) = step_plan(remaining, self.dt);
        let t0 = state.time;
        observer(state, &StepEvent::default());
        for k in 0..full {
            noise.brownian_increments(self.dt, &mut dw);
            let event = self.step(state, self.dt, &dw, ws)?;
            state.time = if k + 1 == full && last == 0.0 {
                horizon
            } else {
                t0 + (k + 1) as f64 * self.dt
            };
            observer(state, &event);
        }
        if last > 0.0 {
            noise.brownian_increments(last, &mut dw);
            let event = self.step(state, last, &dw, ws)?;
            state.time = horizon;
            observer(state, &event);
        }
        state.time = horizon;
        ws.dw = dw;
        Ok(())
    }

    /// Terminal state at `horizon`, with any pending jump settled.
    pub fn simulate(
        &self,
        x: &[f64],
        horizon: f64,
        noise: &mut NoiseStream,
    ) -> Result<ReflectedState> {
        let mut state = self.start(x)?;
        self.simulate_from(&mut state, horizon, noise, |_, _| {})?;
        Ok(state)
    }

    /// Advances `state` to `horizon` and settles a pending jump.
    pub fn simulate_from<O>(
        &self,
        state: &mut ReflectedState,
        horizon: f64,
        noise: &mut NoiseStream,
        observer: O,
    ) -> Result<()>
    where
        O: FnMut(&ReflectedState, &StepEvent),
    {
        let mut ws = self.workspace();
        self.advance_to(state, horizon, noise, &mut ws, observer)?;
        self.flush(state);
        Ok(())
    }

    /// Full path record. In epsilon mode the recorded Jacobians between a
    /// contact and the completion of its cluster do not yet carry the jump;
    /// the terminal entry always does.
    pub fn record(
        &self,
        x: &[f64],
        horizon: f64,
        noise: &mut NoiseStream,
    ) -> Result<ReflectedPathRecord> {
        let mut state = self.start(x)?;
        let mut rec = ReflectedPathRecord::default();
        let mut ws = self.workspace();
        self.advance_to(&mut state, horizon, noise, &mut ws, |s, e| {
            rec.times.push(s.time);
            rec.positions.push(s.position.clone());
            rec.jacobians.push(s.jacobian.clone());
            rec.local_time.push(s.local_time);
            rec.contacts.push(e.contact);
        })?;
        if state.pending.is_some() {
            self.flush(&mut state);
            if let Some(last) = rec.jacobians.last_mut() {
                last.copy_from_slice(&state.jacobian);
            }
        }
        rec.jumps = state.jumps;
        Ok(rec)
    }
}

/// Resets the Jacobian to the identity at the current time. A pending jump
/// is kept: its correction acts on whatever Jacobian is carried forward.
pub fn restart_jacobian(state: &mut ReflectedState) {
    state.jacobian = linalg::identity(state.dim());
}

/// Flow over `[r, t]` from the flows over `[r, s]` and `[s, t]`:
/// `J_{r,t} = J_{s,t} · J_{r,s}` (the later flow acts last).
pub fn compose_jacobians(j_rs: &[f64], j_st: &[f64], d: usize) -> Result<Vec<f64>> {
    if j_rs.len() != d * d || j_st.len() != d * d {
        bail!(InvalidInput, "expected two {d}×{d} matrices");
    }
    let mut out = vec![0.0; d * d];
    linalg::mat_mul(j_st, j_rs, d, d, d, &mut out);
    Ok(out)
}

/// Splits a path at its contact steps.
///
/// Each returned excursion runs from the path start or a contact step to
/// the next contact step. The stretch after the last contact is still open
/// and is not returned, except that a path without contacts is reported as
/// the single excursion `[0, t]`. Only excursions longer than `epsilon` are
/// kept; the second list holds the times of their right ends that are
/// contacts.
pub fn excursion_decomposition(
    record: &ReflectedPathRecord,
    epsilon: f64,
) -> (Vec<ExcursionRecord>, Vec<f64>) {
    let mut out = Vec::new();
    let mut jumps = Vec::new();
    let n = record.times.len();
    if n < 2 {
        return (out, jumps);
    }
    let push = |start: usize, end: usize, out: &mut Vec<ExcursionRecord>| {
        let duration = record.times[end] - record.times[start];
        if duration > epsilon {
            out.push(ExcursionRecord {
                start_index: start,
                end_index: end,
                duration,
                start_point: record.positions[start].clone(),
                end_point: record.positions[end].clone(),
            });
            true
        } else {
            false
        }
    };
    let mut start = 0;
    let mut any = false;
    for i in 1..n {
        if record.contacts[i] {
            any = true;
            if push(start, i, &mut out) {
                jumps.push(record.times[i]);
            }
            start = i;
        }
    }
    if !any {
        push(0, n - 1, &mut out);
    }
    (out, jumps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinearDriftField, VarSigmaField};
    use crate::penalized::PenalizedScheme;

    fn ball() -> Domain {
        Domain::ball(vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn interior_step_is_plain_euler() {
        let d = ball();
        let f = LinearDriftField::brownian(2, 1.0).unwrap();
        let s = ReflectedScheme::new(&d, &f, 0.01, JumpMode::default()).unwrap();
        let mut st = s.start(&[0.1, 0.2]).unwrap();
        let mut ws = s.workspace();
        let e = s.step(&mut st, 0.01, &[0.05, -0.1], &mut ws).unwrap();
        assert!(!e.contact);
        assert_eq!(st.position, vec![0.15000000000000002, 0.1]);
        assert_eq!(st.local_time, 0.0);
        assert_eq!(st.jacobian, linalg::identity(2));
    }

    #[test]
    fn interval_contact_kills_jacobian() {
        let d = Domain::interval(0.0, 1.0).unwrap();
        let f = LinearDriftField::brownian(1, 1.0).unwrap();
        let s = ReflectedScheme::new(&d, &f, 0.01, JumpMode::default()).unwrap();
        let mut st = s.start(&[0.05]).unwrap();
        let mut ws = s.workspace();
        let e = s.step(&mut st, 0.01, &[-0.07], &mut ws).unwrap();
        assert!(e.contact && e.jumped);
        assert_eq!(st.position, vec![0.0]);
        assert!((st.local_time - 0.02).abs() < 1e-15);
        assert_eq!(st.jacobian, vec![0.0]);
    }

    #[test]
    fn ball_contact_projects_columns() {
        let d = ball();
        let f = LinearDriftField::brownian(2, 1.0).unwrap();
        let s = ReflectedScheme::new(&d, &f, 0.01, JumpMode::default()).unwrap();
        let mut st = s.start_with_jacobian(&[0.9, 0.0], vec![3.0, 4.0]).unwrap();
        let mut ws = s.workspace();
        s.step(&mut st, 0.01, &[0.5, 0.0], &mut ws).unwrap();
        assert_eq!(st.position, vec![1.0, 0.0]);
        assert_eq!(st.jacobian, vec![0.0, 4.0]);
    }

    #[test]
    fn corrupted_state_detected() {
        let d = ball();
        let f = LinearDriftField::brownian(2, 1.0).unwrap();
        let s = ReflectedScheme::new(&d, &f, 0.01, JumpMode::default()).unwrap();
        let mut st = s.start(&[0.0, 0.0]).unwrap();
        st.position = vec![2.0, 0.0];
        let mut ws = s.workspace();
        assert!(matches!(
            s.step(&mut st, 0.01, &[0.0, 0.0], &mut ws),
            Err(Error::CorruptedState(_))
        ));
    }

    #[test]
    fn frozen_path() {
        let d = ball();
        let f = LinearDriftField::brownian(2, 0.0).unwrap();
        let s = ReflectedScheme::new(&d, &f, 0.01, JumpMode::default()).unwrap();
        let st = s
            .simulate(&[0.3, 0.3], 1.0, &mut NoiseStream::new(0, 0))
            .unwrap();
        assert_eq!(st.position, vec![0.3, 0.3]);
        assert_eq!(st.jacobian, linalg::identity(2));
        assert_eq!(st.local_time, 0.0);
    }

    #[test]
    fn boundary_start_normal_column_stays_zero() {
        let d = ball();
        let f = VarSigmaField::new(2, 0.3).unwrap();
        for mode in [
            JumpMode::ProjectEveryContact,
            JumpMode::EpsilonExcursion { epsilon: 0.01 },
        ] {
            let s = ReflectedScheme::new(&d, &f, 1e-3, mode).unwrap();
            let alpha = [0.6, 0.8];
            let gamma = vec![-0.6, -0.8];
            let mut st = s.start_with_jacobian(&alpha, gamma).unwrap();
            assert_eq!(st.jacobian, vec![0.0, 0.0]);
            s.simulate_from(&mut st, 0.5, &mut NoiseStream::new(9, 1), |s, _| {
                assert!(s.jacobian.iter().all(|v| *v == 0.0));
            })
            .unwrap();
        }
    }

    #[test]
    fn interior_equivalence_with_penalized() {
        let d = Domain::ball(vec![0.0, 0.0], 100.0).unwrap();
        let f = VarSigmaField::new(2, 0.4).unwrap();
        let r = ReflectedScheme::new(&d, &f, 1e-2, JumpMode::default()).unwrap();
        let p = PenalizedScheme::new(&d, &f, 50.0, 1e-2).unwrap();
        let a = r
            .simulate(&[0.1, -0.2], 1.0, &mut NoiseStream::new(5, 3))
            .unwrap();
        let b = p
            .simulate(&[0.1, -0.2], 1.0, &mut NoiseStream::new(5, 3))
            .unwrap();
        assert_eq!(a.contacts, 0);
        assert_eq!(a.position, b.position);
        assert_eq!(a.jacobian, b.jacobian);
    }

    fn mof_error(mode: JumpMode, path: u64) -> f64 {
        let d = ball();
        let f = VarSigmaField::new(2, 0.4).unwrap();
        let s = ReflectedScheme::new(&d, &f, 1e-3, mode).unwrap();
        let x = [0.7, 0.3];
        let direct = s
            .simulate(&x, 1.0, &mut NoiseStream::new(11, path))
            .unwrap();
        let mut st = s.start(&x).unwrap();
        let mut noise = NoiseStream::new(11, path);
        let mut ws = s.workspace();
        s.advance_to(&mut st, 0.5, &mut noise, &mut ws, |_, _| {})
            .unwrap();
        let first = st.jacobian.clone();
        restart_jacobian(&mut st);
        s.advance_to(&mut st, 1.0, &mut noise, &mut ws, |_, _| {})
            .unwrap();
        s.flush(&mut st);
        let composed = compose_jacobians(&first, &st.jacobian, 2).unwrap();
        assert_eq!(st.position, direct.position);
        linalg::max_abs_diff(&composed, &direct.jacobian)
    }

    #[test]
    fn multiplicative_functional_both_modes() {
        for path in 0..100 {
            assert!(mof_error(JumpMode::ProjectEveryContact, path) <= 1e-12);
            assert!(mof_error(JumpMode::EpsilonExcursion { epsilon: 0.02 }, path) <= 1e-12);
        }
    }

    #[test]
    fn compose_examples() {
        let a = [2.0, 1.0, 0.0, 3.0];
        assert_eq!(
            compose_jacobians(&a, &linalg::identity(2), 2).unwrap(),
            a.to_vec()
        );
        let e = |t: f64| [libm::exp(-t), 0.0, 0.0, libm::exp(-t)];
        let c = compose_jacobians(&e(0.3), &e(0.5), 2).unwrap();
        assert!(linalg::max_abs_diff(&c, &e(0.8)) < 1e-15);
    }

    #[test]
    fn tangential_after_contacts() {
        let d = ball();
        let f = VarSigmaField::new(2, 0.4).unwrap();
        let s = ReflectedScheme::new(&d, &f, 1e-3, JumpMode::default()).unwrap();
        let mut st = s.start(&[0.9, 0.0]).unwrap();
        let mut seen = 0;
        s.simulate_from(&mut st, 1.0, &mut NoiseStream::new(2, 0), |s, e| {
            if e.contact {
                seen += 1;
                let mut n = [0.0; 2];
                d.normal_into(&s.position, &mut n);
                for k in 0..2 {
                    assert!(dot(s.column(k), &n).abs() <= 1e-12);
                }
            }
        })
        .unwrap();
        assert!(seen > 0);
    }

    fn synthetic_record(contact_steps: &[usize], n: usize) -> ReflectedPathRecord {
        ReflectedPathRecord {
            times: (0..=n).map(|i| i as f64 * 0.01).collect(),
            positions: (0..=n).map(|i| vec![i as f64]).collect(),
            jacobians: vec![vec![1.0]; n + 1],
            local_time: vec![0.0; n + 1],
            contacts: (0..=n).map(|i| contact_steps.contains(&i)).collect(),
            jumps: 0,
        }
    }

    #[test]
    fn excursion_bookkeeping() {
        let (ex, jumps) = excursion_decomposition(&synthetic_record(&[], 100), 0.0);
        assert_eq!(ex.len(), 1);
        assert_eq!((ex[0].start_index, ex[0].end_index), (0, 100));
        assert!(jumps.is_empty());

        let (ex, jumps) = excursion_decomposition(&synthetic_record(&[10, 42], 100), 0.0);
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].end_index, 10);
        assert_eq!(ex[1].end_index, 42);
        assert_eq!(jumps, vec![0.1, 0.42]);

        let (ex, jumps) = excursion_decomposition(&synthetic_record(&[10, 42], 100), 5.0);
        assert!(ex.is_empty() && jumps.is_empty());
    }
}
