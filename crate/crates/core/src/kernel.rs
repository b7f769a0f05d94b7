//! Euler–Maruyama update shared by both schemes.
//!
//! Both schemes call exactly these routines for the free part of a step,
//! which keeps their interior updates bit-identical on common noise.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg;
use crate::model::CoefficientField;

/// Step-local coefficient values and scratch space.
#[derive(Debug, Clone)]
pub(crate) struct FreeStep {
    dim: usize,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    drift_jac: Vec<f64>,
    sigma_jac: Vec<f64>,
    constant_sigma: bool,
    increment: Vec<f64>,
    scratch: Vec<f64>,
}

impl FreeStep {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            dim,
            drift: vec![0.0; dim],
            sigma: vec![0.0; dim * dim],
            drift_jac: vec![0.0; dim * dim],
            sigma_jac: vec![0.0; dim * dim * dim],
            constant_sigma: false,
            increment: vec![0.0; dim],
            scratch: vec![0.0; dim],
        }
    }

    /// Loads `b`, `σ`, `∂b`, `∂σ_j` at `x`.
    pub(crate) fn evaluate(&mut self, field: &dyn CoefficientField, x: &[f64]) {
        field.drift(x, &mut self.drift);
        field.diffusion(x, &mut self.sigma);
        field.drift_jacobian(x, &mut self.drift_jac);
        self.constant_sigma = field.constant_diffusion();
        if !self.constant_sigma {
            field.diffusion_jacobian(x, &mut self.sigma_jac);
        }
    }

    /// `y = x + bΔt + σΔB`.
    pub(crate) fn advance_position(&self, x: &[f64], dt: f64, dw: &[f64], y: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let mut noise = 0.0;
            for j in 0..d {
                noise += self.sigma[j * d + i] * dw[j];
            }
            y[i] = x[i] + self.drift[i] * dt + noise;
        }
    }

    /// In place on every column `v` of `jac`:
    /// `v ← v + ∂b·v Δt + Σ_j ∂σ_j·v ΔB^j`.
    pub(crate) fn advance_jacobian(&mut self, jac: &mut [f64], dt: f64, dw: &[f64]) {
        let d = self.dim;
        for col in jac.chunks_exact_mut(d) {
            linalg::mat_vec(&self.drift_jac, d, col, &mut self.increment);
            for v in self.increment.iter_mut() {
                *v *= dt;
            }
            if !self.constant_sigma {
                for (j, dwj) in dw.iter().enumerate() {
                    let block = &self.sigma_jac[j * d * d..(j + 1) * d * d];
                    linalg::mat_vec(block, d, col, &mut self.scratch);
                    for i in 0..d {
                        self.increment[i] += self.scratch[i] * dwj;
                    }
                }
            }
            for i in 0..d {
                col[i] += self.increment[i];
            }
        }
    }

    /// Writes the transpose of the one-step linear map
    /// `M = I + ∂b Δt + Σ_j ∂σ_j ΔB^j` into `out`.
    pub(crate) fn step_matrix_transposed(&self, dt: f64, dw: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for k in 0..d {
            for i in 0..d {
                let mut m = self.drift_jac[k * d + i] * dt;
                if !self.constant_sigma {
                    for (j, dwj) in dw.iter().enumerate() {
                        m += self.sigma_jac[j * d * d + k * d + i] * dwj;
                    }
                }
                if i == k {
                    m += 1.0;
                }
                out[i * d + k] = m;
            }
        }
    }
}

/// Number of full steps of size `dt` and the final partial step (zero when
/// `dt` divides the horizon up to rounding).
pub(crate) fn step_plan(horizon: f64, dt: f64) -> (u64, f64) {
    let ratio = horizon / dt;
    let nearest = crate::math::round(ratio);
    if crate::math::abs(nearest * dt - horizon) <= 1e-9 * dt {
        return (nearest as u64, 0.0);
    }
    let full = crate::math::floor(ratio);
    (full as u64, horizon - full * dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_handles_rounding() {
        assert_eq!(step_plan(0.2, 1e-4), (2000, 0.0));
        assert_eq!(step_plan(1.0, 0.1), (10, 0.0));
        let (k, rem) = step_plan(1.0, 0.3);
        assert_eq!(k, 3);
        assert!((rem - 0.1).abs() < 1e-15);
    }
}
