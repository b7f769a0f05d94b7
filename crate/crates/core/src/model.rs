//! Coefficients of the diffusion, the initial condition, and numerical
//! checks of the standing assumptions (ellipticity, non-characteristic
//! boundary, consistency of the hand-written derivatives).
//!
//! Fields are evaluation callbacks with explicit derivative callbacks.
//! Implementations must be pure: the schemes call them concurrently from
//! many paths and rely on identical inputs giving identical outputs.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::geometry::Domain;
use crate::linalg::{self, dot};
use crate::math;

/// Drift `b`, diffusion `σ` and their first derivatives.
///
/// Matrix outputs are column-major `d × d`:
/// * `diffusion`: column `j` is the vector field `σ_j`;
/// * `drift_jacobian`: entry `(i, j)` is `∂_j b^i`;
/// * `diffusion_jacobian`: `d` consecutive blocks, block `j` holding
///   `(i, k) ↦ ∂_k σ_j^i`.
pub trait CoefficientField: Send + Sync {
    fn dim(&self) -> usize;
    fn drift(&self, x: &[f64], out: &mut [f64]);
    fn diffusion(&self, x: &[f64], out: &mut [f64]);
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]);
    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]);

    /// Lets the schemes skip the `∂σ_j` terms when `σ` is constant.
    fn constant_diffusion(&self) -> bool {
        false
    }

    /// Declared sup-norm bounds, if any.
    fn bounds(&self) -> Option<FieldBounds> {
        None
    }
}

/// Sup-norm bounds declared for a field (max-abs entry norm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldBounds {
    pub drift: f64,
    pub diffusion: f64,
    pub drift_jacobian: f64,
    pub diffusion_jacobian: f64,
}

/// The initial datum `f` and its gradient.
pub trait InitialCondition: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
}

impl<T: CoefficientField + ?Sized> CoefficientField for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        (**self).drift(x, out)
    }
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        (**self).diffusion(x, out)
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        (**self).drift_jacobian(x, out)
    }
    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) {
        (**self).diffusion_jacobian(x, out)
    }
    fn constant_diffusion(&self) -> bool {
        (**self).constant_diffusion()
    }
    fn bounds(&self) -> Option<FieldBounds> {
        (**self).bounds()
    }
}

impl<T: InitialCondition + ?Sized> InitialCondition for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient(x, out)
    }
}

/// `b(x) = Bx + c`, `σ` constant. With `B = 0`, `c = 0`, `σ = s·Id` this is
/// scaled Brownian motion.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDriftField {
    dim: usize,
    drift_matrix: Vec<f64>,
    drift_offset: Vec<f64>,
    sigma: Vec<f64>,
}

impl LinearDriftField {
    /// `drift_matrix` and `sigma` are column-major `d × d`.
    pub fn new(drift_matrix: Vec<f64>, drift_offset: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let dim = drift_offset.len();
        if dim == 0 || drift_matrix.len() != dim * dim || sigma.len() != dim * dim {
            bail!(
                InvalidInput,
                "linear drift field needs d×d drift and diffusion matrices and a d-vector offset"
            );
        }
        crate::error::ensure_finite("drift matrix", &drift_matrix)?;
        crate::error::ensure_finite("drift offset", &drift_offset)?;
        crate::error::ensure_finite("diffusion matrix", &sigma)?;
        Ok(Self {
            dim,
            drift_matrix,
            drift_offset,
            sigma,
        })
    }

    /// `b = 0`, `σ = scale·Id`.
    pub fn brownian(dim: usize, scale: f64) -> Result<Self> {
        let sigma = linalg::identity(dim)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        Self::new(vec![0.0; dim * dim], vec![0.0; dim], sigma)
    }

    /// `b = 0` with a constant diffusion matrix.
    pub fn constant_diffusion(sigma: Vec<f64>) -> Result<Self> {
        let dim = math::sqrt(sigma.len() as f64) as usize;
        Self::new(vec![0.0; dim * dim], vec![0.0; dim], sigma)
    }

    /// `b(x) = Bx`, `σ = Id`.
    pub fn linear(drift_matrix: Vec<f64>) -> Result<Self> {
        let dim = math::sqrt(drift_matrix.len() as f64) as usize;
        Self::new(drift_matrix, vec![0.0; dim], linalg::identity(dim))
    }

    pub fn drift_matrix(&self) -> &[f64] {
        &self.drift_matrix
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
}

impl CoefficientField for LinearDriftField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        linalg::mat_vec(&self.drift_matrix, self.dim, x, out);
        for (o, c) in out.iter_mut().zip(&self.drift_offset) {
            *o += c;
        }
    }

    fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.sigma);
    }

    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.drift_matrix);
    }

    fn diffusion_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn constant_diffusion(&self) -> bool {
        true
    }
}

/// `b = 0`, `σ(x) = (1 + κ sin x¹)·Id` with `κ ∈ [0, 1/2]`.
///
/// The only built-in field with `∂σ ≠ 0`; it drives the second-order terms
/// of the Jacobian generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarSigmaField {
    dim: usize,
    kappa: f64,
}

impl VarSigmaField {
    pub fn new(dim: usize, kappa: f64) -> Result<Self> {
        if dim == 0 {
            bail!(InvalidInput, "dimension must be positive");
        }
        if !(0.0..=0.5).contains(&kappa) {
            bail!(InvalidInput, "kappa must lie in [0, 0.5], got {kappa}");
        }
        Ok(Self { dim, kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl CoefficientField for VarSigmaField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn drift(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        let s = 1.0 + self.kappa * math::sin(x[0]);
        out.fill(0.0);
        for i in 0..self.dim {
            out[i * self.dim + i] = s;
        }
    }

    fn drift_jacobian(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) {
        // ∂_k σ_j^i = δ_ij δ_k1 κ cos x¹.
        let d = self.dim;
        let c = self.kappa * math::cos(x[0]);
        out.fill(0.0);
        for j in 0..d {
            out[j * d * d + j] = c;
        }
    }

    fn bounds(&self) -> Option<FieldBounds> {
        Some(FieldBounds {
            drift: 0.0,
            diffusion: 1.0 + self.kappa,
            drift_jacobian: 0.0,
            diffusion_jacobian: self.kappa,
        })
    }
}

/// `f ≡ c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantInitial {
    pub dim: usize,
    pub value: f64,
}

impl InitialCondition for ConstantInitial {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _x: &[f64]) -> f64 {
        self.value
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `f(x) = w·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearInitial {
    pub weights: Vec<f64>,
}

impl InitialCondition for LinearInitial {
    fn dim(&self) -> usize {
        self.weights.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x)
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.weights);
    }
}

/// Neumann eigenmode along one axis: `f(x) = cos(kπ(x_axis − lo)/(hi − lo))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineMode {
    pub dim: usize,
    pub axis: usize,
    pub k: u32,
    pub lo: f64,
    pub hi: f64,
}

impl CosineMode {
    pub fn interval(k: u32, lo: f64, hi: f64) -> Self {
        Self {
            dim: 1,
            axis: 0,
            k,
            lo,
            hi,
        }
    }

    fn phase(&self, x: &[f64]) -> f64 {
        self.k as f64 * (x[self.axis] - self.lo) / (self.hi - self.lo)
    }
}

impl InitialCondition for CosineMode {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        math::cos_pi(self.phase(x))
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let rate = self.k as f64 * core::f64::consts::PI / (self.hi - self.lo);
        out[self.axis] = -rate * math::sin_pi(self.phase(x));
    }
}

/// Radial profile `f(x) = cos(kπ|x − c|²/R²)`, whose radial derivative
/// vanishes at `r = R` and at the center.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialCosine {
    pub center: Vec<f64>,
    pub radius: f64,
    pub k: u32,
}

impl RadialCosine {
    fn phase(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        self.k as f64 * r2 / (self.radius * self.radius)
    }

    /// Profile as a function of the radius, with its radial derivative.
    pub fn profile(&self, r: f64) -> (f64, f64) {
        let s = self.k as f64 * r * r / (self.radius * self.radius);
        let rate = 2.0 * self.k as f64 * core::f64::consts::PI * r / (self.radius * self.radius);
        (math::cos_pi(s), -rate * math::sin_pi(s))
    }
}

impl InitialCondition for RadialCosine {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        math::cos_pi(self.phase(x))
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let s = math::sin_pi(self.phase(x));
        let scale = -2.0 * self.k as f64 * core::f64::consts::PI / (self.radius * self.radius) * s;
        for i in 0..x.len() {
            out[i] = scale * (x[i] - self.center[i]);
        }
    }
}

/// `f(x) = A exp(−|x − c|² / (2w²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

impl InitialCondition for GaussianBump {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        self.amplitude * math::exp(-r2 / (2.0 * self.width * self.width))
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let v = self.value(x);
        let w2 = self.width * self.width;
        for i in 0..x.len() {
            out[i] = -v * (x[i] - self.center[i]) / w2;
        }
    }
}

/// Outcome of the assumption checks. Pass flags are derived from the
/// numeric fields and thresholds on demand.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssumptionReport {
    /// Minimum over interior samples of the smallest eigenvalue of `σσ*`.
    pub min_ellipticity: Option<f64>,
    pub ellipticity_threshold: Option<f64>,
    /// Minimum over boundary-shell samples of `Σ_j (γ·σ_j)²`.
    pub min_noncharacteristic: Option<f64>,
    pub noncharacteristic_threshold: Option<f64>,
    /// Largest absolute gap between supplied derivatives and central differences.
    pub max_derivative_mismatch: Option<f64>,
    pub derivative_tolerance: Option<f64>,
    /// Largest excess of sampled sup-norms over the declared bounds.
    pub max_bound_excess: Option<f64>,
    /// Largest `|a − aᵀ|` entry seen.
    pub max_asymmetry: Option<f64>,
}

impl AssumptionReport {
    pub fn ellipticity_pass(&self) -> Option<bool> {
        Some(self.min_ellipticity? >= self.ellipticity_threshold?)
    }

    pub fn noncharacteristic_pass(&self) -> Option<bool> {
        Some(self.min_noncharacteristic? >= self.noncharacteristic_threshold?)
    }

    pub fn derivatives_pass(&self) -> Option<bool> {
        Some(self.max_derivative_mismatch? <= self.derivative_tolerance?)
    }

    pub fn bounds_pass(&self) -> Option<bool> {
        Some(self.max_bound_excess? <= 0.0)
    }

    /// All checks that were run passed.
    pub fn all_pass(&self) -> bool {
        [
            self.ellipticity_pass(),
            self.noncharacteristic_pass(),
            self.derivatives_pass(),
            self.bounds_pass(),
        ]
        .into_iter()
        .flatten()
        .all(|p| p)
    }

    /// Combines reports from separate checks; fields set in `other` win.
    pub fn merge(mut self, other: AssumptionReport) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            min_ellipticity,
            ellipticity_threshold,
            min_noncharacteristic,
            noncharacteristic_threshold,
            max_derivative_mismatch,
            derivative_tolerance,
            max_bound_excess,
            max_asymmetry
        );
        self
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in the given base.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// Halton point number `index` in `[0,1)^dim`.
pub fn halton(index: u64, dim: usize, out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate().take(dim) {
        *o = radical_inverse(index, PRIMES[k % PRIMES.len()]);
    }
}

/// Low-discrepancy interior samples: Halton points in the bounding box,
/// rejected outside the domain. `skip` offsets the sequence.
pub fn interior_samples(domain: &Domain, count: usize, skip: u64) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let (lo, hi) = domain.bounding_box();
    let mut u = vec![0.0; d];
    let mut out = Vec::with_capacity(count);
    let mut index = skip + 1;
    let cap = skip + 1 + 200 * count as u64 + 1000;
    while out.len() < count && index < cap {
        halton(index, d, &mut u);
        index += 1;
        let x: Vec<f64> = (0..d).map(|i| lo[i] + u[i] * (hi[i] - lo[i])).collect();
        if domain.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Low-discrepancy boundary frames; see [`Domain::boundary_point_from_unit`].
pub fn boundary_samples(
    domain: &Domain,
    count: usize,
    skip: u64,
) -> Vec<crate::geometry::BoundaryFrame> {
    let d = domain.dim();
    let mut u = vec![0.0; d];
    let mut out = Vec::with_capacity(count);
    let mut index = skip + 1;
    let cap = skip + 1 + 200 * count as u64 + 1000;
    while out.len() < count && index < cap {
        halton(index, d, &mut u);
        index += 1;
        if let Some(frame) = domain.boundary_point_from_unit(&u) {
            out.push(frame);
        }
    }
    out
}

fn diffusion_matrix(field: &dyn CoefficientField, x: &[f64], sigma: &mut [f64], a: &mut [f64]) {
    let d = field.dim();
    field.diffusion(x, sigma);
    // a = σσᵀ
    for i in 0..d {
        for k in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += sigma[j * d + i] * sigma[j * d + k];
            }
            a[k * d + i] = s;
        }
    }
}

fn check_dims(field: &dyn CoefficientField, domain: &Domain) -> Result<()> {
    if field.dim() != domain.dim() {
        bail!(
            InvalidInput,
            "field dimension {} does not match domain dimension {}",
            field.dim(),
            domain.dim()
        );
    }
    Ok(())
}

/// Smallest eigenvalue of `a = σσ*` over interior samples; passes when it
/// is at least `threshold`. Also records the symmetry defect of `a`.
pub fn check_ellipticity(
    field: &dyn CoefficientField,
    domain: &Domain,
    threshold: f64,
    samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    check_dims(field, domain)?;
    if samples == 0 {
        bail!(Precondition, "ellipticity check needs at least one sample");
    }
    let d = field.dim();
    let mut sigma = vec![0.0; d * d];
    let mut a = vec![0.0; d * d];
    let mut min_eig = f64::INFINITY;
    let mut asym: f64 = 0.0;
    for x in interior_samples(domain, samples, seed) {
        diffusion_matrix(field, &x, &mut sigma, &mut a);
        let at = linalg::transpose(&a, d);
        asym = asym.max(linalg::max_abs_diff(&a, &at));
        min_eig = min_eig.min(linalg::symmetric_eigenvalues(&a, d)[0]);
    }
    Ok(AssumptionReport {
        min_ellipticity: Some(min_eig),
        ellipticity_threshold: Some(threshold),
        max_asymmetry: Some(asym),
        ..Default::default()
    })
}

/// Minimum of `Σ_j (γ(π(x))·σ_j(x))² = |σ(x)ᵀγ|²` over points of the inner
/// shell `{α + sγ(α) : α ∈ ∂D, 0 ≤ s ≤ width}`.
pub fn check_noncharacteristic(
    field: &dyn CoefficientField,
    domain: &Domain,
    threshold: f64,
    shell_width: f64,
    samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    check_dims(field, domain)?;
    if !(shell_width > 0.0) {
        bail!(
            Precondition,
            "shell width must be positive, got {shell_width}"
        );
    }
    if samples == 0 {
        bail!(
            Precondition,
            "non-characteristic check needs at least one sample"
        );
    }
    let d = field.dim();
    let mut sigma = vec![0.0; d * d];
    let mut proj = vec![0.0; d];
    let mut min_val = f64::INFINITY;
    for (k, frame) in boundary_samples(domain, samples, seed)
        .into_iter()
        .enumerate()
    {
        // Depth from a base-2 van der Corput sequence, independent of the
        // boundary coordinates.
        let depth = shell_width * radical_inverse(k as u64, 2);
        let x: Vec<f64> = frame
            .point
            .iter()
            .zip(&frame.normal)
            .map(|(p, g)| p + depth * g)
            .collect();
        let x = if domain.contains(&x) {
            x
        } else {
            frame.point.clone()
        };
        field.diffusion(&x, &mut sigma);
        linalg::mat_t_vec(&sigma, d, &frame.normal, &mut proj);
        min_val = min_val.min(dot(&proj, &proj));
    }
    Ok(AssumptionReport {
        min_noncharacteristic: Some(min_val),
        noncharacteristic_threshold: Some(threshold),
        ..Default::default()
    })
}

/// Compares the supplied `∂b`, `∂σ_j` and `∇f` with central differences of
/// step `h` at interior samples.
pub fn check_derivatives(
    field: &dyn CoefficientField,
    initial: &dyn InitialCondition,
    domain: &Domain,
    samples: usize,
    h: f64,
    tol: f64,
) -> Result<AssumptionReport> {
    check_dims(field, domain)?;
    if initial.dim() != domain.dim() {
        bail!(
            InvalidInput,
            "initial condition dimension does not match the domain"
        );
    }
    if !(h > 0.0) {
        bail!(
            Precondition,
            "finite-difference step must be positive, got {h}"
        );
    }
    let d = field.dim();
    let mut supplied_b = vec![0.0; d * d];
    let mut supplied_s = vec![0.0; d * d * d];
    let mut supplied_f = vec![0.0; d];
    let (mut bp, mut bm) = (vec![0.0; d], vec![0.0; d]);
    let (mut sp, mut sm) = (vec![0.0; d * d], vec![0.0; d * d]);
    let mut worst: f64 = 0.0;
    for x in interior_samples(domain, samples, 0) {
        field.drift_jacobian(&x, &mut supplied_b);
        field.diffusion_jacobian(&x, &mut supplied_s);
        initial.gradient(&x, &mut supplied_f);
        let mut xp = x.clone();
        let mut xm = x.clone();
        for k in 0..d {
            xp[k] = x[k] + h;
            xm[k] = x[k] - h;
            field.drift(&xp, &mut bp);
            field.drift(&xm, &mut bm);
            for i in 0..d {
                let fd = (bp[i] - bm[i]) / (2.0 * h);
                worst = worst.max(math::abs(fd - supplied_b[k * d + i]));
            }
            field.diffusion(&xp, &mut sp);
            field.diffusion(&xm, &mut sm);
            for j in 0..d {
                for i in 0..d {
                    let fd = (sp[j * d + i] - sm[j * d + i]) / (2.0 * h);
                    worst = worst.max(math::abs(fd - supplied_s[j * d * d + k * d + i]));
                }
            }
            let fd = (initial.value(&xp) - initial.value(&xm)) / (2.0 * h);
            worst = worst.max(math::abs(fd - supplied_f[k]));
            xp[k] = x[k];
            xm[k] = x[k];
        }
    }
    Ok(AssumptionReport {
        max_derivative_mismatch: Some(worst),
        derivative_tolerance: Some(tol),
        ..Default::default()
    })
}

/// Largest excess of sampled max-abs entries over the declared bounds.
/// Returns a report without the field when nothing is declared.
pub fn check_declared_bounds(
    field: &dyn CoefficientField,
    domain: &Domain,
    samples: usize,
) -> Result<AssumptionReport> {
    check_dims(field, domain)?;
    let Some(bounds) = field.bounds() else {
        return Ok(AssumptionReport::default());
    };
    let d = field.dim();
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * d];
    let mut db = vec![0.0; d * d];
    let mut ds = vec![0.0; d * d * d];
    let sup = |v: &[f64]| v.iter().map(|c| math::abs(*c)).fold(0.0, f64::max);
    let mut excess = f64::NEG_INFINITY;
    for x in interior_samples(domain, samples, 0) {
        field.drift(&x, &mut b);
        field.diffusion(&x, &mut s);
        field.drift_jacobian(&x, &mut db);
        field.diffusion_jacobian(&x, &mut ds);
        excess = excess
            .max(sup(&b) - bounds.drift)
            .max(sup(&s) - bounds.diffusion)
            .max(sup(&db) - bounds.drift_jacobian)
            .max(sup(&ds) - bounds.diffusion_jacobian);
    }
    Ok(AssumptionReport {
        max_bound_excess: Some(excess),
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    struct SinDrift {
        correct: bool,
    }

    impl CoefficientField for SinDrift {
        fn dim(&self) -> usize {
            2
        }
        fn drift(&self, x: &[f64], out: &mut [f64]) {
            out[0] = math::sin(x[0]);
            out[1] = 0.0;
        }
        fn diffusion(&self, _x: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&linalg::identity(2));
        }
        fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
            out.fill(0.0);
            if self.correct {
                out[0] = math::cos(x[0]);
            }
        }
        fn diffusion_jacobian(&self, _x: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
    }

    fn unit_ball() -> Domain {
        Domain::ball(vec![0.0, 0.0], 1.0).unwrap()
    }

    fn flat() -> ConstantInitial {
        ConstantInitial { dim: 2, value: 0.0 }
    }

    #[test]
    fn ellipticity_identity_and_degenerate() {
        let id = LinearDriftField::brownian(2, 1.0).unwrap();
        let r = check_ellipticity(&id, &unit_ball(), 0.5, 200, 0).unwrap();
        assert_abs_diff_eq!(r.min_ellipticity.unwrap(), 1.0, epsilon = 1e-14);
        assert_eq!(r.ellipticity_pass(), Some(true));
        assert_eq!(r.max_asymmetry, Some(0.0));

        let degenerate = LinearDriftField::constant_diffusion(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let r = check_ellipticity(&degenerate, &unit_ball(), 0.5, 200, 0).unwrap();
        assert_abs_diff_eq!(r.min_ellipticity.unwrap(), 0.0, epsilon = 1e-14);
        assert_eq!(r.ellipticity_pass(), Some(false));
        assert!(!r.all_pass());
    }

    #[test]
    fn ellipticity_varsigma_matches_grid_minimum() {
        let field = VarSigmaField::new(2, 0.1).unwrap();
        let r = check_ellipticity(&field, &unit_ball(), 0.5, 4000, 0).unwrap();
        // Brute force over a dense grid of the unit disc.
        let mut brute = f64::INFINITY;
        for i in 0..=400 {
            for j in 0..=400 {
                let x = [-1.0 + i as f64 / 200.0, -1.0 + j as f64 / 200.0];
                if x[0] * x[0] + x[1] * x[1] <= 1.0 {
                    let s = 1.0 + 0.1 * x[0].sin();
                    brute = brute.min(s * s);
                }
            }
        }
        let got = r.min_ellipticity.unwrap();
        assert!(got >= 0.81 && brute >= 0.81);
        assert!((got - brute).abs() < 2e-3, "{got} vs {brute}");
        assert_eq!(r.ellipticity_pass(), Some(true));
    }

    #[test]
    fn noncharacteristic_examples() {
        let id = LinearDriftField::brownian(2, 1.0).unwrap();
        let r = check_noncharacteristic(&id, &unit_ball(), 0.5, 0.2, 300, 0).unwrap();
        assert_abs_diff_eq!(r.min_noncharacteristic.unwrap(), 1.0, epsilon = 1e-12);

        // σ = diag(2, 1): 4cos²θ + sin²θ is minimal (= 1) at θ = ±π/2.
        let aniso = LinearDriftField::constant_diffusion(vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let r = check_noncharacteristic(&aniso, &unit_ball(), 0.5, 0.2, 4000, 0).unwrap();
        let brute = (0..100_000)
            .map(|k| {
                let th = k as f64 * core::f64::consts::TAU / 100_000.0;
                4.0 * th.cos().powi(2) + th.sin().powi(2)
            })
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(brute, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.min_noncharacteristic.unwrap(), brute, epsilon = 1e-3);

        // First column tangent to the circle along the x-axis crossing:
        // only the second column contributes there.
        let shear = LinearDriftField::constant_diffusion(vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let r = check_noncharacteristic(&shear, &unit_ball(), 0.5, 0.1, 2000, 0).unwrap();
        assert!(r.min_noncharacteristic.unwrap() < 1e-3);
        assert_eq!(r.noncharacteristic_pass(), Some(false));
    }

    #[test]
    fn derivative_checks() {
        let linear = LinearDriftField::linear(vec![-1.0, 0.0, 0.0, -1.0]).unwrap();
        let r = check_derivatives(&linear, &flat(), &unit_ball(), 50, 1e-5, 1e-6).unwrap();
        assert!(r.max_derivative_mismatch.unwrap() < 1e-10);
        assert_eq!(r.derivatives_pass(), Some(true));

        let good = SinDrift { correct: true };
        let r = check_derivatives(&good, &flat(), &unit_ball(), 50, 1e-5, 1e-6).unwrap();
        assert_eq!(r.derivatives_pass(), Some(true));

        let bad = SinDrift { correct: false };
        let samples = interior_samples(&unit_ball(), 50, 0);
        let expected = samples.iter().map(|x| x[0].cos().abs()).fold(0.0, f64::max);
        let r = check_derivatives(&bad, &flat(), &unit_ball(), 50, 1e-5, 1e-6).unwrap();
        assert_abs_diff_eq!(r.max_derivative_mismatch.unwrap(), expected, epsilon = 1e-8);
        assert_eq!(r.derivatives_pass(), Some(false));
    }

    #[test]
    fn builtins_pass_derivative_check() {
        let ball = unit_ball();
        let interval = Domain::interval(0.0, 1.0).unwrap();
        let tol = 1e-6;
        let fields: [(&dyn CoefficientField, &Domain); 4] = [
            (&LinearDriftField::brownian(2, 1.0).unwrap(), &ball),
            (
                &LinearDriftField::linear(vec![0.3, -1.0, 2.0, -0.5]).unwrap(),
                &ball,
            ),
            (&VarSigmaField::new(2, 0.5).unwrap(), &ball),
            (&VarSigmaField::new(1, 0.3).unwrap(), &interval),
        ];
        for (field, domain) in fields {
            let f: &dyn InitialCondition = if domain.dim() == 1 {
                &CosineMode::interval(2, 0.0, 1.0)
            } else {
                &RadialCosine {
                    center: vec![0.0, 0.0],
                    radius: 1.0,
                    k: 1,
                }
            };
            let r = check_derivatives(field, f, domain, 100, 1e-5, tol).unwrap();
            assert_eq!(r.derivatives_pass(), Some(true), "{r:?}");
        }
        let bump = GaussianBump {
            center: vec![0.1, 0.2],
            width: 0.3,
            amplitude: 2.0,
        };
        let r = check_derivatives(
            &LinearDriftField::brownian(2, 1.0).unwrap(),
            &bump,
            &ball,
            100,
            1e-5,
            tol,
        )
        .unwrap();
        assert_eq!(r.derivatives_pass(), Some(true));
    }

    #[test]
    fn declared_bounds_hold_for_varsigma() {
        let field = VarSigmaField::new(2, 0.4).unwrap();
        let r = check_declared_bounds(&field, &unit_ball(), 200).unwrap();
        assert_eq!(r.bounds_pass(), Some(true));
    }

    #[test]
    fn cosine_mode_neumann_at_ends() {
        let f = CosineMode::interval(3, 0.0, 1.0);
        let mut g = [1.0];
        f.gradient(&[0.0], &mut g);
        assert_eq!(g[0], 0.0);
        f.gradient(&[1.0], &mut g);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn varsigma_rejects_large_kappa() {
        assert!(VarSigmaField::new(2, 0.6).is_err());
    }
}
