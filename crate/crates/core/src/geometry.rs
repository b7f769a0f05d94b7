//! Convex smooth domains and their boundary geometry.
//!
//! Every scheme in this crate talks to the domain through [`Domain`]:
//! exterior distance, metric projection onto the boundary, inward unit
//! normal, the penalization field `β₀ = ½∇d(·,D)²`, and the shape operator.
//! Domains are immutable once built and can be shared freely across threads.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, ensure_finite, Result};
use crate::linalg::{dot, norm};
use crate::math;

/// Boundary membership tolerance, relative to the domain diameter.
pub const BOUNDARY_TOL_REL: f64 = 1e-8;

/// Residual accepted when projecting onto an ellipsoid.
pub const ELLIPSOID_RESIDUAL: f64 = 1e-10;

/// Shape descriptor of a convex domain.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Interval {
        lo: f64,
        hi: f64,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Ellipsoid {
        center: Vec<f64>,
        semi_axes: Vec<f64>,
    },
    /// `{x : normal·x ≥ offset}`. Unbounded, so only built when test-only
    /// geometry is explicitly enabled.
    HalfSpace {
        normal: Vec<f64>,
        offset: f64,
    },
}

/// A closed convex domain in `ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    shape: Shape,
    dim: usize,
    diameter: f64,
}

/// A boundary point together with the inward unit normal there.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFrame {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
}

impl Domain {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        ensure_finite("interval bounds", &[lo, hi])?;
        if lo >= hi {
            bail!(InvalidInput, "interval requires lo < hi, got [{lo}, {hi}]");
        }
        Ok(Self {
            shape: Shape::Interval { lo, hi },
            dim: 1,
            diameter: hi - lo,
        })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        ensure_finite("ball center", &center)?;
        if center.is_empty() {
            bail!(
                InvalidInput,
                "ball center must have at least one coordinate"
            );
        }
        if !(radius > 0.0) || !radius.is_finite() {
            bail!(
                InvalidInput,
                "ball radius must be positive and finite, got {radius}"
            );
        }
        let dim = center.len();
        Ok(Self {
            shape: Shape::Ball { center, radius },
            dim,
            diameter: 2.0 * radius,
        })
    }

    pub fn ellipsoid(center: Vec<f64>, semi_axes: Vec<f64>) -> Result<Self> {
        ensure_finite("ellipsoid center", &center)?;
        if center.is_empty() || center.len() != semi_axes.len() {
            bail!(
                InvalidInput,
                "ellipsoid center ({}) and semi-axes ({}) must have the same nonzero length",
                center.len(),
                semi_axes.len()
            );
        }
        if semi_axes.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            bail!(
                InvalidInput,
                "ellipsoid semi-axes must be positive, got {semi_axes:?}"
            );
        }
        let dim = center.len();
        let diameter = 2.0 * semi_axes.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            shape: Shape::Ellipsoid { center, semi_axes },
            dim,
            diameter,
        })
    }

    /// Half-space `{x : normal·x ≥ offset}`. The estimators assume a
    /// bounded domain, so this is refused unless `allow_test_only` is set.
    pub fn half_space(normal: Vec<f64>, offset: f64, allow_test_only: bool) -> Result<Self> {
        if !allow_test_only {
            bail!(
                InvalidInput,
                "half-space domains are unbounded and only allowed as test-only geometry"
            );
        }
        ensure_finite("half-space normal", &normal)?;
        ensure_finite("half-space offset", &[offset])?;
        if normal.is_empty() || math::abs(norm(&normal) - 1.0) > 1e-12 {
            bail!(
                InvalidInput,
                "half-space normal must be a unit vector, got {normal:?}"
            );
        }
        let dim = normal.len();
        // Unbounded: tolerances use a unit length scale.
        Ok(Self {
            shape: Shape::HalfSpace { normal, offset },
            dim,
            diameter: 1.0,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Diameter used as the length scale of every tolerance (1 for half-spaces).
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn boundary_tolerance(&self) -> f64 {
        BOUNDARY_TOL_REL * self.diameter
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            bail!(
                InvalidInput,
                "point has dimension {}, domain has dimension {}",
                x.len(),
                self.dim
            );
        }
        ensure_finite("point", x)
    }

    /// Exact closed-set membership (no tolerance).
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.shape {
            Shape::Interval { lo, hi } => *lo <= x[0] && x[0] <= *hi,
            Shape::Ball { center, radius } => dist_sq(x, center) <= radius * radius,
            Shape::Ellipsoid { center, semi_axes } => ellipsoid_level(x, center, semi_axes) <= 1.0,
            Shape::HalfSpace { normal, offset } => dot(normal, x) >= *offset,
        }
    }

    /// Distance from `x` to the domain: zero inside, positive outside.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let mut scratch = vec![0.0; self.dim];
        Ok(self.project_into(x, &mut scratch))
    }

    /// Distance from an interior point to the boundary (zero outside).
    /// Exact except for ellipsoids, where the first-order level-set
    /// estimate is used; it is only consulted for tolerance decisions.
    pub fn depth(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Interval { lo, hi } => (x[0] - lo).min(hi - x[0]).max(0.0),
            Shape::Ball { center, radius } => (radius - math::sqrt(dist_sq(x, center))).max(0.0),
            Shape::HalfSpace { normal, offset } => (dot(normal, x) - offset).max(0.0),
            Shape::Ellipsoid { center, semi_axes } => {
                let level = ellipsoid_level(x, center, semi_axes);
                if level >= 1.0 {
                    return 0.0;
                }
                let grad: f64 = x
                    .iter()
                    .zip(center)
                    .zip(semi_axes)
                    .map(|((xi, ci), ai)| {
                        let g = 2.0 * (xi - ci) / (ai * ai);
                        g * g
                    })
                    .sum::<f64>();
                if grad == 0.0 {
                    return semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
                }
                (1.0 - level) / math::sqrt(grad)
            }
        }
    }

    /// True when `x` is in the closed domain and within the boundary
    /// tolerance of the boundary, or outside by at most the tolerance.
    pub fn on_boundary(&self, x: &[f64]) -> bool {
        let tol = self.boundary_tolerance();
        if self.contains(x) {
            self.depth(x) < tol
        } else {
            let mut p = vec![0.0; self.dim];
            self.project_into(x, &mut p) < tol
        }
    }

    /// Writes the nearest point of the domain into `out` and returns the
    /// distance. Interior points are copied unchanged. Allocation-free.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) -> f64 {
        match &self.shape {
            Shape::Interval { lo, hi } => {
                let p = x[0].clamp(*lo, *hi);
                out[0] = p;
                math::abs(x[0] - p)
            }
            Shape::Ball { center, radius } => {
                let r = math::sqrt(dist_sq(x, center));
                if r <= *radius {
                    out.copy_from_slice(x);
                    return 0.0;
                }
                let scale = radius / r;
                for i in 0..x.len() {
                    out[i] = center[i] + (x[i] - center[i]) * scale;
                }
                r - radius
            }
            Shape::HalfSpace { normal, offset } => {
                let gap = offset - dot(normal, x);
                if gap <= 0.0 {
                    out.copy_from_slice(x);
                    return 0.0;
                }
                for i in 0..x.len() {
                    out[i] = x[i] + gap * normal[i];
                }
                gap
            }
            Shape::Ellipsoid { center, semi_axes } => {
                if ellipsoid_level(x, center, semi_axes) <= 1.0 {
                    out.copy_from_slice(x);
                    return 0.0;
                }
                project_exterior_onto_ellipsoid(x, center, semi_axes, out);
                math::sqrt(dist_sq(x, out))
            }
        }
    }

    /// Nearest boundary point of an exterior or boundary point.
    ///
    /// Strictly interior points (farther than the boundary tolerance from
    /// the boundary) have no canonical nearest boundary point here and are
    /// rejected.
    pub fn project_to_boundary(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        if self.contains(x) {
            if self.depth(x) >= self.boundary_tolerance() {
                bail!(
                    Precondition,
                    "point {x:?} is strictly interior; projection is defined for exterior points"
                );
            }
            return Ok(x.to_vec());
        }
        let mut p = vec![0.0; self.dim];
        self.project_into(x, &mut p);
        Ok(p)
    }

    /// Inward unit normal at a point of the boundary, without tolerance
    /// checks. For ellipsoids and balls the normal is taken from the level
    /// set through `alpha`, which is exact on the boundary.
    pub fn normal_into(&self, alpha: &[f64], out: &mut [f64]) {
        match &self.shape {
            Shape::Interval { lo, hi } => {
                out[0] = if alpha[0] - lo <= hi - alpha[0] {
                    1.0
                } else {
                    -1.0
                };
            }
            Shape::Ball { center, .. } => {
                let r = math::sqrt(dist_sq(alpha, center));
                if r == 0.0 {
                    out.fill(0.0);
                    out[0] = 1.0;
                    return;
                }
                for i in 0..alpha.len() {
                    out[i] = (center[i] - alpha[i]) / r;
                }
            }
            Shape::HalfSpace { normal, .. } => out.copy_from_slice(normal),
            Shape::Ellipsoid { center, semi_axes } => {
                for i in 0..alpha.len() {
                    out[i] = -(alpha[i] - center[i]) / (semi_axes[i] * semi_axes[i]);
                }
                let n = norm(out);
                if n == 0.0 {
                    out.fill(0.0);
                    out[0] = 1.0;
                    return;
                }
                out.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    /// Inward unit normal `γ(α)`.
    pub fn inward_normal(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        self.check_point(alpha)?;
        if !self.on_boundary(alpha) {
            bail!(
                InvalidInput,
                "point {alpha:?} is not on the boundary (tolerance {})",
                self.boundary_tolerance()
            );
        }
        let mut n = vec![0.0; self.dim];
        self.normal_into(alpha, &mut n);
        Ok(n)
    }

    /// Boundary frame at a point within tolerance of the boundary.
    pub fn frame(&self, alpha: &[f64]) -> Result<BoundaryFrame> {
        let normal = self.inward_normal(alpha)?;
        Ok(BoundaryFrame {
            point: alpha.to_vec(),
            normal,
        })
    }

    /// `β₀(x) = ½∇d(x,D)² = x − π(x)`, zero inside the domain.
    pub fn beta0(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dim];
        self.beta0_into(x, &mut out);
        Ok(out)
    }

    /// Allocation-free `β₀`; `out` receives `x − π(x)`. Returns the distance.
    pub fn beta0_into(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let dist = self.project_into(x, out);
        for i in 0..x.len() {
            out[i] = x[i] - out[i];
        }
        dist
    }

    /// Shape operator `𝒮(α)η = −∇_η γ(α)` on a tangent vector, computed
    /// analytically per shape. Positive for convex boundaries: a sphere of
    /// radius `R` gives `η / R`.
    pub fn weingarten(&self, frame: &BoundaryFrame, eta: &[f64]) -> Result<Vec<f64>> {
        if eta.len() != self.dim || frame.normal.len() != self.dim {
            bail!(InvalidInput, "dimension mismatch in shape operator");
        }
        ensure_finite("tangent vector", eta)?;
        let along = dot(eta, &frame.normal);
        if math::abs(along) > 1e-10 * norm(eta).max(1.0) {
            bail!(
                Precondition,
                "vector {eta:?} is not tangent at {:?} (η·γ = {along:e})",
                frame.point
            );
        }
        let mut out = vec![0.0; self.dim];
        self.weingarten_into(frame, eta, &mut out);
        Ok(out)
    }

    /// Unchecked shape operator, for use on hot paths.
    pub fn weingarten_into(&self, frame: &BoundaryFrame, eta: &[f64], out: &mut [f64]) {
        match &self.shape {
            Shape::Interval { .. } | Shape::HalfSpace { .. } => out.fill(0.0),
            Shape::Ball { radius, .. } => {
                for i in 0..eta.len() {
                    out[i] = eta[i] / radius;
                }
            }
            Shape::Ellipsoid { center, semi_axes } => {
                // Outward normal field g/|g| with g = A⁻²(α − c); its
                // derivative along η is the tangential part of A⁻²η / |g|.
                let gnorm = math::sqrt(
                    frame
                        .point
                        .iter()
                        .zip(center)
                        .zip(semi_axes)
                        .map(|((a, c), s)| {
                            let g = (a - c) / (s * s);
                            g * g
                        })
                        .sum::<f64>(),
                );
                for i in 0..eta.len() {
                    out[i] = eta[i] / (semi_axes[i] * semi_axes[i]) / gnorm;
                }
                let along = dot(out, &frame.normal);
                for i in 0..eta.len() {
                    out[i] -= along * frame.normal[i];
                }
            }
        }
    }

    /// Corners of an axis-aligned box containing the domain. Half-spaces
    /// use a unit box sitting on the boundary plane.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            Shape::Interval { lo, hi } => (vec![*lo], vec![*hi]),
            Shape::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Shape::Ellipsoid { center, semi_axes } => (
                center.iter().zip(semi_axes).map(|(c, a)| c - a).collect(),
                center.iter().zip(semi_axes).map(|(c, a)| c + a).collect(),
            ),
            Shape::HalfSpace { normal, offset } => {
                let base: Vec<f64> = normal.iter().map(|n| n * offset).collect();
                (
                    base.iter().map(|b| b - 1.0).collect(),
                    base.iter()
                        .zip(normal)
                        .map(|(b, n)| b + 1.0 + 2.0 * n.max(0.0))
                        .collect(),
                )
            }
        }
    }

    /// Maps a point of the unit cube `[0,1]^d` to a boundary point, or
    /// `None` when the point is rejected. For curved shapes the cube point
    /// is read as a direction from the center.
    pub fn boundary_point_from_unit(&self, u: &[f64]) -> Option<BoundaryFrame> {
        let point = match &self.shape {
            Shape::Interval { lo, hi } => vec![if u[0] < 0.5 { *lo } else { *hi }],
            Shape::HalfSpace { normal, offset } => {
                let (lo, hi) = self.bounding_box();
                let x: Vec<f64> = (0..self.dim)
                    .map(|i| lo[i] + u[i] * (hi[i] - lo[i]))
                    .collect();
                let gap = offset - dot(normal, &x);
                x.iter().zip(normal).map(|(xi, ni)| xi + gap * ni).collect()
            }
            Shape::Ball { center, radius } => {
                let dir = unit_direction(u)?;
                center
                    .iter()
                    .zip(&dir)
                    .map(|(c, v)| c + radius * v)
                    .collect()
            }
            Shape::Ellipsoid { center, semi_axes } => {
                let dir = unit_direction(u)?;
                center
                    .iter()
                    .zip(semi_axes)
                    .zip(&dir)
                    .map(|((c, a), v)| c + a * v)
                    .collect()
            }
        };
        let mut normal = vec![0.0; self.dim];
        self.normal_into(&point, &mut normal);
        Some(BoundaryFrame { point, normal })
    }
}

impl BoundaryFrame {
    /// `N(α)v = (v·γ)γ`.
    pub fn project_normal(&self, v: &[f64]) -> Vec<f64> {
        let along = dot(v, &self.normal);
        self.normal.iter().map(|g| along * g).collect()
    }

    /// `N⊥(α)v = v − (v·γ)γ`.
    pub fn project_tangential(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        remove_normal_component(&mut out, &self.normal);
        out
    }
}

/// In-place `v ← v − (v·γ)γ`.
#[inline]
pub fn remove_normal_component(v: &mut [f64], normal: &[f64]) {
    if v.len() == 1 {
        // The tangent space of a one-dimensional boundary is {0}.
        v[0] = 0.0;
        return;
    }
    let along = dot(v, normal);
    for (vi, gi) in v.iter_mut().zip(normal) {
        *vi -= along * gi;
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn ellipsoid_level(x: &[f64], center: &[f64], semi_axes: &[f64]) -> f64 {
    x.iter()
        .zip(center)
        .zip(semi_axes)
        .map(|((xi, ci), ai)| {
            let s = (xi - ci) / ai;
            s * s
        })
        .sum()
}

/// Nearest point on `Σ(y_i/a_i)² = 1` for an exterior point.
///
/// The minimizer is `p_i = a_i² y_i / (a_i² + λ)` where the multiplier
/// `λ > 0` is the root of the decreasing convex function
/// `g(λ) = Σ (a_i y_i / (a_i² + λ))² − 1`. Newton from the left never
/// overshoots on such a function; bisection on the bracket is kept as a
/// fallback against rounding.
fn project_exterior_onto_ellipsoid(x: &[f64], center: &[f64], semi_axes: &[f64], out: &mut [f64]) {
    let d = x.len();
    let y_norm = math::sqrt(dist_sq(x, center));
    let a_max = semi_axes.iter().cloned().fold(0.0, f64::max);
    let g = |lam: f64| -> (f64, f64) {
        let mut value = -1.0;
        let mut deriv = 0.0;
        for i in 0..d {
            let a2 = semi_axes[i] * semi_axes[i];
            let yi = x[i] - center[i];
            let q = semi_axes[i] * yi / (a2 + lam);
            value += q * q;
            deriv -= 2.0 * q * q / (a2 + lam);
        }
        (value, deriv)
    };
    let mut lo = 0.0;
    let mut hi = a_max * y_norm;
    let mut lam = 0.0;
    for _ in 0..200 {
        let (value, deriv) = g(lam);
        if value > 0.0 {
            lo = lam;
        } else {
            hi = lam;
        }
        if math::abs(value) < 1e-15 || hi - lo <= 1e-16 * hi.max(1.0) {
            break;
        }
        let mut next = if deriv < 0.0 {
            lam - value / deriv
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        lam = next;
    }
    for i in 0..d {
        let a2 = semi_axes[i] * semi_axes[i];
        out[i] = center[i] + a2 * (x[i] - center[i]) / (a2 + lam);
    }
    debug_assert!(
        math::abs(ellipsoid_level(out, center, semi_axes) - 1.0) < ELLIPSOID_RESIDUAL,
        "{}",
        format!("ellipsoid projection residual too large at {x:?}")
    );
}

/// Direction on the unit sphere from a unit-cube point: the cube is mapped
/// to `[-1,1]^d` and points outside the unit ball (or too close to the
/// center) are rejected, which makes the direction uniform.
fn unit_direction(u: &[f64]) -> Option<Vec<f64>> {
    let v: Vec<f64> = u.iter().map(|c| 2.0 * c - 1.0).collect();
    let n = norm(&v);
    if !(0.05..=1.0).contains(&n) {
        return None;
    }
    Some(v.iter().map(|c| c / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_ball() -> Domain {
        Domain::ball(vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(unit_ball().distance(&[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(
            Domain::interval(0.0, 1.0)
                .unwrap()
                .distance(&[0.5])
                .unwrap(),
            0.0
        );
        let e = Domain::ellipsoid(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap();
        assert_abs_diff_eq!(e.distance(&[4.0, 0.0]).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn distance_rejects_non_finite() {
        assert!(unit_ball().distance(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(
            unit_ball().project_to_boundary(&[2.0, 0.0]).unwrap(),
            vec![1.0, 0.0]
        );
        assert_eq!(
            Domain::interval(0.0, 1.0)
                .unwrap()
                .project_to_boundary(&[-0.3])
                .unwrap(),
            vec![0.0]
        );
        assert_eq!(
            unit_ball().project_to_boundary(&[1.0, 0.0]).unwrap(),
            vec![1.0, 0.0]
        );
        assert!(matches!(
            unit_ball().project_to_boundary(&[0.2, 0.1]),
            Err(crate::Error::Precondition(_))
        ));
    }

    #[test]
    fn normal_examples() {
        assert_eq!(
            unit_ball().inward_normal(&[1.0, 0.0]).unwrap(),
            vec![-1.0, 0.0]
        );
        assert_eq!(
            Domain::interval(0.0, 1.0)
                .unwrap()
                .inward_normal(&[0.0])
                .unwrap(),
            vec![1.0]
        );
        let h = Domain::half_space(vec![0.0, 0.0, 1.0], 0.0, true).unwrap();
        assert_eq!(
            h.inward_normal(&[0.3, -2.0, 0.0]).unwrap(),
            vec![0.0, 0.0, 1.0]
        );
        assert!(matches!(
            unit_ball().inward_normal(&[0.5, 0.0]),
            Err(crate::Error::InvalidInput(_))
        ));
    }

    #[test]
    fn half_space_needs_test_flag() {
        assert!(Domain::half_space(vec![0.0, 1.0], 0.0, false).is_err());
        assert!(Domain::half_space(vec![0.0, 2.0], 0.0, true).is_err());
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(Domain::interval(1.0, 1.0).is_err());
        assert!(Domain::ball(vec![0.0], 0.0).is_err());
        assert!(Domain::ellipsoid(vec![0.0, 0.0], vec![1.0, -1.0]).is_err());
        assert!(Domain::ellipsoid(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn beta0_examples() {
        assert_eq!(unit_ball().beta0(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(unit_ball().beta0(&[0.1, 0.2]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            Domain::interval(0.0, 1.0).unwrap().beta0(&[1.25]).unwrap(),
            vec![0.25]
        );
    }

    #[test]
    fn projector_examples() {
        let frame = BoundaryFrame {
            point: vec![1.0, 0.0],
            normal: vec![-1.0, 0.0],
        };
        assert_eq!(frame.project_normal(&[3.0, 4.0]), vec![3.0, 0.0]);
        assert_eq!(frame.project_tangential(&[3.0, 4.0]), vec![0.0, 4.0]);
        assert_eq!(frame.project_normal(&[-1.0, 0.0]), vec![-1.0, 0.0]);
        assert_eq!(frame.project_tangential(&[-1.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(frame.project_normal(&[0.0, 2.0]), vec![0.0, 0.0]);
        let f1 = BoundaryFrame {
            point: vec![0.0],
            normal: vec![1.0],
        };
        assert_eq!(f1.project_tangential(&[7.5]), vec![0.0]);
    }

    #[test]
    fn weingarten_examples() {
        let b = Domain::ball(vec![0.0, 0.0, 0.0], 2.0).unwrap();
        let frame = b.frame(&[2.0, 0.0, 0.0]).unwrap();
        let s = b.weingarten(&frame, &[0.0, 1.0, -3.0]).unwrap();
        assert_eq!(s, vec![0.0, 0.5, -1.5]);

        let i = Domain::interval(0.0, 1.0).unwrap();
        let f = i.frame(&[1.0]).unwrap();
        assert_eq!(i.weingarten(&f, &[0.0]).unwrap(), vec![0.0]);

        let h = Domain::half_space(vec![0.0, 1.0], 0.0, true).unwrap();
        let f = h.frame(&[5.0, 0.0]).unwrap();
        assert_eq!(h.weingarten(&f, &[2.0, 0.0]).unwrap(), vec![0.0, 0.0]);

        assert!(matches!(
            b.weingarten(&frame, &[1.0, 0.0, 0.0]),
            Err(crate::Error::Precondition(_))
        ));
    }

    #[test]
    fn ellipsoid_weingarten_matches_curvature_at_vertex() {
        // At (a, 0) on x²/a² + y²/b² = 1 the curvature is a / b².
        let e = Domain::ellipsoid(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap();
        let frame = e.frame(&[2.0, 0.0]).unwrap();
        let s = e.weingarten(&frame, &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(s[1], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn ellipsoid_projection_residual() {
        let e = Domain::ellipsoid(vec![0.5, -1.0, 0.0], vec![3.0, 1.0, 0.25]).unwrap();
        for x in [
            [4.0, 0.0, 0.1],
            [0.5, 3.0, 2.0],
            [-9.0, -7.0, 5.0],
            [0.5, -1.0, 0.26],
        ] {
            let p = e.project_to_boundary(&x).unwrap();
            let level = ellipsoid_level(&p, &[0.5, -1.0, 0.0], &[3.0, 1.0, 0.25]);
            assert!((level - 1.0).abs() < ELLIPSOID_RESIDUAL, "{level}");
            // x − π(x) is along the outward normal at π(x).
            let n = e.inward_normal(&p).unwrap();
            let diff: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a - b).collect();
            let d = norm(&diff);
            for i in 0..3 {
                assert_abs_diff_eq!(diff[i], -d * n[i], epsilon = 1e-9);
            }
        }
    }
}
