//! Order-stable reductions and small regression helpers.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math;

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if math::abs(self.sum) >= math::abs(value) {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Mean and standard error (sample standard deviation over `√count`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    /// Two-pass mean and standard error; a constant sample has `se == 0`
    /// exactly. A single sample reports `se = 0`.
    pub fn from_samples<I>(samples: I) -> Self
    where
        I: IntoIterator<Item = f64>,
        I::IntoIter: Clone,
    {
        let it = samples.into_iter();
        let mut count = 0usize;
        let mut acc = CompensatedSum::default();
        for v in it.clone() {
            acc.add(v);
            count += 1;
        }
        if count == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                count,
            };
        }
        let mean = acc.value() / count as f64;
        if count == 1 {
            return Self {
                mean,
                se: 0.0,
                count,
            };
        }
        let ss = compensated_sum(it.map(|v| (v - mean) * (v - mean)));
        let var = ss / (count - 1) as f64;
        Self {
            mean,
            se: math::sqrt(var / count as f64),
            count,
        }
    }

    pub fn within(&self, target: f64, z: f64, allowance: f64) -> bool {
        math::abs(self.mean - target) <= z * self.se + allowance
    }
}

/// Combined standard error of two independent estimates.
pub fn combined_se(a: f64, b: f64) -> f64 {
    math::sqrt(a * a + b * b)
}

/// Weighted least-squares line `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the supplied per-point errors.
    pub slope_se: f64,
}

/// Fits `y` against `x` with weights `1/σ²`; points with `σ = 0` get unit
/// weight. At least two distinct abscissae are required.
pub fn weighted_line_fit(x: &[f64], y: &[f64], sigma: &[f64]) -> Result<LineFit> {
    if x.len() < 2 || x.len() != y.len() || x.len() != sigma.len() {
        bail!(
            DegenerateData,
            "line fit needs at least two matching points"
        );
    }
    let w: Vec<f64> = sigma
        .iter()
        .map(|s| if *s > 0.0 { 1.0 / (s * s) } else { 1.0 })
        .collect();
    let sw = compensated_sum(w.iter().copied());
    let sx = compensated_sum(w.iter().zip(x).map(|(w, x)| w * x));
    let sy = compensated_sum(w.iter().zip(y).map(|(w, y)| w * y));
    let sxx = compensated_sum(w.iter().zip(x).map(|(w, x)| w * x * x));
    let sxy = compensated_sum(w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y));
    let det = sw * sxx - sx * sx;
    if !(det > 0.0) {
        bail!(DegenerateData, "line fit abscissae are not distinct");
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    Ok(LineFit {
        slope,
        intercept,
        slope_se: math::sqrt(sw / det),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_have_zero_se() {
        let s = MeanSe::from_samples([1.0; 1000].iter().copied());
        assert_eq!(s.mean, 1.0);
        assert_eq!(s.se, 0.0);
    }

    #[test]
    fn compensation_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v.iter().copied()), 2.0);
    }

    #[test]
    fn exact_line() {
        let fit = weighted_line_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0], &[0.1, 0.1, 0.1]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-14);
        assert!((fit.intercept - 1.0).abs() < 1e-14);
        assert!(weighted_line_fit(&[1.0, 1.0], &[0.0, 1.0], &[1.0, 1.0]).is_err());
    }
}
