//! Grid and Monte Carlo estimators against independent closed forms.

use std::f64::consts::PI;

use neumann_core::estimator::{estimate_gradient, estimate_value};
use neumann_core::model::{CosineMode, LinearDriftField, VarSigmaField};
use neumann_core::oracle::{
    crank_nicolson_neumann_1d, gradient_system_1d, mc_finite_difference_gradient, radial_ball,
    Coupling, GridSpec,
};
use neumann_core::penalized::{occupation_moment_study, PenaltySweep};
use neumann_core::{
    Domain, InitialCondition, JumpMode, NoiseStream, PenalizedScheme, Problem, Scheme, Sequential,
};

/// Neumann heat semigroup on [0, 1] applied to cos(kπx), σ = 1.
fn heat_mode(k: u32, t: f64, x: f64) -> (f64, f64) {
    let w = k as f64 * PI;
    let decay = (-0.5 * w * w * t).exp();
    (decay * (w * x).cos(), -decay * w * (w * x).sin())
}

/// E X_t for reflected Brownian motion on [0, 1] started at x.
fn reflected_mean(x: f64, t: f64) -> f64 {
    let mut sum = 0.5;
    for j in 0..200 {
        let k = (2 * j + 1) as f64;
        sum -= 4.0 / (k * PI).powi(2) * (k * PI * x).cos() * (-0.5 * (k * PI).powi(2) * t).exp();
    }
    sum
}

fn unit() -> Domain {
    Domain::interval(0.0, 1.0).unwrap()
}

fn grid(points: usize) -> GridSpec {
    GridSpec {
        lo: 0.0,
        hi: 1.0,
        points,
    }
}

fn node_of(points: usize, x: f64) -> usize {
    (x * (points - 1) as f64).round() as usize
}

#[test]
fn crank_nicolson_is_second_order_on_a_mode() {
    let f = LinearDriftField::brownian(1, 1.0).unwrap();
    let init = CosineMode::interval(1, 0.0, 1.0);
    let (t, x) = (0.2, 0.3);
    let exact = heat_mode(1, t, x).0;
    let err = |p: usize, steps: usize| {
        let sol = crank_nicolson_neumann_1d(&f, &init, t, grid(p), steps).unwrap();
        (sol.u.values[node_of(p, x)] - exact).abs()
    };
    let (e1, e2, e3) = (err(51, 100), err(101, 200), err(201, 400));
    assert!(e1 / e2 >= 3.5, "{e1} {e2}");
    assert!(e2 / e3 >= 3.5, "{e2} {e3}");
}

#[test]
fn gradient_system_agrees_with_grid_derivative() {
    let brownian = LinearDriftField::brownian(1, 1.0).unwrap();
    let varsigma = VarSigmaField::new(1, 0.4).unwrap();
    let init = CosineMode::interval(1, 0.0, 1.0);
    for field in [&brownian as &dyn neumann_core::CoefficientField, &varsigma] {
        let p = 401;
        let h = 1.0 / (p - 1) as f64;
        let u = crank_nicolson_neumann_1d(field, &init, 0.2, grid(p), 1000).unwrap();
        let w = gradient_system_1d(field, &init, 0.2, grid(p), 1000).unwrap();
        let gap = (1..p - 1)
            .map(|i| (u.du.values[i] - w.values[i]).abs())
            .fold(0.0, f64::max);
        assert!(gap <= 5.0 * h * h + 1e-8, "gap {gap}");
    }
}

#[test]
fn gradient_system_matches_the_mode_derivative() {
    let f = LinearDriftField::brownian(1, 1.0).unwrap();
    let init = CosineMode::interval(2, 0.0, 1.0);
    let w = gradient_system_1d(&f, &init, 0.1, grid(801), 2000).unwrap();
    for x in [0.1, 0.3, 0.65] {
        let exact = heat_mode(2, 0.1, x).1;
        assert!((w.values[node_of(801, x)] - exact).abs() < 1e-4);
    }
}

#[test]
fn radial_reduction_keeps_the_first_radial_eigenfunction() {
    // In three dimensions sin(μr)/(μr) has zero slope at r = 1 when
    // tan μ = μ.
    let mu = 4.493_409_457_909_064;
    let profile = |r: f64| {
        if r == 0.0 {
            1.0
        } else {
            (mu * r).sin() / (mu * r)
        }
    };
    let t = 0.05;
    let sol = radial_ball(3, 1.0, 1.0, profile, t, 801, 2000).unwrap();
    let decay = (-0.5 * mu * mu * t).exp();
    for r in [0.0, 0.25, 0.5, 0.9] {
        let got = sol.u.values[node_of(801, r)];
        assert!((got - decay * profile(r)).abs() < 1e-4, "r {r}: {got}");
    }
}

#[test]
fn reflected_gradient_matches_the_mode() {
    let d = unit();
    let f = LinearDriftField::brownian(1, 1.0).unwrap();
    let init = CosineMode::interval(1, 0.0, 1.0);
    let p = Problem {
        domain: &d,
        field: &f,
        initial: &init,
        scheme: Scheme::Reflected {
            dt: 1e-3,
            mode: JumpMode::default(),
        },
    };
    let (u, v) = heat_mode(1, 0.2, 0.3);
    let est = estimate_gradient(&p, &[0.3], 0.2, 20_000, 11, &Sequential).unwrap();
    assert!(est.value.within(u, 3.0, 0.02), "{:?}", est.value);
    // The projected scheme has weak order one half for the gradient, so the
    // bias at this step is a few hundredths and grows with the step.
    assert!(
        est.component(0).within(v, 3.0, 0.1),
        "{:?}",
        est.component(0)
    );
    let coarse_problem = Problem {
        scheme: p.scheme.with_dt(1e-2),
        ..p
    };
    let coarse = estimate_gradient(&coarse_problem, &[0.3], 0.2, 20_000, 11, &Sequential).unwrap();
    assert!((coarse.components[0] - v).abs() > (est.components[0] - v).abs());
}

#[test]
fn reflected_mean_position_matches_series() {
    let d = unit();
    let f = LinearDriftField::brownian(1, 1.0).unwrap();
    let init = neumann_core::model::LinearInitial { weights: vec![1.0] };
    let p = Problem {
        domain: &d,
        field: &f,
        initial: &init,
        scheme: Scheme::Reflected {
            dt: 1e-3,
            mode: JumpMode::default(),
        },
    };
    for t in [0.1, 0.5, 2.0] {
        let est = estimate_value(&p, &[0.2], t, 10_000, 3, &Sequential).unwrap();
        assert!(
            est.value.within(reflected_mean(0.2, t), 3.0, 0.01),
            "t {t}: {:?}",
            est.value
        );
    }
}

#[test]
fn common_noise_beats_independent_noise() {
    let d = unit();
    let f = LinearDriftField::brownian(1, 1.0).unwrap();
    let init = CosineMode::interval(1, 0.0, 1.0);
    let p = Problem {
        domain: &d,
        field: &f,
        initial: &init,
        scheme: Scheme::Reflected {
            dt: 1e-3,
            mode: JumpMode::default(),
        },
    };
    let crn = mc_finite_difference_gradient(
        &p,
        &[0.3],
        &[1.0],
        1e-2,
        0.2,
        2000,
        5,
        Coupling::Common,
        &Sequential,
    )
    .unwrap();
    let ind = mc_finite_difference_gradient(
        &p,
        &[0.3],
        &[1.0],
        1e-2,
        0.2,
        2000,
        5,
        Coupling::Independent,
        &Sequential,
    )
    .unwrap();
    assert!(crn.se * 5.0 < ind.se, "{} vs {}", crn.se, ind.se);
    assert!(crn.within(heat_mode(1, 0.2, 0.3).1, 3.0, 0.05));
}

#[test]
fn occupation_shrinks_with_the_penalty() {
    let d = unit();
    let f = LinearDriftField::brownian(1, 1.0).unwrap();
    let sweep = PenaltySweep {
        domain: &d,
        field: &f,
        start: &[0.9],
        horizon: 1.0,
        paths: 2000,
        seed: 4,
        penalty_step: 0.1,
    };
    let study = occupation_moment_study(&sweep, &[10.0, 100.0, 1000.0], &Sequential).unwrap();
    let means: Vec<f64> = study.rows.iter().map(|r| r.mean_occupation.mean).collect();
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    assert!(study.slope < -1.0, "slope {}", study.slope);
}

#[test]
fn penalized_position_tends_to_the_reflected_mean() {
    let d = unit();
    let f = LinearDriftField::brownian(1, 1.0).unwrap();
    let target = reflected_mean(0.2, 0.5);
    let mut gaps = Vec::new();
    for n in [10.0, 1000.0] {
        let s = PenalizedScheme::new(&d, &f, n, 0.1 / n).unwrap();
        let mut sum = 0.0;
        let paths = 4000;
        for p in 0..paths {
            sum += s
                .simulate(&[0.2], 0.5, &mut NoiseStream::new(8, p))
                .unwrap()
                .position[0];
        }
        gaps.push((sum / paths as f64 - target).abs());
    }
    assert!(gaps[1] < gaps[0] && gaps[1] < 0.02, "{gaps:?}");
}

#[test]
fn flow_ratio_approaches_the_jacobian() {
    // On a flat boundary the penalty is piecewise linear, so away from the
    // kink the difference quotient of the discrete flow is its Jacobian.
    let d = unit();
    let f = VarSigmaField::new(1, 0.4).unwrap();
    let s = PenalizedScheme::new(&d, &f, 50.0, 2e-3).unwrap();
    let mean_gap = |eps: f64| {
        let mut total = 0.0;
        for p in 0..200 {
            let noise = NoiseStream::new(21, p);
            let ratio = s.flow_ratio(&[0.8], &[1.0], eps, 0.5, &noise).unwrap();
            let jac = s
                .simulate(&[0.8], 0.5, &mut noise.clone())
                .unwrap()
                .jacobian;
            total += (ratio[0] - jac[0]).abs();
        }
        total / 200.0
    };
    let gaps = [mean_gap(1e-2), mean_gap(1e-3), mean_gap(1e-4)];
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(mean_gap(1e-6) < 1e-2);
}

#[test]
fn constant_datum_has_zero_gradient_on_every_path() {
    let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
    let f = VarSigmaField::new(2, 0.4).unwrap();
    let init = neumann_core::model::ConstantInitial { dim: 2, value: 2.5 };
    for scheme in [
        Scheme::Penalized {
            penalty: 100.0,
            dt: 1e-3,
        },
        Scheme::Reflected {
            dt: 1e-3,
            mode: JumpMode::default(),
        },
    ] {
        let p = Problem {
            domain: &d,
            field: &f,
            initial: &init,
            scheme,
        };
        let est = estimate_gradient(&p, &[0.5, 0.5], 0.3, 200, 1, &Sequential).unwrap();
        assert_eq!(est.components, vec![0.0, 0.0]);
        assert_eq!(est.value.mean, init.value(&[0.0, 0.0]));
    }
}
