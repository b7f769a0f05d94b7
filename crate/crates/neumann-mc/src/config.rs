//! Experiment configuration (TOML, or JSON with the same structure).

use std::path::Path;

use neumann_core::estimator::{DirectionFactor, NeumannTestFunction, Scheme};
use neumann_core::model::{
    ConstantInitial, CosineMode, GaussianBump, LinearDriftField, LinearInitial, RadialCosine,
    VarSigmaField,
};
use neumann_core::{CoefficientField, Domain, InitialCondition, JumpMode};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::expression::ExpressionField;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub model: ModelConfig,
    pub initial: InitialConfig,
    pub penalized: Option<PenalizedConfig>,
    pub reflected: Option<ReflectedConfig>,
    pub estimate: EstimateConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    pub convergence: Option<ConvergenceConfig>,
    pub excursions: Option<ExcursionsConfig>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
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
    /// `{x : normal·x ≥ offset}`; unbounded, so only accepted with
    /// `test_only = true`.
    HalfSpace {
        normal: Vec<f64>,
        offset: f64,
        #[serde(default)]
        test_only: bool,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// `b = 0`, `σ = scale·Id`.
    Brownian {
        dim: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `b(x) = Bx + c`, constant `σ`; matrices row by row.
    Linear {
        drift_matrix: Vec<Vec<f64>>,
        #[serde(default)]
        drift_offset: Option<Vec<f64>>,
        sigma: Vec<Vec<f64>>,
    },
    /// Built-in field with state-dependent diffusion.
    Varsigma { dim: usize, kappa: f64 },
    /// Expressions in `x1..xd` (and `x` in one dimension).
    Expression {
        drift: Vec<String>,
        sigma: Vec<Vec<String>>,
        drift_jacobian: Vec<Vec<String>>,
        #[serde(default)]
        diffusion_jacobian: Option<Vec<Vec<Vec<String>>>>,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Cosine {
        k: u32,
        #[serde(default)]
        axis: usize,
        lo: f64,
        hi: f64,
    },
    RadialCosine {
        k: u32,
        center: Vec<f64>,
        radius: f64,
    },
    Constant {
        value: f64,
    },
    Linear {
        weights: Vec<f64>,
    },
    Gaussian {
        center: Vec<f64>,
        width: f64,
        amplitude: f64,
    },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PenalizedConfig {
    pub n: f64,
    /// Defaults to `0.1 / n`.
    pub dt: Option<f64>,
    pub paths: Option<usize>,
    #[serde(default)]
    pub record_full_path: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Project,
    Excursion,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectedConfig {
    pub dt: f64,
    pub paths: Option<usize>,
    #[serde(default = "project")]
    pub mode: ModeName,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub record_full_path: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Reflected,
    Penalized,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub x: Vec<f64>,
    pub t: f64,
    pub paths: usize,
    pub seed: u64,
    #[serde(default = "reflected")]
    pub scheme: SchemeName,
    /// Several schemes on the same problem; overrides `scheme`.
    #[serde(default)]
    pub schemes: Vec<SchemeName>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleName {
    /// Closed-form cosine mode on an interval.
    Series,
    /// Crank–Nicolson grid solution on an interval.
    CrankNicolson,
    /// Gradient system against the grid derivative, and grid convergence.
    GridConsistency,
    /// Radial reduction on a ball.
    Radial,
    /// Central finite differences of the value on common noise.
    FiniteDifference,
    /// `exp(Bᵀt)w` for a linear drift and linear datum.
    FreeJacobian,
    /// Pairwise agreement of the configured schemes.
    SchemeAgreement,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub run: Vec<OracleName>,
    /// Bias allowance added to `z·SE` in oracle comparisons.
    pub allowance: f64,
    pub z: f64,
    pub grid_points: usize,
    pub grid_steps: usize,
    pub fd_epsilon: f64,
    pub fd_paths: Option<usize>,
    pub fd_seed: Option<u64>,
    /// Also run the finite difference on independent noise and require a
    /// smaller standard error on common noise.
    pub fd_independent: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            run: Vec::new(),
            allowance: 0.02,
            z: 3.0,
            grid_points: 801,
            grid_steps: 2000,
            fd_epsilon: 1e-3,
            fd_paths: None,
            fd_seed: None,
            fd_independent: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            formats: vec![Format::Json, Format::Csv],
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub ellipticity_threshold: f64,
    pub noncharacteristic_threshold: f64,
    pub shell_width: f64,
    pub samples: usize,
    pub derivative_step: f64,
    pub derivative_tolerance: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            ellipticity_threshold: 1e-3,
            noncharacteristic_threshold: 1e-3,
            shell_width: 0.05,
            samples: 256,
            derivative_step: 1e-5,
            derivative_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Dt,
    N,
    Epsilon,
    Paths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Gradient,
    Value,
    LocalTime,
    OccupationMoment,
    JacobianMoment,
    Dirichlet,
    MartingaleResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorName {
    Linear,
    Quadratic,
}

/// Member of the Neumann test family `c_g g + c_ψ ψ h(ν)`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionConfig {
    pub k: u32,
    pub g_weight: f64,
    pub psi_weight: f64,
    pub factor: FactorName,
    /// Weights of the linear factor; defaults to the first axis.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default = "gradient")]
    pub quantity: Quantity,
    /// `n·Δt` for penalty sweeps.
    #[serde(default = "tenth")]
    pub penalty_step: f64,
    /// Largest accepted slope for the occupation-moment fit.
    #[serde(default = "minus_one_and_half")]
    pub max_slope: f64,
    /// Largest accepted ratio of the last to the first Jacobian moment.
    #[serde(default = "two")]
    pub max_ratio: f64,
    /// Boundary point for the Dirichlet check; defaults to `estimate.x`.
    #[serde(default)]
    pub boundary_point: Option<Vec<f64>>,
    #[serde(default)]
    pub test_functions: Vec<TestFunctionConfig>,
    /// Jacobian direction for the residual; defaults to the first axis.
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    #[serde(default = "one_usize")]
    pub record_every: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExcursionsConfig {
    pub paths: usize,
    #[serde(default)]
    pub epsilon: f64,
    /// Split point for the composition check, as a fraction of `t`.
    #[serde(default = "half")]
    pub split: f64,
    /// Number of leading paths whose excursions are written to CSV.
    #[serde(default = "one_usize")]
    pub dump_paths: usize,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn half() -> f64 {
    0.5
}
fn tenth() -> f64 {
    0.1
}
fn minus_one_and_half() -> f64 {
    -1.5
}
fn one_usize() -> usize {
    1
}
fn project() -> ModeName {
    ModeName::Project
}
fn reflected() -> SchemeName {
    SchemeName::Reflected
}
fn gradient() -> Quantity {
    Quantity::Gradient
}

fn to_column_major(rows: &[Vec<f64>], what: &str) -> AppResult<(usize, Vec<f64>)> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(AppError::Config(format!(
            "{what} must be a nonempty square matrix"
        )));
    }
    let mut out = vec![0.0; d * d];
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[j * d + i] = *v;
        }
    }
    Ok((d, out))
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| AppError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> AppResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> AppResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Structural checks that need no simulation.
    pub fn check(&self) -> AppResult<()> {
        let bad = |m: String| Err(AppError::Config(m));
        let domain = self.domain()?;
        let d = domain.dim();
        let field = self.field()?;
        if field.dim() != d {
            return bad(format!(
                "model dimension {} differs from domain dimension {d}",
                field.dim()
            ));
        }
        let initial = self.initial()?;
        if initial.dim() != d {
            return bad(format!(
                "initial condition dimension {} differs from domain dimension {d}",
                initial.dim()
            ));
        }
        let e = &self.estimate;
        if e.x.len() != d {
            return bad(format!(
                "estimate.x has dimension {}, expected {d}",
                e.x.len()
            ));
        }
        if !(e.t > 0.0) || !e.t.is_finite() {
            return bad(format!("estimate.t must be positive, got {}", e.t));
        }
        if e.paths == 0 {
            return bad("estimate.paths must be at least 1".into());
        }
        for s in self.schemes() {
            match s {
                SchemeName::Penalized if self.penalized.is_none() => {
                    return bad("scheme `penalized` needs a [penalized] section".into())
                }
                SchemeName::Reflected if self.reflected.is_none() => {
                    return bad("scheme `reflected` needs a [reflected] section".into())
                }
                _ => {}
            }
        }
        if let Some(p) = &self.penalized {
            if !(p.n > 0.0) || p.dt.is_some_and(|dt| !(dt > 0.0)) || p.paths == Some(0) {
                return bad("[penalized] needs n > 0, dt > 0 and paths ≥ 1".into());
            }
        }
        if let Some(r) = &self.reflected {
            if !(r.dt > 0.0) || !(r.epsilon >= 0.0) || r.paths == Some(0) {
                return bad("[reflected] needs dt > 0, epsilon ≥ 0 and paths ≥ 1".into());
            }
        }
        if self.oracle.fd_paths == Some(0)
            || !(self.oracle.fd_epsilon > 0.0)
            || self.oracle.grid_points < 3
        {
            return bad("[oracle] needs fd_paths ≥ 1, fd_epsilon > 0 and grid_points ≥ 3".into());
        }
        if let Some(c) = &self.convergence {
            if c.values.is_empty() || c.values.iter().any(|v| !(*v > 0.0)) {
                return bad("[convergence] values must be positive and nonempty".into());
            }
            for tf in &c.test_functions {
                self.test_function(tf)?;
            }
        }
        if let Some(x) = &self.excursions {
            if x.paths == 0 || !(x.split > 0.0 && x.split < 1.0) {
                return bad("[excursions] needs paths ≥ 1 and 0 < split < 1".into());
            }
        }
        if self.output.formats.is_empty() {
            return bad("[output] formats must not be empty".into());
        }
        Ok(())
    }

    pub fn domain(&self) -> AppResult<Domain> {
        Ok(match &self.domain {
            DomainConfig::Interval { lo, hi } => Domain::interval(*lo, *hi)?,
            DomainConfig::Ball { center, radius } => Domain::ball(center.clone(), *radius)?,
            DomainConfig::Ellipsoid { center, semi_axes } => {
                Domain::ellipsoid(center.clone(), semi_axes.clone())?
            }
            DomainConfig::HalfSpace {
                normal,
                offset,
                test_only,
            } => Domain::half_space(normal.clone(), *offset, *test_only)?,
        })
    }

    pub fn field(&self) -> AppResult<Box<dyn CoefficientField>> {
        Ok(match &self.model {
            ModelConfig::Brownian { dim, scale } => {
                Box::new(LinearDriftField::brownian(*dim, *scale)?)
            }
            ModelConfig::Linear {
                drift_matrix,
                drift_offset,
                sigma,
            } => {
                let (d, b) = to_column_major(drift_matrix, "drift_matrix")?;
                let (ds, s) = to_column_major(sigma, "sigma")?;
                if ds != d {
                    return Err(AppError::Config(
                        "drift_matrix and sigma sizes differ".into(),
                    ));
                }
                let c = drift_offset.clone().unwrap_or_else(|| vec![0.0; d]);
                Box::new(LinearDriftField::new(b, c, s)?)
            }
            ModelConfig::Varsigma { dim, kappa } => Box::new(VarSigmaField::new(*dim, *kappa)?),
            ModelConfig::Expression {
                drift,
                sigma,
                drift_jacobian,
                diffusion_jacobian,
            } => Box::new(ExpressionField::new(
                drift,
                sigma,
                drift_jacobian,
                diffusion_jacobian.as_deref(),
            )?),
        })
    }

    pub fn initial(&self) -> AppResult<Box<dyn InitialCondition>> {
        let d = self.domain()?.dim();
        Ok(match &self.initial {
            InitialConfig::Cosine { k, axis, lo, hi } => {
                if *axis >= d || !(hi > lo) {
                    return Err(AppError::Config(
                        "cosine initial needs axis < dim and lo < hi".into(),
                    ));
                }
                Box::new(CosineMode {
                    dim: d,
                    axis: *axis,
                    k: *k,
                    lo: *lo,
                    hi: *hi,
                })
            }
            InitialConfig::RadialCosine { k, center, radius } => {
                if !(*radius > 0.0) {
                    return Err(AppError::Config(
                        "radial_cosine needs a positive radius".into(),
                    ));
                }
                Box::new(RadialCosine {
                    center: center.clone(),
                    radius: *radius,
                    k: *k,
                })
            }
            InitialConfig::Constant { value } => Box::new(ConstantInitial {
                dim: d,
                value: *value,
            }),
            InitialConfig::Linear { weights } => Box::new(LinearInitial {
                weights: weights.clone(),
            }),
            InitialConfig::Gaussian {
                center,
                width,
                amplitude,
            } => Box::new(GaussianBump {
                center: center.clone(),
                width: *width,
                amplitude: *amplitude,
            }),
        })
    }

    /// Schemes requested by `[estimate]`, in order.
    pub fn schemes(&self) -> Vec<SchemeName> {
        if self.estimate.schemes.is_empty() {
            vec![self.estimate.scheme]
        } else {
            self.estimate.schemes.clone()
        }
    }

    pub fn scheme(&self, name: SchemeName) -> AppResult<Scheme> {
        match name {
            SchemeName::Penalized => {
                let p = self
                    .penalized
                    .as_ref()
                    .ok_or_else(|| AppError::Config("missing [penalized] section".into()))?;
                Ok(Scheme::Penalized {
                    penalty: p.n,
                    dt: p.dt.unwrap_or(0.1 / p.n),
                })
            }
            SchemeName::Reflected => {
                let r = self
                    .reflected
                    .as_ref()
                    .ok_or_else(|| AppError::Config("missing [reflected] section".into()))?;
                let mode = match r.mode {
                    ModeName::Project => JumpMode::ProjectEveryContact,
                    ModeName::Excursion => JumpMode::EpsilonExcursion { epsilon: r.epsilon },
                };
                Ok(Scheme::Reflected { dt: r.dt, mode })
            }
        }
    }

    /// Path count for a scheme: its own section, else `[estimate]`.
    pub fn paths(&self, name: SchemeName) -> usize {
        let own = match name {
            SchemeName::Penalized => self.penalized.as_ref().and_then(|p| p.paths),
            SchemeName::Reflected => self.reflected.as_ref().and_then(|r| r.paths),
        };
        own.unwrap_or(self.estimate.paths)
    }

    pub fn test_function(&self, tf: &TestFunctionConfig) -> AppResult<NeumannTestFunction> {
        let domain = self.domain()?;
        let factor = match tf.factor {
            FactorName::Quadratic => DirectionFactor::Quadratic,
            FactorName::Linear => {
                let mut e = vec![0.0; domain.dim()];
                e[0] = 1.0;
                DirectionFactor::Linear(tf.weights.clone().unwrap_or(e))
            }
        };
        Ok(NeumannTestFunction::new(
            &domain,
            tf.k,
            tf.g_weight,
            tf.psi_weight,
            factor,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [domain]
        kind = "interval"
        lo = 0.0
        hi = 1.0

        [model]
        kind = "brownian"
        dim = 1

        [initial]
        kind = "cosine"
        k = 1
        lo = 0.0
        hi = 1.0

        [reflected]
        dt = 1e-3

        [estimate]
        x = [0.3]
        t = 0.2
        paths = 100
        seed = 7
    "#;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.schemes(), vec![SchemeName::Reflected]);
        assert_eq!(cfg.output.formats, vec![Format::Json, Format::Csv]);
        assert!(matches!(
            cfg.scheme(SchemeName::Reflected).unwrap(),
            Scheme::Reflected { .. }
        ));
    }

    #[test]
    fn json_matches_toml() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    #[test]
    fn zero_paths_rejected() {
        let text = MINIMAL.replace("paths = 100", "paths = 0");
        assert!(matches!(
            ExperimentConfig::from_toml(&text),
            Err(AppError::Config(_))
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let text = MINIMAL.replace("dim = 1", "dim = 2");
        assert!(matches!(
            ExperimentConfig::from_toml(&text),
            Err(AppError::Config(_))
        ));
    }

    #[test]
    fn missing_seed_rejected() {
        let text = MINIMAL.replace("seed = 7", "");
        assert!(matches!(
            ExperimentConfig::from_toml(&text),
            Err(AppError::Config(_))
        ));
    }

    #[test]
    fn row_major_matrices() {
        let (d, m) = to_column_major(&[vec![1.0, 2.0], vec![3.0, 4.0]], "m").unwrap();
        assert_eq!(d, 2);
        assert_eq!(m, vec![1.0, 3.0, 2.0, 4.0]);
    }
}
