//! Coefficient fields given as expressions in `x1, …, xd`.

use evalexpr::{
    build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node,
    Value,
};
use neumann_core::CoefficientField;

use crate::error::{AppError, AppResult};

type Expr = Node<DefaultNumericTypes>;

/// Drift, diffusion and their derivatives as parsed expressions. Functions
/// use the `math::` namespace of the expression language (`math::sin(x1)`).
/// Matrices are given row by row in the config and stored column-major.
pub struct ExpressionField {
    dim: usize,
    drift: Vec<Expr>,
    sigma: Vec<Expr>,
    drift_jacobian: Vec<Expr>,
    diffusion_jacobian: Option<Vec<Expr>>,
}

fn parse(src: &str) -> AppResult<Expr> {
    build_operator_tree::<DefaultNumericTypes>(src)
        .map_err(|e| AppError::Config(format!("expression `{src}`: {e}")))
}

fn parse_rows(rows: &[Vec<String>], dim: usize, what: &str) -> AppResult<Vec<Expr>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(AppError::Config(format!(
            "{what} must be a {dim}×{dim} matrix of expressions"
        )));
    }
    let mut out = Vec::with_capacity(dim * dim);
    for col in 0..dim {
        for row in rows {
            out.push(parse(&row[col])?);
        }
    }
    Ok(out)
}

impl ExpressionField {
    /// `diffusion_jacobian[j]` holds the rows of `(i, k) ↦ ∂_k σ_j^i`; when
    /// absent the diffusion is taken as constant.
    pub fn new(
        drift: &[String],
        sigma: &[Vec<String>],
        drift_jacobian: &[Vec<String>],
        diffusion_jacobian: Option<&[Vec<Vec<String>>]>,
    ) -> AppResult<Self> {
        let dim = drift.len();
        if dim == 0 {
            return Err(AppError::Config(
                "expression model needs a nonempty drift".into(),
            ));
        }
        let drift = drift
            .iter()
            .map(|s| parse(s))
            .collect::<AppResult<Vec<_>>>()?;
        let sigma = parse_rows(sigma, dim, "sigma")?;
        let drift_jacobian = parse_rows(drift_jacobian, dim, "drift_jacobian")?;
        let diffusion_jacobian = match diffusion_jacobian {
            None => None,
            Some(blocks) => {
                if blocks.len() != dim {
                    return Err(AppError::Config(format!(
                        "diffusion_jacobian needs {dim} blocks"
                    )));
                }
                let mut all = Vec::with_capacity(dim * dim * dim);
                for b in blocks {
                    all.extend(parse_rows(b, dim, "diffusion_jacobian block")?);
                }
                Some(all)
            }
        };
        let field = Self {
            dim,
            drift,
            sigma,
            drift_jacobian,
            diffusion_jacobian,
        };
        // Catch unknown names and non-numeric results up front.
        let probe = vec![0.1; dim];
        let ctx = field.context(&probe);
        for e in field.all() {
            e.eval_number_with_context(&ctx)
                .map_err(|err| AppError::Config(format!("expression `{e}`: {err}")))?;
        }
        Ok(field)
    }

    fn all(&self) -> impl Iterator<Item = &Expr> {
        self.drift
            .iter()
            .chain(&self.sigma)
            .chain(&self.drift_jacobian)
            .chain(self.diffusion_jacobian.iter().flatten())
    }

    fn context(&self, x: &[f64]) -> HashMapContext<DefaultNumericTypes> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        for (i, v) in x.iter().enumerate() {
            ctx.set_value(format!("x{}", i + 1), Value::Float(*v))
                .expect("fresh variable");
        }
        if x.len() == 1 {
            ctx.set_value("x".into(), Value::Float(x[0]))
                .expect("fresh variable");
        }
        ctx
    }

    fn eval(&self, exprs: &[Expr], x: &[f64], out: &mut [f64]) {
        let ctx = self.context(x);
        for (o, e) in out.iter_mut().zip(exprs) {
            *o = e.eval_number_with_context(&ctx).unwrap_or(f64::NAN);
        }
    }
}

impl CoefficientField for ExpressionField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        self.eval(&self.drift, x, out)
    }
    fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        self.eval(&self.sigma, x, out)
    }
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        self.eval(&self.drift_jacobian, x, out)
    }
    fn diffusion_jacobian(&self, x: &[f64], out: &mut [f64]) {
        match &self.diffusion_jacobian {
            Some(e) => self.eval(e, x, out),
            None => out.fill(0.0),
        }
    }
    fn constant_diffusion(&self) -> bool {
        self.diffusion_jacobian.is_none()
    }
}
