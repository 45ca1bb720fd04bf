use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};

/// Classic Lorenz parameters.
pub const LORENZ_SIGMA: f64 = 10.0;
pub const LORENZ_RHO: f64 = 28.0;
pub const LORENZ_BETA: f64 = 8.0 / 3.0;

/// The vector fields the laboratory knows how to integrate.
#[derive(Clone, Debug, PartialEq)]
pub enum SystemKind {
    Lorenz { sigma: f64, rho: f64, beta: f64 },
    /// X(x) = A x.
    Linear { matrix: DMatrix<f64> },
    /// Planar rotation X(x, y) = omega (-y, x).
    Rotation { omega: f64 },
}

/// A smooth vector field with an analytic Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSystem {
    name: String,
    params: BTreeMap<String, f64>,
    kind: SystemKind,
}

impl FlowSystem {
    pub fn lorenz(sigma: f64, rho: f64, beta: f64) -> Self {
        let params = [("sigma", sigma), ("rho", rho), ("beta", beta)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Self {
            name: "lorenz".into(),
            params,
            kind: SystemKind::Lorenz { sigma, rho, beta },
        }
    }

    /// Lorenz with sigma = 10, rho = 28, beta = 8/3.
    pub fn classic_lorenz() -> Self {
        Self::lorenz(LORENZ_SIGMA, LORENZ_RHO, LORENZ_BETA)
    }

    pub fn linear(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Input(format!(
                "linear system matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.nrows() < 2 {
            return Err(Error::Input("systems need dim >= 2".into()));
        }
        let mut params = BTreeMap::new();
        for i in 0..matrix.nrows() {
            for j in 0..matrix.ncols() {
                params.insert(format!("a{i}{j}"), matrix[(i, j)]);
            }
        }
        Ok(Self {
            name: "linear".into(),
            params,
            kind: SystemKind::Linear { matrix },
        })
    }

    /// Diagonal linear system, the usual saddle oracle.
    pub fn linear_diagonal(rates: &[f64]) -> Result<Self> {
        Self::linear(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(
            rates,
        )))
    }

    pub fn rotation(omega: f64) -> Self {
        let mut params = BTreeMap::new();
        params.insert("omega".to_string(), omega);
        Self {
            name: "rotation".into(),
            params,
            kind: SystemKind::Rotation { omega },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn kind(&self) -> &SystemKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SystemKind::Lorenz { .. } => 3,
            SystemKind::Linear { matrix } => matrix.nrows(),
            SystemKind::Rotation { .. } => 2,
        }
    }

    /// X(x), with a dimension check.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; x.len()];
        self.field_into(x, &mut out);
        Ok(out)
    }

    /// DX(x), with a dimension check.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.jacobian_unchecked(x))
    }

    /// Speed |X(x)|.
    pub fn speed(&self, x: &[f64]) -> f64 {
        let mut out = vec![0.0; x.len()];
        self.field_into(x, &mut out);
        norm(&out)
    }

    /// Trace of DX(x).
    pub fn divergence(&self, x: &[f64]) -> f64 {
        match &self.kind {
            SystemKind::Lorenz { sigma, beta, .. } => -(sigma + 1.0 + beta),
            SystemKind::Linear { matrix } => matrix.trace(),
            SystemKind::Rotation { .. } => {
                let _ = x;
                0.0
            }
        }
    }

    pub(crate) fn field_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            SystemKind::Lorenz { sigma, rho, beta } => {
                out[0] = sigma * (x[1] - x[0]);
                out[1] = x[0] * (rho - x[2]) - x[1];
                out[2] = x[0] * x[1] - beta * x[2];
            }
            SystemKind::Linear { matrix } => {
                let n = matrix.nrows();
                for i in 0..n {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += matrix[(i, j)] * x[j];
                    }
                    out[i] = s;
                }
            }
            SystemKind::Rotation { omega } => {
                out[0] = -omega * x[1];
                out[1] = omega * x[0];
            }
        }
    }

    pub(crate) fn jacobian_unchecked(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            SystemKind::Lorenz { sigma, rho, beta } => DMatrix::from_row_slice(
                3,
                3,
                &[
                    -sigma,
                    *sigma,
                    0.0,
                    rho - x[2],
                    -1.0,
                    -x[0],
                    x[1],
                    x[0],
                    -beta,
                ],
            ),
            SystemKind::Linear { matrix } => matrix.clone(),
            SystemKind::Rotation { omega } => {
                DMatrix::from_row_slice(2, 2, &[0.0, -omega, *omega, 0.0])
            }
        }
    }

    /// out = DX(x) v.
    pub(crate) fn jacobian_apply(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        match &self.kind {
            SystemKind::Lorenz { sigma, rho, beta } => {
                out[0] = sigma * (v[1] - v[0]);
                out[1] = (rho - x[2]) * v[0] - v[1] - x[0] * v[2];
                out[2] = x[1] * v[0] + x[0] * v[1] - beta * v[2];
            }
            SystemKind::Linear { .. } => self.field_into(v, out),
            SystemKind::Rotation { omega } => {
                out[0] = -omega * v[1];
                out[1] = omega * v[0];
            }
        }
    }

    /// out = X(x + w) - X(x), evaluated without cancellation so that tiny
    /// offsets keep full relative precision.
    pub(crate) fn difference_into(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        match &self.kind {
            SystemKind::Lorenz { sigma, rho, beta } => {
                out[0] = sigma * (w[1] - w[0]);
                out[1] = (rho - x[2]) * w[0] - w[1] - x[0] * w[2] - w[0] * w[2];
                out[2] = x[1] * w[0] + x[0] * w[1] - beta * w[2] + w[0] * w[1];
            }
            // Linear fields: the difference is the field applied to w.
            SystemKind::Linear { .. } | SystemKind::Rotation { .. } => self.field_into(w, out),
        }
    }

    /// Equilibria known in closed form (Lorenz: origin and C+/C-; linear:
    /// origin).
    pub fn known_equilibria(&self) -> Vec<Vec<f64>> {
        match &self.kind {
            SystemKind::Lorenz { rho, beta, .. } => {
                let mut eq = vec![vec![0.0, 0.0, 0.0]];
                if *rho > 1.0 {
                    let c = (beta * (rho - 1.0)).sqrt();
                    eq.push(vec![c, c, rho - 1.0]);
                    eq.push(vec![-c, -c, rho - 1.0]);
                }
                eq
            }
            _ => vec![vec![0.0; self.dim()]],
        }
    }
}

impl fmt::Display for FlowSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        let mut first = true;
        for (k, v) in &self.params {
            if !first {
                write!(f, ", ")?;
            }
            first = false;
            write!(f, "{k}={v}")?;
        }
        write!(f, ")")
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}
