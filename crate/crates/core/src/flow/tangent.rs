use nalgebra::DMatrix;

use super::integrator::{Dop853, Rhs, Tolerance};
use super::system::{norm, FlowSystem};
use crate::error::{check_dim, Error, Result};

/// Base point plus `cols` tangent vectors, stored column-major after the
/// point.
struct TangentRhs<'a> {
    system: &'a FlowSystem,
}

impl Rhs for TangentRhs<'_> {
    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.system.dim();
        let (x, vs) = y.split_at(n);
        let (dx, dvs) = dy.split_at_mut(n);
        self.system.field_into(x, dx);
        for (v, dv) in vs.chunks_exact(n).zip(dvs.chunks_exact_mut(n)) {
            self.system.jacobian_apply(x, v, dv);
        }
    }

    fn guard_norm(&self, y: &[f64]) -> f64 {
        norm(&y[..self.system.dim()])
    }
}

/// Joint integrator for the base orbit and the variational equation
/// v' = DX(φ_s(x)) v.
pub struct TangentPropagator<'a> {
    rhs: TangentRhs<'a>,
    engine: Dop853,
    state: Vec<f64>,
}

impl<'a> TangentPropagator<'a> {
    pub fn new(system: &'a FlowSystem, cols: usize, tol: impl Into<Tolerance>) -> Self {
        let n = system.dim();
        Self {
            rhs: TangentRhs { system },
            engine: Dop853::new(n * (1 + cols), tol.into()),
            state: vec![0.0; n * (1 + cols)],
        }
    }

    fn load(&mut self, x: &[f64], frame: &DMatrix<f64>) {
        let n = x.len();
        self.state[..n].copy_from_slice(x);
        self.state[n..].copy_from_slice(frame.as_slice());
        self.engine.invalidate();
    }

    fn unload(&self, x: &mut [f64], frame: &mut DMatrix<f64>) {
        let n = x.len();
        x.copy_from_slice(&self.state[..n]);
        frame.as_mut_slice().copy_from_slice(&self.state[n..]);
    }

    /// Replace (x, V) by (φ_t(x), Φ_t(x) V).
    pub fn advance(&mut self, x: &mut [f64], frame: &mut DMatrix<f64>, t: f64) -> Result<()> {
        self.load(x, frame);
        let mut time = 0.0;
        self.engine.advance(&self.rhs, &mut self.state, &mut time, t)?;
        self.unload(x, frame);
        Ok(())
    }
}

fn check_frame(system: &FlowSystem, x: &[f64], frame: &DMatrix<f64>) -> Result<()> {
    check_dim(system.dim(), x.len())?;
    check_dim(system.dim(), frame.nrows())?;
    if frame.ncols() == 0 {
        return Err(Error::Input("tangent frame needs at least one column".into()));
    }
    Ok(())
}

/// (φ_t(x), Φ_t(x) V) for a frame V whose columns are tangent vectors at x.
pub fn tangent_flow(
    system: &FlowSystem,
    x: &[f64],
    frame: &DMatrix<f64>,
    t: f64,
    tol: impl Into<Tolerance>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_frame(system, x, frame)?;
    let tol = tol.into();
    tol.validate()?;
    if !t.is_finite() {
        return Err(Error::Input(format!("flow time must be finite, got {t}")));
    }
    let mut y = x.to_vec();
    let mut v = frame.clone();
    TangentPropagator::new(system, frame.ncols(), tol).advance(&mut y, &mut v, t)?;
    Ok((y, v))
}

/// Tangent flow sampled at monotone times.
pub fn tangent_flow_at_times(
    system: &FlowSystem,
    x: &[f64],
    frame: &DMatrix<f64>,
    times: &[f64],
    tol: impl Into<Tolerance>,
) -> Result<Vec<(Vec<f64>, DMatrix<f64>)>> {
    check_frame(system, x, frame)?;
    let tol = tol.into();
    tol.validate()?;
    let mut prop = TangentPropagator::new(system, frame.ncols(), tol);
    prop.load(x, frame);
    let mut time = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        prop.engine
            .advance(&prop.rhs, &mut prop.state, &mut time, target)?;
        let mut y = x.to_vec();
        let mut v = frame.clone();
        prop.unload(&mut y, &mut v);
        out.push((y, v));
    }
    Ok(out)
}

/// A point, a transported frame and the log-diagonal record of the QR
/// re-orthonormalizations applied so far.
#[derive(Clone, Debug)]
pub struct TangentCocycleState {
    pub point: Vec<f64>,
    pub frame: DMatrix<f64>,
    pub log_r: Vec<f64>,
    pub time: f64,
}

impl TangentCocycleState {
    /// Start at `x` with the leading `cols` standard basis vectors.
    pub fn new(x: &[f64], cols: usize) -> Self {
        let n = x.len();
        Self {
            point: x.to_vec(),
            frame: DMatrix::identity(n, cols),
            log_r: vec![0.0; cols],
            time: 0.0,
        }
    }

    pub fn with_frame(x: &[f64], frame: DMatrix<f64>) -> Self {
        let cols = frame.ncols();
        Self {
            point: x.to_vec(),
            frame,
            log_r: vec![0.0; cols],
            time: 0.0,
        }
    }

    pub fn advance(&mut self, prop: &mut TangentPropagator<'_>, dt: f64) -> Result<()> {
        prop.advance(&mut self.point, &mut self.frame, dt)?;
        self.time += dt;
        if self.frame.iter().any(|a| !a.is_finite()) {
            return Err(Error::Divergence {
                last_valid_time: self.time - dt,
            });
        }
        Ok(())
    }

    /// QR-factor the frame, keep Q (with positive R diagonal) and add
    /// log|R_ii| to the record. Returns the logs added in this call.
    pub fn reorthonormalize(&mut self) -> Result<Vec<f64>> {
        let (q, logs) = crate::linalg::qr_positive(&self.frame);
        if logs.iter().any(|l| !l.is_finite()) {
            return Err(Error::Input("tangent frame became degenerate".into()));
        }
        self.frame = q;
        for (acc, l) in self.log_r.iter_mut().zip(&logs) {
            *acc += l;
        }
        Ok(logs)
    }
}
