//! Vector fields, the flow, the tangent flow and the time-one map.

mod integrator;
mod orbit;
mod system;
mod tangent;

pub use integrator::{Tolerance, DIVERGENCE_GUARD};
pub use orbit::OrbitSegment;
pub use system::{FlowSystem, SystemKind, LORENZ_BETA, LORENZ_RHO, LORENZ_SIGMA};
pub use tangent::{tangent_flow, tangent_flow_at_times, TangentCocycleState, TangentPropagator};

pub(crate) use integrator::{Dop853, Rhs};
pub(crate) use system::norm;

use crate::error::{check_dim, Error, Result};

struct BaseRhs<'a> {
    system: &'a FlowSystem,
}

impl Rhs for BaseRhs<'_> {
    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        self.system.field_into(y, dy);
    }

    fn guard_norm(&self, y: &[f64]) -> f64 {
        norm(y)
    }
}

/// Reusable integrator for the base flow. Not thread-safe; create one per
/// worker.
pub struct Propagator<'a> {
    rhs: BaseRhs<'a>,
    engine: Dop853,
}

impl<'a> Propagator<'a> {
    pub fn new(system: &'a FlowSystem, tol: impl Into<Tolerance>) -> Self {
        let n = system.dim();
        Self {
            rhs: BaseRhs { system },
            engine: Dop853::new(n, tol.into()),
        }
    }

    /// Replace `x` by φ_t(x).
    pub fn advance(&mut self, x: &mut [f64], t: f64) -> Result<()> {
        self.engine.invalidate();
        let mut time = 0.0;
        self.engine.advance(&self.rhs, x, &mut time, t)
    }

    /// Advance through a sequence of increasing offsets, calling `visit` at
    /// each. `visit` returning false stops early.
    pub fn advance_through(
        &mut self,
        x: &mut [f64],
        times: &[f64],
        mut visit: impl FnMut(usize, &[f64]) -> bool,
    ) -> Result<()> {
        self.engine.invalidate();
        let mut time = 0.0;
        for (k, &target) in times.iter().enumerate() {
            self.engine.advance(&self.rhs, x, &mut time, target)?;
            if !visit(k, x) {
                break;
            }
        }
        Ok(())
    }
}

/// φ_t(x). `flow(x, 0) == x` exactly.
pub fn flow(system: &FlowSystem, x: &[f64], t: f64, tol: impl Into<Tolerance>) -> Result<Vec<f64>> {
    check_dim(system.dim(), x.len())?;
    let tol = tol.into();
    tol.validate()?;
    if !t.is_finite() {
        return Err(Error::Input(format!("flow time must be finite, got {t}")));
    }
    let mut y = x.to_vec();
    Propagator::new(system, tol).advance(&mut y, t)?;
    Ok(y)
}

/// φ_{t_k}(x) for a monotone sequence of times (all of one sign).
pub fn flow_at_times(
    system: &FlowSystem,
    x: &[f64],
    times: &[f64],
    tol: impl Into<Tolerance>,
) -> Result<Vec<Vec<f64>>> {
    check_dim(system.dim(), x.len())?;
    let tol = tol.into();
    tol.validate()?;
    let monotone = times.windows(2).all(|w| w[1] >= w[0]) || times.windows(2).all(|w| w[1] <= w[0]);
    if !monotone || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Input("output times must be finite and monotone".into()));
    }
    let mut y = x.to_vec();
    let mut out = Vec::with_capacity(times.len());
    Propagator::new(system, tol).advance_through(&mut y, times, |_, p| {
        out.push(p.to_vec());
        true
    })?;
    Ok(out)
}

/// The time-one map f = φ_1.
pub fn time_one_map(system: &FlowSystem, x: &[f64], tol: impl Into<Tolerance>) -> Result<Vec<f64>> {
    flow(system, x, 1.0, tol)
}

struct DifferenceRhs<'a> {
    system: &'a FlowSystem,
}

impl Rhs for DifferenceRhs<'_> {
    fn eval(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.system.dim();
        let (x, w) = y.split_at(n);
        let (dx, dw) = dy.split_at_mut(n);
        self.system.field_into(x, dx);
        self.system.difference_into(x, w, dw);
    }

    fn guard_norm(&self, y: &[f64]) -> f64 {
        let n = self.system.dim();
        norm(&y[..n]).max(norm(&y[n..]))
    }

    fn scales(&self, tol: &Tolerance, y_old: &[f64], y_new: &[f64], sc: &mut [f64]) {
        let n = self.system.dim();
        for i in 0..n {
            sc[i] = tol.atol + tol.rtol * y_old[i].abs().max(y_new[i].abs());
        }
        // Offsets are controlled relative to their own size so that tiny
        // separations keep full relative accuracy.
        let wn = norm(&y_old[n..]).max(norm(&y_new[n..])).max(f64::MIN_POSITIVE);
        for i in n..2 * n {
            sc[i] = tol.rtol * wn;
        }
    }
}

/// Integrates a reference orbit x(t) together with the offset w(t) of a
/// neighbouring orbit, y(t) = x(t) + w(t). The offset equation is evaluated
/// without cancellation, so separations far below the coordinate resolution
/// remain meaningful.
pub struct DifferencePropagator<'a> {
    rhs: DifferenceRhs<'a>,
    engine: Dop853,
    state: Vec<f64>,
}

impl<'a> DifferencePropagator<'a> {
    pub fn new(system: &'a FlowSystem, tol: impl Into<Tolerance>) -> Self {
        let n = system.dim();
        Self {
            rhs: DifferenceRhs { system },
            engine: Dop853::new(2 * n, tol.into()),
            state: vec![0.0; 2 * n],
        }
    }

    /// Follow the offset `w` from base point `x` over unit steps, stopping
    /// at the first step where |w| exceeds `radius`. Returns the number of
    /// steps survived (`n_steps` if the offset never left the ball) and the
    /// offset at the last visited step.
    pub fn track(
        &mut self,
        x: &[f64],
        w: &[f64],
        n_steps: usize,
        step: f64,
        radius: f64,
        mut visit: impl FnMut(usize, &[f64], &[f64]),
    ) -> Result<(usize, Vec<f64>)> {
        let n = x.len();
        self.state[..n].copy_from_slice(x);
        self.state[n..].copy_from_slice(w);
        self.engine.invalidate();
        let mut t = 0.0;
        visit(0, x, w);
        if norm(w) > radius {
            return Ok((0, w.to_vec()));
        }
        for j in 1..n_steps {
            self.engine
                .advance(&self.rhs, &mut self.state, &mut t, j as f64 * step)?;
            let (xs, ws) = self.state.split_at(n);
            visit(j, xs, ws);
            if norm(ws) > radius {
                return Ok((j, ws.to_vec()));
            }
        }
        Ok((n_steps, self.state[n..].to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_at_zero_is_identity() {
        let sys = FlowSystem::classic_lorenz();
        let x = [1.234, -5.6, 17.0];
        assert_eq!(flow(&sys, &x, 0.0, 1e-10).unwrap(), x.to_vec());
    }

    #[test]
    fn linear_saddle_closed_form() {
        let sys = FlowSystem::linear_diagonal(&[-1.0, 2.0]).unwrap();
        let y = flow(&sys, &[1.0, 1.0], 1.0, 1e-12).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-11);
        assert!((y[1] - 2.0f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn lorenz_equilibrium_is_fixed() {
        let sys = FlowSystem::classic_lorenz();
        let c = 72f64.sqrt();
        let y = flow(&sys, &[c, c, 27.0], 5.0, 1e-10).unwrap();
        assert!((y[0] - c).abs() < 1e-9 && (y[1] - c).abs() < 1e-9 && (y[2] - 27.0).abs() < 1e-9);
    }

    #[test]
    fn divergence_is_reported() {
        let sys = FlowSystem::linear_diagonal(&[1.0, 1.0]).unwrap();
        match flow(&sys, &[1.0, 0.0], 20.0, 1e-8) {
            Err(Error::Divergence { last_valid_time }) => assert!(last_valid_time < 9.3),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn bad_inputs() {
        let sys = FlowSystem::classic_lorenz();
        assert!(flow(&sys, &[1.0, 1.0, 1.0], f64::NAN, 1e-8).is_err());
        assert!(flow(&sys, &[1.0, 1.0, 1.0], 1.0, 0.0).is_err());
        assert!(flow(&sys, &[1.0, 1.0], 1.0, 1e-8).is_err());
    }

    #[test]
    fn difference_tracking_agrees_with_two_orbits() {
        let sys = FlowSystem::classic_lorenz();
        let x = [-6.0, -8.0, 25.0];
        let w = [1e-3, -2e-3, 5e-4];
        let mut prop = DifferencePropagator::new(&sys, 1e-12);
        let (survived, wn) = prop.track(&x, &w, 3, 0.5, 10.0, |_, _, _| {}).unwrap();
        assert_eq!(survived, 3);
        let xa = flow(&sys, &x, 1.0, 1e-12).unwrap();
        let xb: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a + b).collect();
        let xb = flow(&sys, &xb, 1.0, 1e-12).unwrap();
        for i in 0..3 {
            assert!((wn[i] - (xb[i] - xa[i])).abs() < 1e-9);
        }
    }
}
