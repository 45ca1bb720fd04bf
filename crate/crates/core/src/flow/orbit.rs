use serde::{Deserialize, Serialize};

use super::integrator::Tolerance;
use super::system::FlowSystem;
use super::Propagator;
use crate::error::{check_dim, Error, Result};

/// An orbit φ_t(x) sampled on a uniform output grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitSegment {
    pub t0: f64,
    pub h_out: f64,
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub tol: Tolerance,
}

impl OrbitSegment {
    /// Sample φ_t(x) for t in [0, duration] every `h_out`; the last interval
    /// may be short.
    pub fn integrate(
        system: &FlowSystem,
        x: &[f64],
        duration: f64,
        h_out: f64,
        tol: impl Into<Tolerance>,
    ) -> Result<Self> {
        check_dim(system.dim(), x.len())?;
        let tol = tol.into();
        tol.validate()?;
        if !(h_out > 0.0) || !(duration >= 0.0) || !duration.is_finite() {
            return Err(Error::Input(format!(
                "need h_out > 0 and finite duration >= 0, got h_out={h_out}, duration={duration}"
            )));
        }
        let steps = (duration / h_out - 1e-9).ceil().max(0.0) as usize;
        let mut times: Vec<f64> = (0..=steps).map(|k| (k as f64 * h_out).min(duration)).collect();
        times.dedup();
        let mut points = Vec::with_capacity(times.len());
        let mut y = x.to_vec();
        Propagator::new(system, tol).advance_through(&mut y, &times, |_, p| {
            points.push(p.to_vec());
            true
        })?;
        Ok(Self {
            t0: 0.0,
            h_out,
            times,
            points,
            tol,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0) - self.times.first().copied().unwrap_or(0.0)
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn last(&self) -> &[f64] {
        self.points.last().expect("orbit segment is never empty")
    }

    /// Index of the sample nearest to time `t` (relative to `t0`).
    pub fn index_of(&self, t: f64) -> usize {
        let k = ((t - self.times[0]) / self.h_out).round();
        (k.max(0.0) as usize).min(self.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::flow;

    #[test]
    fn uniform_grid_with_short_tail() {
        let sys = FlowSystem::classic_lorenz();
        let orb = OrbitSegment::integrate(&sys, &[1.0, 1.0, 1.0], 1.05, 0.1, 1e-10).unwrap();
        assert_eq!(orb.len(), 12);
        for w in orb.times.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!((orb.times[11] - 1.05).abs() < 1e-15);
        assert!((orb.times[10] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn samples_reintegrate() {
        let sys = FlowSystem::classic_lorenz();
        let tol = 1e-10;
        let orb = OrbitSegment::integrate(&sys, &[1.0, 1.0, 1.0], 3.0, 0.25, tol).unwrap();
        for k in 0..orb.len() - 1 {
            let dt = orb.times[k + 1] - orb.times[k];
            let y = flow(&sys, orb.point(k), dt, tol).unwrap();
            let err: f64 = y
                .iter()
                .zip(orb.point(k + 1))
                .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
                .fold(0.0, f64::max);
            assert!(err < 10.0 * tol, "k={k} err={err}");
        }
    }
}
