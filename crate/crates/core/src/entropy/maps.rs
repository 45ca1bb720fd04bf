use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flow::{FlowSystem, Propagator, Tolerance};

/// Distance used for dynamical balls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Metric {
    Euclidean,
    /// Every coordinate lives on a circle of this length.
    Torus(f64),
}

impl Metric {
    #[inline]
    pub fn dist2(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Torus(p) => a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let d = (x - y).rem_euclid(p);
                    let d = d.min(p - d);
                    d * d
                })
                .sum(),
        }
    }

    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        self.dist2(a, b).sqrt()
    }
}

/// A map f iterated for dynamical balls: the time-one map of a flow or a
/// discrete test map.
pub trait IteratedMap: Sync {
    fn dim(&self) -> usize;
    fn metric(&self) -> Metric;

    /// x, f(x), ..., f^{n-1}(x), written into `out` (n·dim values). On
    /// failure returns the number of iterates that were written.
    fn orbit(&self, x: &[f64], n: usize, out: &mut [f64]) -> std::result::Result<(), usize>;

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let mut out = vec![0.0; 2 * x.len()];
        self.orbit(x, 2, &mut out)
            .map_err(|_| Error::Divergence { last_valid_time: 0.0 })?;
        Ok(out[x.len()..].to_vec())
    }
}

/// f = φ_1 for a flow.
#[derive(Clone, Debug)]
pub struct TimeOneMap {
    pub system: FlowSystem,
    pub tol: Tolerance,
}

impl TimeOneMap {
    pub fn new(system: FlowSystem, tol: impl Into<Tolerance>) -> Self {
        Self {
            system,
            tol: tol.into(),
        }
    }
}

impl IteratedMap for TimeOneMap {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn metric(&self) -> Metric {
        Metric::Euclidean
    }

    fn orbit(&self, x: &[f64], n: usize, out: &mut [f64]) -> std::result::Result<(), usize> {
        let d = x.len();
        if n == 0 {
            return Ok(());
        }
        out[..d].copy_from_slice(x);
        let times: Vec<f64> = (1..n).map(|k| k as f64).collect();
        let mut y = x.to_vec();
        let mut written = 1;
        let res = Propagator::new(&self.system, self.tol).advance_through(&mut y, &times, |k, p| {
            out[(k + 1) * d..(k + 2) * d].copy_from_slice(p);
            written = k + 2;
            true
        });
        match res {
            Ok(()) => Ok(()),
            Err(_) => Err(written),
        }
    }
}

/// x ↦ 2x mod 1 on the circle of length 1.
#[derive(Clone, Copy, Debug, Default)]
pub struct DoublingMap;

impl IteratedMap for DoublingMap {
    fn dim(&self) -> usize {
        1
    }

    fn metric(&self) -> Metric {
        Metric::Torus(1.0)
    }

    fn orbit(&self, x: &[f64], n: usize, out: &mut [f64]) -> std::result::Result<(), usize> {
        let mut y = x[0].rem_euclid(1.0);
        for slot in out.iter_mut().take(n) {
            *slot = y;
            y = (2.0 * y).rem_euclid(1.0);
        }
        Ok(())
    }
}

/// x ↦ x + α mod 1, an isometry of the circle.
#[derive(Clone, Copy, Debug)]
pub struct CircleRotation {
    pub alpha: f64,
}

impl IteratedMap for CircleRotation {
    fn dim(&self) -> usize {
        1
    }

    fn metric(&self) -> Metric {
        Metric::Torus(1.0)
    }

    fn orbit(&self, x: &[f64], n: usize, out: &mut [f64]) -> std::result::Result<(), usize> {
        let mut y = x[0].rem_euclid(1.0);
        for slot in out.iter_mut().take(n) {
            *slot = y;
            y = (y + self.alpha).rem_euclid(1.0);
        }
        Ok(())
    }
}
