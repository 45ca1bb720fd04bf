//! Normal bundle, linear Poincaré flow ψ_t and its scaled version ψ*_t.
//!
//! ψ_t(v) = π_{φ_t x} Φ_t(v) for v ⊥ X(x), and
//! ψ*_t(v) = (|X(x)| / |X(φ_t x)|) ψ_t(v).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flow::{norm, tangent_flow, FlowSystem, OrbitSegment, SystemKind, Tolerance};
use crate::linalg::{co_norm, op_norm, orthogonal_complement, orthonormalize, qr_positive};

/// Relative speed below which a point counts as near-singular.
pub const SINGULAR_SPEED_FRACTION: f64 = 1e-4;

/// Characteristic speed on the system's natural scale.
pub fn reference_speed(system: &FlowSystem) -> f64 {
    match system.kind() {
        // σ times the distance from the origin to C±.
        SystemKind::Lorenz { sigma, rho, beta } => {
            sigma.abs() * (beta * (rho - 1.0)).abs().sqrt().max(1.0)
        }
        SystemKind::Linear { matrix } => op_norm(matrix).max(f64::MIN_POSITIVE),
        SystemKind::Rotation { omega } => omega.abs().max(f64::MIN_POSITIVE),
    }
}

/// Speeds below this value trigger [`Error::NearSingularity`].
pub fn singular_threshold(system: &FlowSystem) -> f64 {
    SINGULAR_SPEED_FRACTION * reference_speed(system)
}

fn regular_field(system: &FlowSystem, x: &[f64], time: f64) -> Result<Vec<f64>> {
    let fx = system.evaluate(x)?;
    let speed = norm(&fx);
    if speed < singular_threshold(system) || !speed.is_finite() {
        return Err(Error::NearSingularity { time, speed });
    }
    Ok(fx)
}

/// Orthonormal basis of N_x = X(x)^⊥.
#[derive(Clone, Debug)]
pub struct NormalFrame {
    pub base: Vec<f64>,
    pub flow_dir: DVector<f64>,
    pub basis: DMatrix<f64>,
}

impl NormalFrame {
    pub fn at(system: &FlowSystem, x: &[f64]) -> Result<Self> {
        let fx = regular_field(system, x, 0.0)?;
        let dir = DVector::from_column_slice(&fx).normalize();
        let basis = orthogonal_complement(&DMatrix::from_column_slice(dir.len(), 1, dir.as_slice()));
        Ok(Self {
            base: x.to_vec(),
            flow_dir: dir,
            basis,
        })
    }

    /// Frame at `y` built by Gram–Schmidt of `seed` against the flow
    /// direction at `y`; keeps orientation continuous along an orbit.
    pub fn seeded(system: &FlowSystem, y: &[f64], seed: &DMatrix<f64>) -> Result<Self> {
        let fy = regular_field(system, y, 0.0)?;
        let dir = DVector::from_column_slice(&fy).normalize();
        let n = dir.len();
        let mut m = DMatrix::zeros(n, seed.ncols() + 1);
        m.set_column(0, &dir);
        m.columns_mut(1, seed.ncols()).copy_from(seed);
        let q = orthonormalize(&m);
        let mut basis = q.columns(1, n - 1).into_owned();
        // Re-orthogonalize against the flow direction once more.
        for mut c in basis.column_iter_mut() {
            let d = c.dot(&dir);
            c.axpy(-d, &dir, 1.0);
            let nc = c.norm();
            c /= nc;
        }
        Ok(Self {
            base: y.to_vec(),
            flow_dir: dir,
            basis,
        })
    }

    /// Coordinates of a normal vector in this frame.
    pub fn coords(&self, v: &DVector<f64>) -> DVector<f64> {
        self.basis.transpose() * v
    }
}

/// v - (<v, X>/|X|^2) X, the orthogonal projection onto N_x.
pub fn normal_project(system: &FlowSystem, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_dim(system.dim(), v.len())?;
    let fx = regular_field(system, x, 0.0)?;
    Ok(project_out(v, &fx))
}

fn project_out(v: &[f64], dir: &[f64]) -> Vec<f64> {
    let dd: f64 = dir.iter().map(|a| a * a).sum();
    let c: f64 = v.iter().zip(dir).map(|(a, b)| a * b).sum::<f64>() / dd;
    v.iter().zip(dir).map(|(a, b)| a - c * b).collect()
}

/// Largest step between regularity checks along an orbit.
const REGULARITY_STEP: f64 = 0.05;

fn checked_tangent_flow(
    system: &FlowSystem,
    x: &[f64],
    frame: &DMatrix<f64>,
    t: f64,
    tol: Tolerance,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    regular_field(system, x, 0.0)?;
    let pieces = (t.abs() / REGULARITY_STEP).ceil().max(1.0) as usize;
    let dt = t / pieces as f64;
    let mut y = x.to_vec();
    let mut v = frame.clone();
    let mut prop = crate::flow::TangentPropagator::new(system, frame.ncols(), tol);
    for k in 1..=pieces {
        prop.advance(&mut y, &mut v, dt)?;
        let fy = system.evaluate(&y)?;
        let speed = norm(&fy);
        if speed < singular_threshold(system) {
            return Err(Error::NearSingularity {
                time: k as f64 * dt,
                speed,
            });
        }
    }
    Ok((y, v))
}

/// ψ_t(v) for v ∈ N_x.
pub fn linear_poincare(
    system: &FlowSystem,
    x: &[f64],
    v: &[f64],
    t: f64,
    tol: impl Into<Tolerance>,
) -> Result<Vec<f64>> {
    check_dim(system.dim(), v.len())?;
    let tol = tol.into();
    let frame = DMatrix::from_column_slice(v.len(), 1, v);
    let (y, w) = checked_tangent_flow(system, x, &frame, t, tol)?;
    let fy = system.evaluate(&y)?;
    Ok(project_out(w.as_slice(), &fy))
}

/// ψ*_t(v) = (|X(x)|/|X(φ_t x)|) ψ_t(v).
pub fn scaled_poincare(
    system: &FlowSystem,
    x: &[f64],
    v: &[f64],
    t: f64,
    tol: impl Into<Tolerance>,
) -> Result<Vec<f64>> {
    check_dim(system.dim(), v.len())?;
    let tol = tol.into();
    let frame = DMatrix::from_column_slice(v.len(), 1, v);
    let (y, w) = checked_tangent_flow(system, x, &frame, t, tol)?;
    let fy = system.evaluate(&y)?;
    let ratio = system.speed(x) / norm(&fy);
    Ok(project_out(w.as_slice(), &fy)
        .into_iter()
        .map(|a| a * ratio)
        .collect())
}

/// Matrices of ψ_t and ψ*_t between normal frames at x and φ_t(x).
#[derive(Clone, Debug)]
pub struct CocycleSample {
    pub x: Vec<f64>,
    pub t: f64,
    pub frame_in: NormalFrame,
    pub frame_out: NormalFrame,
    pub matrix_psi: DMatrix<f64>,
    pub matrix_psi_star: DMatrix<f64>,
    pub speed_ratio: f64,
}

pub fn cocycle_sample(
    system: &FlowSystem,
    x: &[f64],
    t: f64,
    tol: impl Into<Tolerance>,
) -> Result<CocycleSample> {
    let tol = tol.into();
    let frame_in = NormalFrame::at(system, x)?;
    let (y, transported) = checked_tangent_flow(system, x, &frame_in.basis, t, tol)?;
    let frame_out = NormalFrame::seeded(system, &y, &transported)?;
    let matrix_psi = frame_out.basis.transpose() * &transported;
    let speed_ratio = system.speed(x) / system.speed(&y);
    let matrix_psi_star = &matrix_psi * speed_ratio;
    Ok(CocycleSample {
        x: x.to_vec(),
        t,
        frame_in,
        frame_out,
        matrix_psi,
        matrix_psi_star,
        speed_ratio,
    })
}

/// Empirical bound on |ψ*_t| for |t| <= τ along an orbit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CocycleBound {
    pub tau: f64,
    pub c_tau: f64,
    pub samples_used: usize,
    pub witness_index: Option<usize>,
    pub witness_time: f64,
    pub note: String,
}

/// Maximum over sampled x (speed >= `min_speed`) and t on the grid
/// {±k h_out : k h_out <= τ} of the operator norm of ψ*_t. Negative times use
/// |ψ*_{-s}(x)| = 1/m(ψ*_s(φ_{-s} x)) with φ_{-s} x taken from the orbit.
pub fn cocycle_bound_probe(
    system: &FlowSystem,
    orbit: &OrbitSegment,
    tau: f64,
    min_speed: f64,
    tol: impl Into<Tolerance>,
) -> Result<CocycleBound> {
    let tol = tol.into();
    let note = "empirical maximum over samples; not a proven bound".to_string();
    if tau < 0.0 || !tau.is_finite() {
        return Err(Error::Input(format!("tau must be finite and >= 0, got {tau}")));
    }
    let h = orbit.h_out;
    let steps = ((tau / h) + 1e-9).floor() as usize;
    if steps == 0 {
        return Ok(CocycleBound {
            tau,
            c_tau: 1.0,
            samples_used: orbit.len(),
            witness_index: None,
            witness_time: 0.0,
            note,
        });
    }
    let threshold = min_speed.max(singular_threshold(system));
    let len = orbit.len();
    let candidates: Vec<usize> = (steps..len.saturating_sub(steps))
        .filter(|&k| system.speed(orbit.point(k)) >= threshold)
        .collect();
    if candidates.is_empty() {
        return Err(Error::Input("no orbit samples satisfy the speed clip".into()));
    }
    // Forward matrices ψ*_{jh}(x_k) for j = 1..=steps, for every k that
    // serves either as a forward base or as a backward preimage.
    let results: Vec<Result<(f64, usize, f64)>> = candidates
        .par_iter()
        .map(|&k| {
            let mut best = (1.0f64, k, 0.0f64);
            // Forward.
            let frame_in = NormalFrame::at(system, orbit.point(k))?;
            let mut y = orbit.point(k).to_vec();
            let mut v = frame_in.basis.clone();
            let mut prop = crate::flow::TangentPropagator::new(system, v.ncols(), tol);
            let s0 = system.speed(orbit.point(k));
            for j in 1..=steps {
                prop.advance(&mut y, &mut v, h)?;
                let fy = system.evaluate(&y)?;
                let sy = norm(&fy);
                if sy < singular_threshold(system) {
                    return Err(Error::NearSingularity {
                        time: j as f64 * h,
                        speed: sy,
                    });
                }
                let out = NormalFrame::seeded(system, &y, &v)?;
                let m = out.basis.transpose() * &v * (s0 / sy);
                let nrm = op_norm(&m);
                if nrm > best.0 {
                    best = (nrm, k, j as f64 * h);
                }
                // Backward: ψ*_{-jh} at x_{k+j} is the inverse of m.
                let inv = 1.0 / co_norm(&m);
                if inv > best.0 {
                    best = (inv, k + j, -(j as f64) * h);
                }
            }
            Ok(best)
        })
        .collect();
    let mut c_tau = 1.0;
    let mut witness = None;
    let mut witness_time = 0.0;
    for r in results {
        let (v, k, t) = r?;
        if v > c_tau {
            c_tau = v;
            witness = Some(k);
            witness_time = t;
        }
    }
    Ok(CocycleBound {
        tau,
        c_tau,
        samples_used: candidates.len(),
        witness_index: witness,
        witness_time,
        note,
    })
}

/// Finite-time exponents of ψ and ψ* along one orbit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalSpectrum {
    pub window: f64,
    pub psi: Vec<f64>,
    pub psi_star: Vec<f64>,
    /// (1/T) log(|X(x_0)| / |X(x_T)|), the offset between the two spectra.
    pub speed_term: f64,
}

/// Benettin iteration of the linear Poincaré flow: transport a normal frame
/// by Φ, project onto the normal space, re-orthonormalize.
pub fn normal_spectrum(
    system: &FlowSystem,
    x0: &[f64],
    window: f64,
    renorm_step: f64,
    tol: impl Into<Tolerance>,
) -> Result<NormalSpectrum> {
    let tol = tol.into();
    if !(renorm_step > 0.0) || !(window >= renorm_step) {
        return Err(Error::Input("need window >= renorm_step > 0".into()));
    }
    let steps = (window / renorm_step).round() as usize;
    let mut frame = NormalFrame::at(system, x0)?;
    let s0 = system.speed(x0);
    let mut y = x0.to_vec();
    let k = system.dim() - 1;
    let mut logs = vec![0.0; k];
    let mut prop = crate::flow::TangentPropagator::new(system, k, tol);
    for _ in 0..steps {
        let mut v = frame.basis.clone();
        prop.advance(&mut y, &mut v, renorm_step)?;
        let fy = regular_field(system, &y, 0.0)?;
        let dir = DVector::from_column_slice(&fy).normalize();
        for mut c in v.column_iter_mut() {
            let d = c.dot(&dir);
            c.axpy(-d, &dir, 1.0);
        }
        let (q, l) = qr_positive(&v);
        for (acc, li) in logs.iter_mut().zip(&l) {
            *acc += li;
        }
        frame = NormalFrame {
            base: y.clone(),
            flow_dir: dir,
            basis: q,
        };
    }
    let total = steps as f64 * renorm_step;
    let mut psi: Vec<f64> = logs.iter().map(|l| l / total).collect();
    psi.sort_by(|a, b| b.total_cmp(a));
    let speed_term = (s0 / system.speed(&y)).ln() / total;
    let psi_star = psi.iter().map(|l| l + speed_term).collect();
    Ok(NormalSpectrum {
        window: total,
        psi,
        psi_star,
        speed_term,
    })
}

/// An orbit sampled every `step` together with the one-step tangent maps
/// Φ_step(x_k). The backbone of the splitting and Pesin-block computations.
#[derive(Clone, Debug)]
pub struct CocycleChain {
    pub step: f64,
    pub points: Vec<Vec<f64>>,
    /// phi[k] maps T_{x_k} to T_{x_{k+1}}.
    pub phi: Vec<DMatrix<f64>>,
}

impl CocycleChain {
    /// Sample `n_steps + 1` points from x0 and the `n_steps` tangent maps.
    pub fn along_orbit(
        system: &FlowSystem,
        x0: &[f64],
        n_steps: usize,
        step: f64,
        tol: impl Into<Tolerance>,
    ) -> Result<Self> {
        let tol = tol.into();
        let orbit = OrbitSegment::integrate(system, x0, n_steps as f64 * step, step, tol)?;
        let n = system.dim();
        let phi: Result<Vec<DMatrix<f64>>> = orbit.points[..orbit.len() - 1]
            .par_iter()
            .map(|x| tangent_flow(system, x, &DMatrix::identity(n, n), step, tol).map(|(_, m)| m))
            .collect();
        Ok(Self {
            step,
            points: orbit.points,
            phi: phi?,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Per-point normal frames (independent constructions; orientation is
    /// irrelevant to norms).
    pub fn normal_frames(&self, system: &FlowSystem) -> Result<Vec<NormalFrame>> {
        self.points
            .iter()
            .enumerate()
            .map(|(k, x)| {
                NormalFrame::at(system, x).map_err(|e| match e {
                    Error::NearSingularity { speed, .. } => Error::NearSingularity {
                        time: k as f64 * self.step,
                        speed,
                    },
                    other => other,
                })
            })
            .collect()
    }

    /// One-step matrices of ψ* in the given normal frames.
    pub fn scaled_poincare_steps(
        &self,
        system: &FlowSystem,
        frames: &[NormalFrame],
    ) -> Vec<DMatrix<f64>> {
        (0..self.phi.len())
            .map(|k| {
                let ratio = system.speed(&self.points[k]) / system.speed(&self.points[k + 1]);
                frames[k + 1].basis.transpose() * &self.phi[k] * &frames[k].basis * ratio
            })
            .collect()
    }

    /// One-step matrices of ψ (unscaled) in the given normal frames.
    pub fn poincare_steps(&self, frames: &[NormalFrame]) -> Vec<DMatrix<f64>> {
        (0..self.phi.len())
            .map(|k| frames[k + 1].basis.transpose() * &self.phi[k] * &frames[k].basis)
            .collect()
    }
}

/// Normal-frame coordinates of π(S) for a subspace S ⊂ T_x M, with rank
/// drops (S containing the flow direction) removed.
pub fn project_subspace(frame: &NormalFrame, s: &DMatrix<f64>) -> DMatrix<f64> {
    let m = frame.basis.transpose() * s;
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cols: Vec<DVector<f64>> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > 1e-6 * smax)
        .map(|i| u.column(i).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_kills_flow_direction() {
        let sys = FlowSystem::classic_lorenz();
        let x = [1.0, 1.0, 1.0];
        let fx = sys.evaluate(&x).unwrap();
        let p = normal_project(&sys, &x, &fx).unwrap();
        assert!(norm(&p) < 1e-12);
        // (1,0,0) is already normal to X = (0, 26, -5/3).
        assert_eq!(normal_project(&sys, &x, &[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn singular_point_is_rejected() {
        let sys = FlowSystem::classic_lorenz();
        assert!(matches!(
            normal_project(&sys, &[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::NearSingularity { .. })
        ));
    }

    #[test]
    fn saddle_poincare_closed_form() {
        let sys = FlowSystem::linear_diagonal(&[-2.0, 1.0]).unwrap();
        let t = 0.7;
        let v = linear_poincare(&sys, &[0.0, 1.0], &[1.0, 0.0], t, 1e-12).unwrap();
        assert!((v[0] - (-2.0 * t).exp()).abs() < 1e-10);
        assert!(v[1].abs() < 1e-12);
        let w = scaled_poincare(&sys, &[0.0, 1.0], &[1.0, 0.0], t, 1e-12).unwrap();
        assert!((w[0] - (-3.0 * t).exp()).abs() < 1e-10);
    }

    #[test]
    fn zero_time_is_identity() {
        let sys = FlowSystem::classic_lorenz();
        let x = [1.0, 1.0, 1.0];
        let v = [1.0, 0.0, 0.0];
        assert_eq!(linear_poincare(&sys, &x, &v, 0.0, 1e-10).unwrap(), v.to_vec());
        assert_eq!(scaled_poincare(&sys, &x, &v, 0.0, 1e-10).unwrap(), v.to_vec());
    }

    #[test]
    fn frames_are_orthonormal_and_normal() {
        let sys = FlowSystem::classic_lorenz();
        let f = NormalFrame::at(&sys, &[2.0, -3.0, 20.0]).unwrap();
        assert!((f.basis.transpose() * &f.flow_dir).amax() < 1e-12);
        assert!((f.basis.transpose() * &f.basis - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn zero_tau_bound_is_one() {
        let sys = FlowSystem::classic_lorenz();
        let orb = OrbitSegment::integrate(&sys, &[1.0, 1.0, 20.0], 1.0, 0.1, 1e-10).unwrap();
        let b = cocycle_bound_probe(&sys, &orb, 0.0, 1.0, 1e-10).unwrap();
        assert_eq!(b.c_tau, 1.0);
    }
}
