use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flow::{flow, flow_at_times, tangent_flow, FlowSystem, SystemKind, Tolerance};

/// A pseudo-periodic point: φ_t(x) returns to within `gap` of x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub x: Vec<f64>,
    pub t: f64,
    /// Time of x along the orbit it was taken from.
    pub start_time: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShadowConfig {
    /// Longest shooting segment.
    pub segment: f64,
    /// Section radius in units of |X|; leaving it is flagged, not fatal.
    pub beta: f64,
    pub max_iterations: usize,
    pub backtracks: usize,
    /// Newton stops when every stacked residual is below this.
    pub residual_tol: f64,
    /// Samples per segment for the distance bounds.
    pub samples: usize,
    pub tol: Tolerance,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self {
            segment: 0.5,
            beta: 0.2,
            max_iterations: 50,
            backtracks: 8,
            residual_tol: 1e-11,
            samples: 20,
            tol: Tolerance::new(1e-12),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeriodicOrbitRecord {
    pub seed: Seed,
    pub point: Vec<f64>,
    pub period: f64,
    /// Knots (t_i, θ(t_i)) of the piecewise-linear reparametrization.
    pub theta_fit: Vec<(f64, f64)>,
    pub theta_model: String,
    /// max_t d(φ_t x, φ_θ(t) p) / |X(φ_t x)|.
    pub c_bound: f64,
    /// max_t d(φ_t x, φ_t p) / d(x, φ_T x).
    pub d_bound: f64,
    /// d(x, φ_T x) recomputed at the shadowing tolerance.
    pub gap: f64,
    /// |p - φ_period(p)| from a single integration over the period.
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub iterations: usize,
    /// Eigenvalues (re, im) of Φ_period(p).
    pub floquet: Vec<(f64, f64)>,
    /// Cyclic lobe itinerary of p, rotated to its least form (Lorenz only).
    pub symbol_sequence: Option<String>,
    pub seed_itinerary: Option<String>,
    pub itinerary_mismatch: bool,
    /// Some section point lies farther than β|X| from its knot.
    pub left_tube: bool,
}

fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Least rotation of a cyclic word.
fn least_rotation(word: &str) -> String {
    let n = word.len();
    (0..n.max(1))
        .map(|k| format!("{}{}", &word[k..], &word[..k]))
        .min()
        .unwrap_or_default()
}

/// Sign of x at the successive maxima of z along φ_t(x), t ∈ [0, duration),
/// treated as a closed loop and written as its least rotation ('L' for
/// x < 0, 'R' otherwise). None for systems other than Lorenz or when no
/// maximum is found.
pub fn lorenz_itinerary(system: &FlowSystem, x: &[f64], duration: f64, tol: impl Into<Tolerance>) -> Result<Option<String>> {
    if !matches!(system.kind(), SystemKind::Lorenz { .. }) || !(duration > 0.0) {
        return Ok(None);
    }
    let n = ((duration / 0.002).ceil() as usize).max(64);
    let times: Vec<f64> = (0..n).map(|k| k as f64 * duration / n as f64).collect();
    let pts = flow_at_times(system, x, &times, tol)?;
    let z = |k: usize| pts[k % n][2];
    let mut word = String::new();
    for k in 0..n {
        if z(k) > z(k + n - 1) && z(k) >= z(k + 1) {
            word.push(if pts[k][0] < 0.0 { 'L' } else { 'R' });
        }
    }
    Ok((!word.is_empty()).then(|| least_rotation(&word)))
}

/// Knots x_i = φ_{t_i}(x) of the seed at m equal segments of [0, T].
fn knots(system: &FlowSystem, seed: &Seed, m: usize, tol: Tolerance) -> Result<Vec<Vec<f64>>> {
    let times: Vec<f64> = (0..=m).map(|i| seed.t * i as f64 / m as f64).collect();
    flow_at_times(system, &seed.x, &times, tol)
}

struct Shooting<'a> {
    system: &'a FlowSystem,
    /// Knots and unit flow directions defining the sections.
    knots: Vec<Vec<f64>>,
    normals: Vec<DVector<f64>>,
    tol: Tolerance,
}

impl Shooting<'_> {
    fn m(&self) -> usize {
        self.normals.len()
    }

    /// Stacked residual and, on request, its Jacobian. Unknowns are the
    /// section points p_i followed by the flight times τ_i.
    fn eval(&self, z: &DVector<f64>, with_jac: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let d = self.system.dim();
        let m = self.m();
        let size = m * (d + 1);
        let parts: Vec<(Vec<f64>, DMatrix<f64>)> = (0..m)
            .map(|i| {
                let p: Vec<f64> = z.rows(i * d, d).iter().copied().collect();
                let tau = z[m * d + i];
                if with_jac {
                    tangent_flow(self.system, &p, &DMatrix::identity(d, d), tau, self.tol)
                } else {
                    flow(self.system, &p, tau, self.tol).map(|y| (y, DMatrix::zeros(0, 0)))
                }
            })
            .collect::<Result<_>>()?;
        let mut r = DVector::zeros(size);
        let mut jac = with_jac.then(|| DMatrix::zeros(size, size));
        for i in 0..m {
            let next = (i + 1) % m;
            let (y, phi) = &parts[i];
            for a in 0..d {
                r[i * d + a] = y[a] - z[next * d + a];
            }
            let offset: Vec<f64> = (0..d).map(|a| z[i * d + a] - self.knots[i][a]).collect();
            r[m * d + i] = self.normals[i].dot(&DVector::from_vec(offset));
            if let Some(j) = jac.as_mut() {
                j.view_mut((i * d, i * d), (d, d)).copy_from(phi);
                for a in 0..d {
                    j[(i * d + a, next * d + a)] -= 1.0;
                }
                let fy = self.system.evaluate(y)?;
                for a in 0..d {
                    j[(i * d + a, m * d + i)] = fy[a];
                    j[(m * d + i, i * d + a)] = self.normals[i][a];
                }
            }
        }
        Ok((r, jac))
    }
}

/// Refine a pseudo-periodic seed to a periodic orbit by multiple shooting
/// between hyperplane sections through the seed's knots, orthogonal to the
/// flow there, with damped Newton (backtracking by halving). θ is the
/// piecewise-linear interpolant of the section crossing times.
pub fn shadow_periodic(system: &FlowSystem, seed: &Seed, config: &ShadowConfig) -> Result<PeriodicOrbitRecord> {
    let d = system.dim();
    check_dim(d, seed.x.len())?;
    if !(seed.t > 0.0) || !(config.segment > 0.0) {
        return Err(Error::Input("seed time and segment length must be positive".into()));
    }
    let tol = config.tol;
    let m = (seed.t / config.segment).ceil().max(1.0) as usize;
    let xs = knots(system, seed, m, tol)?;
    let normals: Vec<DVector<f64>> = xs[..m]
        .iter()
        .map(|x| system.evaluate(x).map(|f| DVector::from_vec(f).normalize()))
        .collect::<Result<_>>()?;
    if normals.iter().any(|n| !n.iter().all(|a| a.is_finite())) {
        return Err(Error::Input("seed knot at an equilibrium".into()));
    }
    let shoot = Shooting {
        system,
        knots: xs[..m].to_vec(),
        normals,
        tol,
    };
    let dt = seed.t / m as f64;
    let mut z = DVector::zeros(m * (d + 1));
    for i in 0..m {
        for a in 0..d {
            z[i * d + a] = xs[i][a];
        }
        z[m * d + i] = dt;
    }
    let (mut r, mut jac) = shoot.eval(&z, true)?;
    let mut history = vec![r.amax()];
    let mut iterations = 0;
    while r.amax() >= config.residual_tol {
        if iterations == config.max_iterations {
            return Err(Error::NewtonFailure { residuals: history });
        }
        iterations += 1;
        let Some(step) = jac.take().expect("jacobian").lu().solve(&(-&r)) else {
            return Err(Error::NewtonFailure { residuals: history });
        };
        let norm0 = r.norm();
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=config.backtracks {
            let trial = &z + &step * lambda;
            if (0..m).all(|i| trial[m * d + i] > 0.0) {
                if let Ok((tr, tj)) = shoot.eval(&trial, true) {
                    if tr.norm() < norm0 {
                        accepted = Some((trial, tr, tj));
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        let Some((nz, nr, nj)) = accepted else {
            return Err(Error::NewtonFailure { residuals: history });
        };
        z = nz;
        r = nr;
        jac = nj;
        history.push(r.amax());
    }

    let points: Vec<Vec<f64>> = (0..m).map(|i| z.rows(i * d, d).iter().copied().collect()).collect();
    let taus: Vec<f64> = (0..m).map(|i| z[m * d + i]).collect();
    let period: f64 = taus.iter().sum();
    let p = points[0].clone();
    let left_tube = (0..m).any(|i| dist(&points[i], &xs[i]) > config.beta * system.speed(&xs[i]));

    let mut theta_fit = vec![(0.0, 0.0)];
    let mut acc = 0.0;
    for (i, tau) in taus.iter().enumerate() {
        acc += tau;
        theta_fit.push((dt * (i + 1) as f64, acc));
    }

    // c: x-side and p-side sampled at matching fractions of each segment.
    let s = config.samples.max(1);
    let c_bound = (0..m)
        .map(|i| -> Result<f64> {
            let tx: Vec<f64> = (0..=s).map(|k| dt * k as f64 / s as f64).collect();
            let tp: Vec<f64> = (0..=s).map(|k| taus[i] * k as f64 / s as f64).collect();
            let ax = flow_at_times(system, &xs[i], &tx, tol)?;
            let ap = flow_at_times(system, &points[i], &tp, tol)?;
            Ok(ax
                .iter()
                .zip(&ap)
                .map(|(a, b)| dist(a, b) / system.speed(a))
                .fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let gap = dist(&xs[m], &seed.x);
    let grid: Vec<f64> = (0..=m * s).map(|k| seed.t * k as f64 / (m * s) as f64).collect();
    let ox = flow_at_times(system, &seed.x, &grid, tol)?;
    let op = flow_at_times(system, &p, &grid, tol)?;
    let displacement = ox.iter().zip(&op).map(|(a, b)| dist(a, b)).fold(0.0, f64::max);
    let d_bound = if gap > 0.0 { displacement / gap } else { 0.0 };

    let (end, phi) = tangent_flow(system, &p, &DMatrix::identity(d, d), period, tol)?;
    let residual = dist(&end, &p);
    let floquet = phi.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
    let symbol_sequence = lorenz_itinerary(system, &p, period, tol)?;
    let seed_itinerary = lorenz_itinerary(system, &seed.x, seed.t, tol)?;
    let itinerary_mismatch = symbol_sequence.is_some() && symbol_sequence != seed_itinerary;

    Ok(PeriodicOrbitRecord {
        seed: Seed { gap, ..seed.clone() },
        point: p,
        period,
        theta_fit,
        theta_model: "piecewise-linear".into(),
        c_bound,
        d_bound,
        gap,
        residual,
        residual_history: history,
        iterations,
        floquet,
        symbol_sequence,
        seed_itinerary,
        itinerary_mismatch,
        left_tube,
    })
}

/// Pass/fail on the shadowing items for one record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShadowingReport {
    pub epsilon: f64,
    /// (a) θ' ∈ (1-ε, 1+ε) on every segment.
    pub theta_slopes: Vec<f64>,
    pub a_reparametrization: bool,
    /// (b) periodicity residual below the tolerance.
    pub b_periodic: bool,
    /// (c) c_bound ≤ ε.
    pub c_proximity: bool,
    /// (d) d_bound finite; gap scaling is checked by [`gap_scaling`].
    pub d_finite: bool,
    /// (e) Floquet spectrum hyperbolic apart from one eigenvalue near 1.
    pub unit_distance: f64,
    pub e_hyperbolic: bool,
    pub passes: bool,
}

/// Distance below which a Floquet modulus counts as neutral.
const NEUTRAL_MARGIN: f64 = 1e-3;

pub fn verify_shadowing(record: &PeriodicOrbitRecord, epsilon: f64, residual_tol: f64, unit_tol: f64) -> ShadowingReport {
    let theta_slopes: Vec<f64> = record
        .theta_fit
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    let a = theta_slopes.iter().all(|s| (s - 1.0).abs() < epsilon);
    let b = record.residual < residual_tol;
    let c = record.c_bound <= epsilon && epsilon > 0.0 || record.c_bound == 0.0 && epsilon > 0.0;
    let d_finite = record.d_bound.is_finite();
    let mut by_unit: Vec<(f64, f64)> = record
        .floquet
        .iter()
        .map(|&(re, im)| (((re - 1.0).powi(2) + im * im).sqrt(), (re * re + im * im).sqrt()))
        .collect();
    by_unit.sort_by(|x, y| x.0.total_cmp(&y.0));
    let unit_distance = by_unit.first().map_or(f64::INFINITY, |u| u.0);
    let e = unit_distance < unit_tol && by_unit[1..].iter().all(|&(_, r)| r.ln().abs() > NEUTRAL_MARGIN);
    ShadowingReport {
        epsilon,
        theta_slopes,
        a_reparametrization: a,
        b_periodic: b,
        c_proximity: c,
        d_finite,
        unit_distance,
        e_hyperbolic: e,
        passes: a && b && c && d_finite && e,
    }
}

/// Max displacement over gap for seeds restarted from p + d·v, v a unit
/// normal to the flow at p, one per gap d.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapScaling {
    pub offsets: Vec<f64>,
    pub gaps: Vec<f64>,
    pub ratios: Vec<f64>,
    /// max ratio / min ratio.
    pub spread: f64,
}

pub fn gap_scaling(system: &FlowSystem, record: &PeriodicOrbitRecord, offsets: &[f64], config: &ShadowConfig) -> Result<GapScaling> {
    let f = DVector::from_vec(system.evaluate(&record.point)?).normalize();
    let d = f.len();
    let mut v = DVector::from_fn(d, |i, _| 1.0 + 0.61 * i as f64);
    v -= &f * f.dot(&v);
    v /= v.norm();
    let out: Vec<(f64, f64)> = offsets
        .par_iter()
        .map(|&off| {
            let seed = Seed {
                x: axpy(&record.point, off, v.as_slice()),
                t: record.period,
                start_time: 0.0,
                gap: f64::NAN,
            };
            let rec = shadow_periodic(system, &seed, config)?;
            Ok((rec.gap, rec.d_bound))
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<f64> = out.iter().map(|o| o.1).collect();
    let hi = ratios.iter().copied().fold(f64::MIN, f64::max);
    let lo = ratios.iter().copied().fold(f64::MAX, f64::min);
    Ok(GapScaling {
        offsets: offsets.to_vec(),
        gaps: out.iter().map(|o| o.0).collect(),
        spread: hi / lo,
        ratios,
    })
}
