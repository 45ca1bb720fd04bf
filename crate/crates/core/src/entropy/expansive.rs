use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::maps::{IteratedMap, Metric};
use super::spanning::{fit_linear_regime, greedy_cover, seeded_order, Trajectories};
use crate::error::{check_dim, Error, Result};
use crate::flow::{tangent_flow, FlowSystem, TangentPropagator, Tolerance};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpansivenessConfig {
    /// Survivors the flow sampler tries to collect.
    pub survivors: usize,
    /// Candidate draws (rejection sampling) or straddle lines (flows).
    pub max_attempts: usize,
    pub eps_inner: f64,
    pub seed: u64,
    pub linearity_tolerance: f64,
}

impl Default for ExpansivenessConfig {
    fn default() -> Self {
        Self {
            survivors: 16,
            max_attempts: 400,
            eps_inner: 0.01,
            seed: 0,
            linearity_tolerance: 0.15,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpansivenessReport {
    pub center: Vec<f64>,
    pub delta: f64,
    pub n_max: usize,
    pub survivors: usize,
    pub attempts: usize,
    /// Spanning counts of the survivor set at `eps_inner`, n = 1..=n_max.
    pub counts: Vec<usize>,
    pub slope: f64,
    /// Largest distance from a survivor's image to the flow line through
    /// the center's image, at `mid_iterate`. None for discrete maps.
    pub collapse_distance: Option<f64>,
    pub mid_iterate: usize,
    /// No survivors were found; the slope is reported as 0.
    pub low_confidence: bool,
    /// Only forward balls B_n are probed; no backward iteration is done.
    pub forward_only: bool,
}

fn check_probe(delta: f64, n_max: usize, config: &ExpansivenessConfig) -> Result<()> {
    if !(delta > 0.0) || n_max == 0 || !(config.eps_inner > 0.0) {
        return Err(Error::Input("need delta > 0, n_max >= 1 and eps_inner > 0".into()));
    }
    Ok(())
}

/// Uniform point in the unit ball of dimension `d`.
fn unit_ball(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|a| a * a).sum::<f64>() <= 1.0 {
            return v;
        }
    }
}

fn survivor_slope(
    traj: &Trajectories,
    n_max: usize,
    config: &ExpansivenessConfig,
) -> (Vec<usize>, f64) {
    if traj.is_empty() {
        return (Vec::new(), 0.0);
    }
    let order = seeded_order(traj.len(), config.seed);
    let counts: Vec<usize> = (1..=n_max)
        .map(|n| greedy_cover(traj, n, config.eps_inner, &order))
        .collect();
    let ns: Vec<usize> = (1..=n_max).collect();
    let logs: Vec<f64> = counts.iter().map(|&c| (c.max(1) as f64).ln()).collect();
    let slope = fit_linear_regime(&ns, &logs, config.linearity_tolerance)
        .map(|f| f.slope)
        .unwrap_or(0.0);
    (counts, slope)
}

/// Probe B_n(x, δ) of an iterated map by rejection: draw candidates in the
/// δ-ball, keep those whose first n_max iterates stay within δ of x's, and
/// count the survivors with dynamical balls of radius `eps_inner`.
pub fn expansiveness_probe<M: IteratedMap + ?Sized>(
    map: &M,
    x: &[f64],
    delta: f64,
    n_max: usize,
    config: &ExpansivenessConfig,
) -> Result<ExpansivenessReport> {
    let d = map.dim();
    check_dim(d, x.len())?;
    check_probe(delta, n_max, config)?;
    let metric = map.metric();
    let mut center = vec![0.0; n_max * d];
    map.orbit(x, n_max, &mut center).map_err(|k| Error::Divergence {
        last_valid_time: k as f64,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut data = Vec::new();
    let mut buf = vec![0.0; n_max * d];
    for _ in 0..config.max_attempts {
        let y: Vec<f64> = unit_ball(&mut rng, d)
            .iter()
            .zip(x)
            .map(|(u, c)| c + delta * u)
            .collect();
        if map.orbit(&y, n_max, &mut buf).is_err() {
            continue;
        }
        let inside = (0..n_max)
            .all(|j| metric.dist(&buf[j * d..(j + 1) * d], &center[j * d..(j + 1) * d]) <= delta);
        if inside {
            data.extend_from_slice(&buf);
        }
    }
    let traj = Trajectories::from_orbits(d, n_max, metric, data);
    let (counts, slope) = survivor_slope(&traj, n_max, config);
    Ok(ExpansivenessReport {
        center: x.to_vec(),
        delta,
        n_max,
        survivors: traj.len(),
        attempts: config.max_attempts,
        counts,
        slope,
        collapse_distance: None,
        mid_iterate: n_max / 2,
        low_confidence: traj.is_empty(),
        forward_only: true,
    })
}

/// Reference orbit of the center at unit times with a forward-transported
/// vector, which aligns with the most expanded direction.
struct Reference {
    points: Vec<Vec<f64>>,
    fields: Vec<DVector<f64>>,
    /// Transported vector with its flow component removed, unit length.
    unstable: Vec<DVector<f64>>,
    /// Length of the unit transported vector's normal part at each step.
    unstable_sine: Vec<f64>,
}

impl Reference {
    fn new(system: &FlowSystem, x: &[f64], n: usize, tol: Tolerance) -> Result<Self> {
        let d = x.len();
        let mut prop = TangentPropagator::new(system, 1, tol);
        let mut y = x.to_vec();
        let mut v = DMatrix::from_fn(d, 1, |i, _| 1.0 + 0.37 * i as f64);
        v /= v.norm();
        let mut points = vec![y.clone()];
        let mut raw = vec![v.column(0).into_owned()];
        for _ in 1..n {
            prop.advance(&mut y, &mut v, 1.0)?;
            v /= v.norm();
            points.push(y.clone());
            raw.push(v.column(0).into_owned());
        }
        let fields: Vec<DVector<f64>> = points
            .iter()
            .map(|p| system.evaluate(p).map(DVector::from_vec))
            .collect::<Result<_>>()?;
        let (unstable, unstable_sine) = raw
            .into_iter()
            .zip(&fields)
            .map(|(v, f)| {
                let f = f.normalize();
                let n = &v - &f * f.dot(&v);
                let sine = n.norm();
                (n / sine, sine)
            })
            .unzip();
        Ok(Self {
            points,
            fields,
            unstable,
            unstable_sine,
        })
    }

    /// Part of an offset at step j orthogonal to the flow.
    fn normal(&self, j: usize, w: &DVector<f64>) -> DVector<f64> {
        let f = self.fields[j].normalize();
        w - &f * f.dot(w)
    }
}

const SHOOT_ITERATIONS: usize = 12;
const SHOOT_RESIDUAL: f64 = 1e-9;

/// Offsets w_0..w_{n-1} along the reference orbit with
/// φ_1(x_j + w_j) = x_{j+1} + w_{j+1}, the components of w_0 along the
/// columns of `start` fixed to `a`, and the components of w_{n-1} along
/// the columns of `end` fixed to `b`, starting from the guess `w`. Solved
/// by damped Newton on all segments at once, so integration error is never
/// amplified across the window. Returns None when Newton fails to converge.
fn shoot(
    system: &FlowSystem,
    refr: &Reference,
    start: &DMatrix<f64>,
    a: &DVector<f64>,
    end: &DMatrix<f64>,
    b: &DVector<f64>,
    mut w: Vec<DVector<f64>>,
    tol: Tolerance,
) -> Result<Option<Vec<DVector<f64>>>> {
    let n = refr.points.len();
    let d = refr.points[0].len();
    let size = n * d;
    let eye = DMatrix::identity(d, d);
    let residual = |w: &[DVector<f64>], jac: Option<&mut Vec<DMatrix<f64>>>| -> Result<DVector<f64>> {
        let mut r = DVector::zeros(size);
        let k = a.len();
        r.rows_mut(0, k).copy_from(&(start.transpose() * &w[0] - a));
        r.rows_mut(k, d - k).copy_from(&(end.transpose() * &w[n - 1] - b));
        let mut blocks = Vec::with_capacity(n - 1);
        for j in 0..n - 1 {
            let p: Vec<f64> = refr.points[j].iter().zip(w[j].iter()).map(|(x, o)| x + o).collect();
            let (y, m) = tangent_flow(system, &p, &eye, 1.0, tol)?;
            for i in 0..d {
                r[d + j * d + i] = y[i] - refr.points[j + 1][i] - w[j + 1][i];
            }
            blocks.push(m);
        }
        if let Some(out) = jac {
            *out = blocks;
        }
        Ok(r)
    };
    let mut blocks = Vec::new();
    let mut r = residual(&w, Some(&mut blocks))?;
    for _ in 0..SHOOT_ITERATIONS {
        if r.amax() < SHOOT_RESIDUAL {
            return Ok(Some(w));
        }
        let mut jac = DMatrix::zeros(size, size);
        let k = a.len();
        jac.view_mut((0, 0), (k, d)).copy_from(&start.transpose());
        jac.view_mut((k, (n - 1) * d), (d - k, d)).copy_from(&end.transpose());
        for (j, m) in blocks.iter().enumerate() {
            jac.view_mut((d + j * d, j * d), (d, d)).copy_from(m);
            jac.view_mut((d + j * d, (j + 1) * d), (d, d)).copy_from(&(-&eye));
        }
        let Some(step) = jac.lu().solve(&(-&r)) else {
            return Ok(None);
        };
        let norm0 = r.norm();
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let trial: Vec<DVector<f64>> = (0..n)
                .map(|j| &w[j] + step.rows(j * d, d) * lambda)
                .collect();
            let mut trial_blocks = Vec::new();
            match residual(&trial, Some(&mut trial_blocks)) {
                Ok(tr) if tr.norm() < norm0 => {
                    w = trial;
                    r = tr;
                    blocks = trial_blocks;
                    accepted = true;
                    break;
                }
                _ => lambda *= 0.5,
            }
        }
        if !accepted {
            return Ok(None);
        }
    }
    Ok((r.amax() < SHOOT_RESIDUAL).then_some(w))
}

/// Flow version of [`expansiveness_probe`] for the time-one map. Survivors
/// of B_n(x, δ) are exponentially rare, so they are constructed: each
/// attempt prescribes the stable components of the first offset and the
/// unstable component of the last, and solves for the pseudo-orbit by
/// multiple shooting. The nearly neutral time shift is then chosen to keep
/// the offsets tightest. A candidate counts if every offset lies in the δ
/// ball; by shadowing a true survivor lies within the shooting residual of
/// it. The collapse distance is measured at the middle iterate, where
/// survivors of the forward ball approximate a two-sided ball around the
/// center's image.
pub fn flow_expansiveness_probe(
    system: &FlowSystem,
    x: &[f64],
    delta: f64,
    n_max: usize,
    config: &ExpansivenessConfig,
    tol: impl Into<Tolerance>,
) -> Result<ExpansivenessReport> {
    let tol = tol.into();
    let d = system.dim();
    check_dim(d, x.len())?;
    check_probe(delta, n_max, config)?;
    if d < 2 {
        return Err(Error::Input("flow probe needs dimension >= 2".into()));
    }
    if n_max < 2 {
        return Err(Error::Input("flow probe needs n_max >= 2".into()));
    }
    let refr = Reference::new(system, x, n_max, tol)?;
    let mid = n_max / 2;
    let speed0 = refr.fields[0].norm();
    let flow_dir0 = &refr.fields[0] / speed0;
    let end = DMatrix::from_columns(&[refr.unstable[n_max - 1].clone()]);
    // Most contracted d-2 directions of Φ_2(x), orthonormalized together
    // with the flow direction.
    let (_, phi) = tangent_flow(system, x, &DMatrix::identity(d, d), 2.0, tol)?;
    let svd = phi.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Input("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let mut cols = vec![flow_dir0];
    cols.extend(order[..d - 2].iter().map(|&k| v_t.row(k).transpose()));
    let start = DMatrix::from_columns(&cols).qr().q();
    let widest = |w: &[DVector<f64>], s: f64| {
        w.iter()
            .zip(&refr.fields)
            .map(|(o, f)| (o + f * s).norm())
            .fold(0.0, f64::max)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut data = Vec::new();
    let mut collapse: f64 = 0.0;
    let mut found = 0;
    let mut attempts = 0;
    while attempts < config.max_attempts && found < config.survivors {
        attempts += 1;
        let beta = unit_ball(&mut rng, d - 2);
        let mut a = DVector::zeros(d - 1);
        for (k, v) in beta.iter().enumerate() {
            a[k + 1] = 0.8 * delta * v;
        }
        // An unstable offset nearly along the flow is mostly time shift.
        let reach = 0.9 * delta * refr.unstable_sine[n_max - 1];
        let b = DVector::from_element(1, rng.random_range(-reach..=reach));
        let guess = vec![DVector::zeros(d); n_max];
        let Some(w) = shoot(system, &refr, &start, &a, &end, &b, guess, tol)? else {
            continue;
        };
        // The time shift is nearly neutral: pick the one that keeps the
        // offsets tightest, then re-solve with it.
        let (mut lo, mut hi) = (-delta / speed0, delta / speed0);
        for _ in 0..60 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if widest(&w, m1) < widest(&w, m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let shift = 0.5 * (lo + hi);
        a[0] = start.column(0).dot(&(&w[0] + &refr.fields[0] * shift));
        let guess = w.iter().zip(&refr.fields).map(|(o, f)| o + f * shift).collect();
        let Some(w) = shoot(system, &refr, &start, &a, &end, &b, guess, tol)? else {
            continue;
        };
        if w.iter().any(|o| o.norm() > delta) {
            continue;
        }
        collapse = collapse.max(refr.normal(mid, &w[mid]).norm());
        for (p, o) in refr.points.iter().zip(&w) {
            data.extend(p.iter().zip(o.iter()).map(|(x, o)| x + o));
        }
        found += 1;
    }
    let traj = Trajectories::from_orbits(d, n_max, Metric::Euclidean, data);
    let (counts, slope) = survivor_slope(&traj, n_max, config);
    Ok(ExpansivenessReport {
        center: x.to_vec(),
        delta,
        n_max,
        survivors: found,
        attempts,
        counts,
        slope,
        collapse_distance: (found > 0).then_some(collapse),
        mid_iterate: mid,
        low_confidence: found == 0,
        forward_only: true,
    })
}

#[cfg(test)]
mod tests {
    use super::super::maps::{DoublingMap, TimeOneMap};
    use super::*;

    #[test]
    fn contracting_flow_keeps_everything_and_has_zero_slope() {
        let map = TimeOneMap::new(FlowSystem::linear_diagonal(&[-2.0, -2.0]).unwrap(), 1e-10);
        let cfg = ExpansivenessConfig {
            max_attempts: 50,
            eps_inner: 0.05,
            ..Default::default()
        };
        let r = expansiveness_probe(&map, &[0.0, 0.0], 0.2, 8, &cfg).unwrap();
        assert_eq!(r.survivors, 50);
        assert!(r.slope.abs() < 1e-12);
        assert!(!r.low_confidence);
    }

    #[test]
    fn doubling_with_large_delta_has_log_two_slope() {
        let cfg = ExpansivenessConfig {
            max_attempts: 4096,
            eps_inner: 0.1,
            ..Default::default()
        };
        let r = expansiveness_probe(&DoublingMap, &[0.3], 0.5, 8, &cfg).unwrap();
        assert_eq!(r.survivors, 4096);
        assert!((r.slope - 2f64.ln()).abs() < 0.05, "{}", r.slope);
    }

    #[test]
    fn empty_survivor_set_is_flagged() {
        let cfg = ExpansivenessConfig {
            max_attempts: 20,
            ..Default::default()
        };
        let r = expansiveness_probe(&DoublingMap, &[0.3], 1e-4, 12, &cfg).unwrap();
        assert!(r.low_confidence || r.survivors > 0);
        if r.survivors == 0 {
            assert_eq!(r.slope, 0.0);
        }
    }

    #[test]
    fn saddle_survivors_collapse_onto_stable_axis() {
        let sys = FlowSystem::linear_diagonal(&[-2.0, 1.0]).unwrap();
        let cfg = ExpansivenessConfig {
            survivors: 4,
            max_attempts: 40,
            ..Default::default()
        };
        let r = flow_expansiveness_probe(&sys, &[0.05, 0.0], 0.1, 12, &cfg, 1e-10).unwrap();
        assert_eq!(r.survivors, 4);
        // Survivors leave the ball no earlier than step 11: the normal
        // offset at step 6 is at most 0.1·e^{-5}.
        assert!(r.collapse_distance.unwrap() <= 0.1 * (-5f64).exp() * 1.001);
        assert!(r.slope.abs() < 0.05);
    }
}
