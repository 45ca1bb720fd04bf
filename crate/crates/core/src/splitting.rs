//! Lyapunov spectra, Oseledets directions, dominated-splitting and
//! sectional-expansion certificates, and singularity classification.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flow::{FlowSystem, TangentCocycleState, TangentPropagator, Tolerance};
use crate::linalg::{fit_line, oblique_split, orthogonal_complement, principal_angle, qr_positive};
use crate::poincare::{project_subspace, singular_threshold, CocycleChain, NormalFrame};

/// Drift below which finite-time exponents count as converged.
pub const DRIFT_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Sorted descending, per unit time.
    pub exponents: Vec<f64>,
    pub window: f64,
    pub renorm_step: f64,
    /// Max deviation of each running estimate from its final value over the
    /// last half-window.
    pub convergence: Vec<f64>,
    pub converged: bool,
    /// Time average of div X along the orbit.
    pub divergence_average: f64,
    /// The orbit came within the near-singularity threshold.
    pub near_singular: bool,
    pub final_point: Vec<f64>,
}

impl LyapunovReport {
    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }
}

/// Benettin QR iteration of a full tangent frame.
pub fn lyapunov_spectrum(
    system: &FlowSystem,
    x0: &[f64],
    window: f64,
    renorm_step: f64,
    tol: impl Into<Tolerance>,
) -> Result<LyapunovReport> {
    check_dim(system.dim(), x0.len())?;
    let tol = tol.into();
    tol.validate()?;
    if !(renorm_step > 0.0) || !(window >= 100.0 * renorm_step) || !window.is_finite() {
        return Err(Error::Input(format!(
            "need window >= 100 * renorm_step > 0, got window={window}, renorm_step={renorm_step}"
        )));
    }
    let n = system.dim();
    let steps = (window / renorm_step).round() as usize;
    let mut prop = TangentPropagator::new(system, n, tol);
    let mut state = TangentCocycleState::new(x0, n);
    let threshold = singular_threshold(system);
    let mut near_singular = system.speed(x0) < threshold;
    let mut div_sum = 0.0;
    let mut div_prev = system.divergence(x0);
    let half = steps / 2;
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(steps - half + 1);
    for k in 1..=steps {
        state.advance(&mut prop, renorm_step)?;
        state.reorthonormalize()?;
        let div = system.divergence(&state.point);
        div_sum += 0.5 * (div + div_prev) * renorm_step;
        div_prev = div;
        near_singular |= system.speed(&state.point) < threshold;
        if k >= half {
            let t = k as f64 * renorm_step;
            history.push(state.log_r.iter().map(|l| l / t).collect());
        }
    }
    let total = steps as f64 * renorm_step;
    let last = history.last().expect("at least one step").clone();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let drift = history
                .iter()
                .map(|h| (h[i] - last[i]).abs())
                .fold(0.0, f64::max);
            (last[i], drift)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let convergence: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(LyapunovReport {
        exponents: pairs.iter().map(|p| p.0).collect(),
        window: total,
        renorm_step,
        converged: convergence.iter().all(|&d| d < DRIFT_TOLERANCE),
        convergence,
        divergence_average: div_sum / total,
        near_singular,
        final_point: state.point,
    })
}

/// A fixed, generic n×k frame.
fn generic_frame(n: usize, k: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, k, |i, j| (1.3 * i as f64 + 2.7 * j as f64 + 0.5).sin() + 0.1 * (i * k + j) as f64);
    qr_positive(&m).0
}

/// Per-sample E and F estimates along a cocycle chain. Estimates exist for
/// chain indices in [first, last].
#[derive(Clone, Debug)]
pub struct SplittingField {
    pub chain: CocycleChain,
    pub d_f: usize,
    pub lookback_steps: usize,
    pub first: usize,
    pub last: usize,
    pub e: Vec<DMatrix<f64>>,
    pub f: Vec<DMatrix<f64>>,
    /// Max principal angle moved by doubling the lookback, per sample.
    pub convergence: Vec<f64>,
    /// Samples whose estimates failed the convergence gate.
    pub unconverged: Vec<usize>,
}

/// Angle moved under doubled lookback that counts as converged.
pub const CONVERGENCE_GATE: f64 = 0.01;

impl SplittingField {
    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    /// Chain index of the i-th estimate.
    pub fn chain_index(&self, i: usize) -> usize {
        self.first + i
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.chain.points[self.first + i]
    }

    /// Whether every estimate passed the convergence gate.
    pub fn converged(&self) -> bool {
        self.unconverged.is_empty()
    }

    /// The tangent-bundle splitting as a sampled cocycle.
    pub fn tangent(&self) -> SampledSplitting {
        let len = self.chain.len();
        let mut e = vec![None; len];
        let mut f = vec![None; len];
        for i in 0..self.len() {
            e[self.first + i] = Some(self.e[i].clone());
            f[self.first + i] = Some(self.f[i].clone());
        }
        SampledSplitting {
            points: self.chain.points.clone(),
            steps: self.chain.phi.clone(),
            e,
            f,
        }
    }

    /// (π(E), π(F)) under ψ*, in per-point normal frames. Samples near a
    /// singularity have no estimate.
    pub fn scaled_poincare(&self, system: &FlowSystem) -> SampledSplitting {
        let len = self.chain.len();
        let frames: Vec<Option<NormalFrame>> = self
            .chain
            .points
            .iter()
            .map(|x| NormalFrame::at(system, x).ok())
            .collect();
        let d = system.dim() - 1;
        let steps = (0..len - 1)
            .map(|k| match (&frames[k], &frames[k + 1]) {
                (Some(a), Some(b)) => {
                    let ratio =
                        system.speed(&self.chain.points[k]) / system.speed(&self.chain.points[k + 1]);
                    b.basis.transpose() * &self.chain.phi[k] * &a.basis * ratio
                }
                _ => DMatrix::from_element(d, d, f64::NAN),
            })
            .collect();
        let mut e = vec![None; len];
        let mut f = vec![None; len];
        for i in 0..self.len() {
            let k = self.first + i;
            if let Some(frame) = &frames[k] {
                e[k] = Some(project_subspace(frame, &self.e[i]));
                f[k] = Some(project_subspace(frame, &self.f[i]));
            }
        }
        SampledSplitting {
            points: self.chain.points.clone(),
            steps,
            e,
            f,
        }
    }
}

fn push_forward(chain: &CocycleChain, from: usize, to: usize, mut frame: DMatrix<f64>) -> DMatrix<f64> {
    for k in from..to {
        frame = qr_positive(&(&chain.phi[k] * frame)).0;
    }
    frame
}

fn pull_back_adjoint(chain: &CocycleChain, from: usize, to: usize, mut frame: DMatrix<f64>) -> DMatrix<f64> {
    for k in (to..from).rev() {
        frame = qr_positive(&(chain.phi[k].transpose() * frame)).0;
    }
    frame
}

/// F(x_k): a generic d_F-frame pushed forward from x_{k-L}. E(x_k): the
/// orthogonal complement of the most expanded d_F right-singular subspace
/// of Φ over [k, k+L], found by iterating the adjoint backward. Both are
/// recomputed with lookback 2L as a convergence check.
pub fn oseledets_directions(
    chain: CocycleChain,
    lookback: f64,
    d_f: usize,
) -> Result<SplittingField> {
    let n = chain.points.first().map(|p| p.len()).unwrap_or(0);
    if d_f == 0 || d_f >= n {
        return Err(Error::Input(format!("need 0 < d_F < {n}, got {d_f}")));
    }
    if !(lookback >= 20.0) {
        return Err(Error::Input(format!("lookback must be >= 20, got {lookback}")));
    }
    let l = (lookback / chain.step).round().max(1.0) as usize;
    let len = chain.len();
    if len < 4 * l + 1 {
        return Err(Error::Input(format!(
            "chain of {len} samples too short for lookback {l} steps"
        )));
    }
    let first = 2 * l;
    let last = len - 1 - 2 * l;
    let g = generic_frame(n, d_f);
    let est: Vec<(DMatrix<f64>, DMatrix<f64>, f64)> = (first..=last)
        .into_par_iter()
        .map(|k| {
            let f1 = push_forward(&chain, k - l, k, g.clone());
            let f2 = push_forward(&chain, k - 2 * l, k, g.clone());
            let a1 = pull_back_adjoint(&chain, k + l, k, g.clone());
            let a2 = pull_back_adjoint(&chain, k + 2 * l, k, g.clone());
            let e1 = orthogonal_complement(&a1);
            let e2 = orthogonal_complement(&a2);
            let moved = principal_angle(&f1, &f2).max(principal_angle(&e1, &e2));
            (e2, f2, moved)
        })
        .collect();
    let mut e = Vec::with_capacity(est.len());
    let mut f = Vec::with_capacity(est.len());
    let mut convergence = Vec::with_capacity(est.len());
    let mut unconverged = Vec::new();
    for (i, (ei, fi, c)) in est.into_iter().enumerate() {
        if !(c < CONVERGENCE_GATE) {
            unconverged.push(i);
        }
        e.push(ei);
        f.push(fi);
        convergence.push(c);
    }
    Ok(SplittingField {
        chain,
        d_f,
        lookback_steps: l,
        first,
        last,
        e,
        f,
        convergence,
        unconverged,
    })
}

/// Average of (1/step) log|M_k e_k| over consecutive samples, where e_k spans
/// a one-dimensional field. Used to read off the growth rate of E.
pub fn line_field_rate(steps: &[DMatrix<f64>], field: &[DMatrix<f64>], first: usize, step: f64) -> f64 {
    let mut s = 0.0;
    let count = field.len().saturating_sub(1);
    for i in 0..count {
        let v = field[i].column(0);
        s += (&steps[first + i] * v).norm().ln();
    }
    s / (count as f64 * step)
}

/// A cocycle sampled along an orbit with a candidate splitting at each
/// sample. steps[k] maps the fiber at k to the fiber at k+1.
#[derive(Clone, Debug)]
pub struct SampledSplitting {
    pub points: Vec<Vec<f64>>,
    pub steps: Vec<DMatrix<f64>>,
    pub e: Vec<Option<DMatrix<f64>>>,
    pub f: Vec<Option<DMatrix<f64>>>,
}

impl SampledSplitting {
    /// Same cocycle with the roles of E and F exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            points: self.points.clone(),
            steps: self.steps.clone(),
            e: self.f.clone(),
            f: self.e.clone(),
        }
    }

    /// Sample indices where the splitting is defined at k..=k+l.
    pub fn coverable(&self, l: usize) -> Vec<usize> {
        (0..self.points.len().saturating_sub(l))
            .filter(|&k| (k..=k + l).all(|j| self.e[j].is_some() && self.f[j].is_some()))
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DominationWitness {
    pub index: usize,
    pub point: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub ratio: f64,
    pub contraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DominationCertificate {
    pub sample_count: usize,
    pub violation_count: usize,
    pub worst_ratio: f64,
    pub contraction_factor: f64,
    pub l: usize,
    pub aperture: f64,
    pub passes: bool,
    pub worst: Option<DominationWitness>,
}

/// Deterministic grid of unit vectors in span(basis).
fn unit_grid(basis: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let k = basis.ncols();
    match k {
        1 => vec![basis.column(0).normalize()],
        2 => (0..8)
            .map(|i| {
                let th = i as f64 * std::f64::consts::PI / 8.0;
                (basis.column(0) * th.cos() + basis.column(1) * th.sin()).normalize()
            })
            .collect(),
        _ => {
            let mut out: Vec<DVector<f64>> = (0..k).map(|i| basis.column(i).normalize()).collect();
            for i in 0..k {
                for j in i + 1..k {
                    out.push((basis.column(i) + basis.column(j)).normalize());
                    out.push((basis.column(i) - basis.column(j)).normalize());
                }
            }
            out
        }
    }
}

/// log of the growth of `v` through steps k..k+l, projecting onto `target`
/// along `other` after every step.
fn chain_growth(
    split: &SampledSplitting,
    k: usize,
    l: usize,
    v: &DVector<f64>,
    into_e: bool,
) -> Option<f64> {
    let mut w = v.clone();
    let mut log = 0.0;
    for j in k..k + l {
        let img = &split.steps[j] * &w;
        let (e, f) = (split.e[j + 1].as_ref()?, split.f[j + 1].as_ref()?);
        let (ve, vf) = oblique_split(&img, e, f)?;
        let p = if into_e { ve } else { vf };
        let nrm = p.norm();
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Some(f64::NEG_INFINITY);
        }
        log += nrm.ln();
        w = p / nrm;
    }
    Some(log)
}

fn sample_check(split: &SampledSplitting, k: usize, l: usize, a: f64) -> Option<(f64, f64, DVector<f64>, DVector<f64>)> {
    let e0 = split.e[k].as_ref()?;
    let f0 = split.f[k].as_ref()?;
    let el = split.e[k + l].as_ref()?;
    let fl = split.f[k + l].as_ref()?;
    let ge = unit_grid(e0);
    let gf = unit_grid(f0);

    // Ratio inequality.
    let mut max_e = (f64::NEG_INFINITY, ge[0].clone());
    for u in &ge {
        let g = chain_growth(split, k, l, u, true)?;
        if g > max_e.0 {
            max_e = (g, u.clone());
        }
    }
    let mut min_f = (f64::INFINITY, gf[0].clone());
    for v in &gf {
        let g = chain_growth(split, k, l, v, false)?;
        if g < min_f.0 {
            min_f = (g, v.clone());
        }
    }
    let log_ratio = max_e.0 - min_f.0;
    let ratio = if log_ratio.is_nan() { f64::INFINITY } else { log_ratio.exp() };

    // Forward invariance of the F-cone.
    let mut contraction: f64 = 0.0;
    for vf in &gf {
        for ve in &ge {
            let mut w = vf + ve * a;
            for j in k..k + l {
                w = &split.steps[j] * w;
                let nw = w.norm();
                w /= nw;
            }
            let (we, wf) = oblique_split(&w, el, fl)?;
            let ap = we.norm() / wf.norm();
            contraction = contraction.max(ap / a);
        }
    }
    // Backward invariance of the E-cone.
    let gel = unit_grid(el);
    let gfl = unit_grid(fl);
    for ve in &gel {
        for vf in &gfl {
            let mut w = ve + vf * a;
            for j in (k..k + l).rev() {
                w = split.steps[j].clone().lu().solve(&w)?;
                let nw = w.norm();
                w /= nw;
            }
            let (we, wf) = oblique_split(&w, e0, f0)?;
            let ap = wf.norm() / we.norm();
            contraction = contraction.max(ap / a);
        }
    }
    if contraction.is_nan() {
        contraction = f64::INFINITY;
    }
    Some((ratio, contraction, max_e.1, min_f.1))
}

/// Ratio inequality with factor 1/2 plus cone invariance with strict
/// contraction, at every sample in `samples` (indices into `split`).
pub fn check_dominated_splitting(
    split: &SampledSplitting,
    samples: &[usize],
    l: usize,
    aperture: f64,
) -> Result<DominationCertificate> {
    if l == 0 || !(aperture > 0.0) {
        return Err(Error::Input("need L >= 1 and aperture > 0".into()));
    }
    for &k in samples {
        if k + l >= split.points.len()
            || !(k..=k + l).all(|j| split.e[j].is_some() && split.f[j].is_some())
        {
            return Err(Error::Coverage { index: k });
        }
    }
    let results: Vec<Option<(f64, f64, DVector<f64>, DVector<f64>)>> = samples
        .par_iter()
        .map(|&k| sample_check(split, k, l, aperture))
        .collect();
    let mut violation_count = 0;
    let mut worst_ratio: f64 = 0.0;
    let mut contraction_factor: f64 = 0.0;
    let mut worst: Option<DominationWitness> = None;
    let mut worst_score = f64::NEG_INFINITY;
    for (&k, r) in samples.iter().zip(results) {
        let (ratio, contraction, u, v) = match r {
            Some(r) => r,
            None => return Err(Error::Coverage { index: k }),
        };
        if ratio > 0.5 || contraction >= 1.0 || !ratio.is_finite() {
            violation_count += 1;
        }
        worst_ratio = worst_ratio.max(ratio);
        contraction_factor = contraction_factor.max(contraction);
        let score = (2.0 * ratio).max(contraction);
        if score > worst_score {
            worst_score = score;
            worst = Some(DominationWitness {
                index: k,
                point: split.points[k].clone(),
                u: u.as_slice().to_vec(),
                v: v.as_slice().to_vec(),
                ratio,
                contraction,
            });
        }
    }
    Ok(DominationCertificate {
        sample_count: samples.len(),
        violation_count,
        worst_ratio,
        contraction_factor,
        l,
        aperture,
        passes: violation_count == 0 && worst_ratio <= 0.5,
        worst,
    })
}

/// Largest step tried by the domination search.
pub const L_MAX: usize = 20;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum DominationVerdict {
    Passed { l: usize },
    /// No L up to the maximum passed; says nothing either way.
    Inconclusive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DominationSearch {
    pub verdict: DominationVerdict,
    pub certificate: DominationCertificate,
}

/// Smallest L in 1..=l_max whose certificate passes.
pub fn search_domination_step(
    split: &SampledSplitting,
    samples: &[usize],
    l_max: usize,
    aperture: f64,
) -> Result<DominationSearch> {
    let mut last = None;
    for l in 1..=l_max {
        let cert = check_dominated_splitting(split, samples, l, aperture)?;
        if cert.passes {
            return Ok(DominationSearch {
                verdict: DominationVerdict::Passed { l },
                certificate: cert,
            });
        }
        last = Some(cert);
    }
    Ok(DominationSearch {
        verdict: DominationVerdict::Inconclusive,
        certificate: last.ok_or_else(|| Error::Input("l_max must be >= 1".into()))?,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SectionalExpansionCertificate {
    /// Fitted rate of the worst plane.
    pub lambda_est: f64,
    /// exp(intercept) of the worst plane's fit.
    pub k_est: f64,
    pub worst_plane_rate: f64,
    pub mean_rate: f64,
    pub sample_rates: Vec<f64>,
    pub lambda_min: f64,
    pub passes: bool,
    pub worst_index: usize,
    pub worst_plane: Vec<Vec<f64>>,
}

/// Planes per point sampled when d_F > 2.
pub const PLANES_PER_POINT: usize = 64;

fn plane_grid(d_f: usize) -> Vec<DMatrix<f64>> {
    if d_f == 2 {
        return vec![DMatrix::identity(2, 2)];
    }
    if d_f == 3 {
        // 2-planes in R^3 are orthogonal complements of unit normals; take
        // the normals on a Fibonacci grid of the upper hemisphere.
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        return (0..PLANES_PER_POINT)
            .map(|i| {
                let z = 1.0 - (i as f64 + 0.5) / PLANES_PER_POINT as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                let nrm = DMatrix::from_column_slice(3, 1, &[r * th.cos(), r * th.sin(), z]);
                orthogonal_complement(&nrm)
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a55_17a1);
    (0..PLANES_PER_POINT)
        .map(|_| {
            let m = DMatrix::from_fn(d_f, 2, |_, _| rng.random_range(-1.0..1.0));
            qr_positive(&m).0
        })
        .collect()
}

/// log|det Φ_t|_V| on `t_grid`, re-orthonormalizing between grid times.
fn plane_log_areas(
    system: &FlowSystem,
    x: &[f64],
    plane: &DMatrix<f64>,
    t_grid: &[f64],
    tol: Tolerance,
) -> Result<Vec<f64>> {
    let mut prop = TangentPropagator::new(system, 2, tol);
    let mut st = TangentCocycleState::with_frame(x, qr_positive(plane).0);
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &tg in t_grid {
        st.advance(&mut prop, tg - t)?;
        st.reorthonormalize()?;
        t = tg;
        out.push(st.log_r.iter().sum());
    }
    Ok(out)
}

/// Fitted growth rate of 2-plane areas inside F at each sample.
pub fn check_sectional_expansion(
    system: &FlowSystem,
    points: &[Vec<f64>],
    f_field: &[DMatrix<f64>],
    t_grid: &[f64],
    lambda_min: f64,
    tol: impl Into<Tolerance>,
) -> Result<SectionalExpansionCertificate> {
    let tol = tol.into();
    if points.len() != f_field.len() || points.is_empty() {
        return Err(Error::Input("need one F basis per sample point".into()));
    }
    let d_f = f_field[0].ncols();
    if d_f < 2 || f_field.iter().any(|f| f.ncols() != d_f) {
        return Err(Error::Input("F field must be at least 2-dimensional".into()));
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] <= 0.0 {
        return Err(Error::Input("T grid must be positive and increasing".into()));
    }
    let grid = plane_grid(d_f);
    let mut ts = vec![0.0];
    ts.extend_from_slice(t_grid);
    let per_sample: Vec<Result<(f64, f64, usize, f64)>> = points
        .par_iter()
        .zip(f_field.par_iter())
        .map(|(x, f)| {
            let mut worst = (f64::INFINITY, 0.0, 0usize);
            let mut sum = 0.0;
            for (pi, coeffs) in grid.iter().enumerate() {
                let plane = f * coeffs;
                let mut logs = vec![0.0];
                logs.extend(plane_log_areas(system, x, &plane, t_grid, tol)?);
                let (slope, icpt) = fit_line(&ts, &logs);
                sum += slope;
                if slope < worst.0 {
                    worst = (slope, icpt, pi);
                }
            }
            Ok((worst.0, worst.1, worst.2, sum / grid.len() as f64))
        })
        .collect();
    let mut sample_rates = Vec::with_capacity(points.len());
    let mut mean = 0.0;
    let mut worst = (f64::INFINITY, 0.0, 0usize, 0usize);
    for (i, r) in per_sample.into_iter().enumerate() {
        let (w, icpt, pi, m) = r?;
        sample_rates.push(w);
        mean += m;
        if w < worst.0 {
            worst = (w, icpt, pi, i);
        }
    }
    mean /= points.len() as f64;
    let plane = &f_field[worst.3] * &grid[worst.2];
    Ok(SectionalExpansionCertificate {
        lambda_est: worst.0,
        k_est: worst.1.exp(),
        worst_plane_rate: worst.0,
        mean_rate: mean,
        sample_rates,
        lambda_min,
        passes: worst.0 >= lambda_min && lambda_min > 0.0,
        worst_index: worst.3,
        worst_plane: plane.column_iter().map(|c| c.as_slice().to_vec()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EigenClass {
    Stable,
    Center,
    Unstable,
    Neutral,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Eigen {
    pub re: f64,
    pub im: f64,
    pub class: EigenClass,
    /// Real eigenvector, or a basis of the real invariant plane of a
    /// complex pair.
    pub directions: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingularityReport {
    pub point: Vec<f64>,
    /// Sorted by real part, ties by |imaginary part|.
    pub eigenvalues: Vec<Eigen>,
    /// Eigenvalue indices spanning the F^cu candidate (center + unstable).
    pub f_candidate: Vec<usize>,
    /// (i, j, Re λ_i + Re λ_j) for every pair inside the candidate.
    pub sectional_rates: Vec<(usize, usize, f64)>,
    pub min_sectional_rate: Option<f64>,
    pub degenerate: bool,
    pub hyperbolic: bool,
    /// Sectional expansion is undefined (dimension or candidate too small).
    pub out_of_scope: bool,
    pub warnings: Vec<String>,
}

/// Eigen-decomposition of DX(σ) and the induced splitting for φ_1: the
/// center is the weakest contracting eigenvalue (a complex pair counts once).
pub fn singularity_analysis(system: &FlowSystem, sigma: &[f64]) -> Result<SingularityReport> {
    check_dim(system.dim(), sigma.len())?;
    let speed = system.speed(sigma);
    if !(speed < 1e-8) {
        return Err(Error::Input(format!("point is not an equilibrium: |X| = {speed:e}")));
    }
    let a = system.jacobian(sigma)?;
    let n = a.nrows();
    let ev = a.complex_eigenvalues();
    let mut vals: Vec<(f64, f64)> = ev.iter().map(|c| (c.re, c.im)).collect();
    vals.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.abs().total_cmp(&q.1.abs())).then(p.1.total_cmp(&q.1)));
    let scale = vals.iter().map(|v| v.0.hypot(v.1)).fold(1.0, f64::max);
    let mut warnings = Vec::new();
    let mut degenerate = false;
    for w in vals.windows(2) {
        if (w[0].0 - w[1].0).abs() < 1e-8 && (w[0].1 - w[1].1).abs() < 1e-8 {
            degenerate = true;
        }
    }
    if degenerate {
        warnings.push("repeated eigenvalues within 1e-8".into());
    }
    let hyperbolic = vals.iter().all(|v| v.0.abs() > 1e-10 * scale);
    if !hyperbolic {
        warnings.push("non-hyperbolic singularity; classification not attempted".into());
    }
    let weakest_contracting = vals
        .iter()
        .filter(|v| v.0 < 0.0)
        .map(|v| v.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let eigenvalues: Vec<Eigen> = vals
        .iter()
        .map(|&(re, im)| {
            let class = if !hyperbolic && re.abs() <= 1e-10 * scale {
                EigenClass::Neutral
            } else if re > 0.0 {
                EigenClass::Unstable
            } else if n >= 3 && re == weakest_contracting {
                EigenClass::Center
            } else {
                EigenClass::Stable
            };
            Eigen {
                re,
                im,
                class,
                directions: eigen_directions(&a, re, im),
            }
        })
        .collect();
    let f_candidate: Vec<usize> = eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.class, EigenClass::Center | EigenClass::Unstable))
        .map(|(i, _)| i)
        .collect();
    let out_of_scope = n < 3 || f_candidate.len() < 2 || !hyperbolic;
    let mut sectional_rates = Vec::new();
    if !out_of_scope {
        for (ii, &i) in f_candidate.iter().enumerate() {
            for &j in &f_candidate[ii + 1..] {
                sectional_rates.push((i, j, eigenvalues[i].re + eigenvalues[j].re));
            }
        }
    } else {
        warnings.push("no sectional-expanding 2-plane candidate".into());
    }
    let min_sectional_rate = sectional_rates.iter().map(|r| r.2).reduce(f64::min);
    Ok(SingularityReport {
        point: sigma.to_vec(),
        eigenvalues,
        f_candidate,
        sectional_rates,
        min_sectional_rate,
        degenerate,
        hyperbolic,
        out_of_scope,
        warnings,
    })
}

fn eigen_directions(a: &DMatrix<f64>, re: f64, im: f64) -> Vec<Vec<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let (m, k) = if im.abs() < 1e-12 {
        (a - &id * re, 1)
    } else {
        (a * a - a * (2.0 * re) + &id * (re * re + im * im), 2)
    };
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
    order[..k]
        .iter()
        .map(|&i| vt.row(i).iter().cloned().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saddle_spectrum_is_exact() {
        let sys = FlowSystem::linear_diagonal(&[-2.0, 1.0]).unwrap();
        let r = lyapunov_spectrum(&sys, &[0.1, 0.0], 20.0, 0.1, 1e-12).unwrap();
        assert!((r.exponents[0] - 1.0).abs() < 1e-8);
        assert!((r.exponents[1] + 2.0).abs() < 1e-8);
        assert!(r.converged);
    }

    #[test]
    fn short_window_rejected() {
        let sys = FlowSystem::linear_diagonal(&[-2.0, 1.0]).unwrap();
        assert!(lyapunov_spectrum(&sys, &[0.1, 0.1], 5.0, 0.1, 1e-10).is_err());
    }

    #[test]
    fn saddle_domination_closed_form() {
        let sys = FlowSystem::linear_diagonal(&[-2.0, 1.0]).unwrap();
        let chain = CocycleChain::along_orbit(&sys, &[0.3, 0.001], 10, 1.0, 1e-12).unwrap();
        let e = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let f = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let split = SampledSplitting {
            points: chain.points.clone(),
            steps: chain.phi.clone(),
            e: vec![Some(e); chain.len()],
            f: vec![Some(f); chain.len()],
        };
        let samples: Vec<usize> = (0..10).collect();
        let c = check_dominated_splitting(&split, &samples, 1, 0.5).unwrap();
        assert!(c.passes);
        assert!((c.worst_ratio - (-3f64).exp()).abs() < 1e-9);
        assert!((c.contraction_factor - (-3f64).exp()).abs() < 1e-9);
        let s = check_dominated_splitting(&split.swapped(), &samples, 1, 0.5).unwrap();
        assert_eq!(s.violation_count, s.sample_count);
        assert!(matches!(
            check_dominated_splitting(&split, &[10], 1, 0.5),
            Err(Error::Coverage { index: 10 })
        ));
    }

    #[test]
    fn sectional_rate_of_linear_plane() {
        let sys = FlowSystem::linear_diagonal(&[-3.0, 1.0, 2.0]).unwrap();
        let f = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let c = check_sectional_expansion(
            &sys,
            &[vec![0.1, 0.1, 0.1]],
            &[f],
            &[0.5, 1.0, 1.5, 2.0],
            1.0,
            1e-12,
        )
        .unwrap();
        assert!((c.worst_plane_rate - 3.0).abs() < 1e-8);
        assert!(c.passes);
        let line = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert!(check_sectional_expansion(&sys, &[vec![0.0; 3]], &[line], &[1.0], 1.0, 1e-10).is_err());
    }

    #[test]
    fn saddle_singularity_is_out_of_scope() {
        let sys = FlowSystem::linear_diagonal(&[-2.0, 1.0]).unwrap();
        let r = singularity_analysis(&sys, &[0.0, 0.0]).unwrap();
        assert!(r.out_of_scope);
        assert!(singularity_analysis(&sys, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn grids_are_unit() {
        let b = generic_frame(4, 3);
        for v in unit_grid(&b) {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(plane_grid(3).len(), PLANES_PER_POINT);
        assert_eq!(plane_grid(5)[0].shape(), (5, 2));
    }
}
