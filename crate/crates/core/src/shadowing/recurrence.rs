use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::periodic::Seed;
use super::pesin::PesinBlock;
use crate::error::{Error, Result};
use crate::flow::{flow, FlowSystem, OrbitSegment, Tolerance};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecurrenceConfig {
    pub delta: f64,
    pub min_t: f64,
    pub max_t: f64,
}

impl Default for RecurrenceConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            min_t: 1.4,
            max_t: 8.0,
        }
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Distance from x to the orbit near y, measured orthogonally to X(y).
fn normal_gap(system: &FlowSystem, x: &[f64], y: &[f64]) -> f64 {
    let w = sub(y, x);
    let f = system.evaluate(y).unwrap_or_else(|_| vec![0.0; x.len()]);
    let ff = dot(&f, &f);
    if ff == 0.0 {
        return dot(&w, &w).sqrt();
    }
    let s = dot(&w, &f) / ff;
    w.iter().zip(&f).map(|(a, b)| (a - s * b).powi(2)).sum::<f64>().sqrt()
}

/// Closest return time near `t`: Newton on (φ_T(x) - x)·X(φ_T(x)) = 0,
/// integrating from the sampled point y = φ_t(x).
fn refine_return(system: &FlowSystem, x: &[f64], y: &[f64], t: f64, tol: Tolerance) -> Result<(f64, f64)> {
    let mut z = y.to_vec();
    let mut time = t;
    for _ in 0..8 {
        let f = system.evaluate(&z)?;
        let w = sub(&z, x);
        let jf = system.jacobian(&z)? * nalgebra::DVector::from_column_slice(&f);
        let g = dot(&w, &f);
        let dg = dot(&f, &f) + dot(&w, jf.as_slice());
        if dg <= 0.0 {
            break;
        }
        let dt = -g / dg;
        z = flow(system, &z, dt, tol)?;
        time += dt;
        if dt.abs() < 1e-14 * time.abs().max(1.0) {
            break;
        }
    }
    Ok((time, sub(&z, x).iter().map(|a| a * a).sum::<f64>().sqrt()))
}

/// Pseudo-periodic seeds (x, T): for each block time s, the first local
/// minimum of d(φ_s x₀, φ_{s+T} x₀) over T in [min_T, max_T] whose normal
/// gap is below δ and whose end lies at a block sample. Candidates are
/// ranked by gap and kept only if their start differs by at least min_T/2
/// from every kept seed; kept seeds get their return time refined to the
/// closest approach. The orbit grid must refine the block's sample step.
pub fn find_recurrences(
    system: &FlowSystem,
    orbit: &OrbitSegment,
    block: &PesinBlock,
    config: &RecurrenceConfig,
    tol: impl Into<Tolerance>,
) -> Result<Vec<Seed>> {
    let tol = tol.into();
    let h = orbit.h_out;
    let ratio = block.step / h;
    if (ratio - ratio.round()).abs() > 1e-6 || ratio < 0.5 {
        return Err(Error::Input(format!(
            "orbit step {h} does not divide the block step {}",
            block.step
        )));
    }
    if !(config.delta > 0.0) || !(config.min_t > 0.0) || config.max_t < config.min_t {
        return Ok(Vec::new());
    }
    let ratio = ratio.round() as usize;
    let lo = (config.min_t / h).ceil() as usize;
    let hi = (config.max_t / h).floor() as usize;
    let n = orbit.len();
    let mut candidates: Vec<(f64, usize, usize)> = block
        .indices
        .par_iter()
        .filter_map(|&k| {
            let i = k * ratio;
            let x = orbit.points.get(i)?;
            let dist = |j: usize| sub(&orbit.points[j], x).iter().map(|a| a * a).sum::<f64>();
            let mut j = i + lo.max(1);
            while j + 1 < n.min(i + hi + 1) {
                let d = dist(j);
                if d <= dist(j - 1) && d <= dist(j + 1) {
                    let in_block = block.contains((j as f64 / ratio as f64).round() as usize);
                    let gap = normal_gap(system, x, &orbit.points[j]);
                    if gap < config.delta && in_block {
                        return Some((gap, i, j));
                    }
                }
                j += 1;
            }
            None
        })
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let half = ((config.min_t / 2.0) / h).round() as usize;
    let mut kept: BTreeSet<usize> = BTreeSet::new();
    let mut chosen = Vec::new();
    for (_, i, j) in candidates {
        if kept.range((i + 1).saturating_sub(half)..i + half).next().is_some() {
            continue;
        }
        kept.insert(i);
        chosen.push((i, j));
    }
    chosen.sort();
    chosen
        .into_par_iter()
        .map(|(i, j)| {
            let x = &orbit.points[i];
            let (t, gap) = refine_return(system, x, &orbit.points[j], (j - i) as f64 * h, tol)?;
            Ok(Seed {
                x: x.clone(),
                t,
                start_time: orbit.times[i],
                gap,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_block(len: usize, step: f64) -> PesinBlock {
        PesinBlock {
            step,
            n0: 1,
            threshold: 0.0,
            indices: (0..len).collect(),
            times: (0..len).map(|k| k as f64 * step).collect(),
            e_average: vec![-1.0; len],
            f_average: vec![-1.0; len],
            eligible: len,
            measure: 1.0,
        }
    }

    #[test]
    fn rotation_recurs_exactly_at_its_period() {
        let sys = FlowSystem::rotation(1.0);
        let orbit = OrbitSegment::integrate(&sys, &[1.0, 0.0], 20.0, 0.01, 1e-12).unwrap();
        let block = full_block(201, 0.1);
        let cfg = RecurrenceConfig {
            delta: 0.1,
            min_t: 1.4,
            max_t: 8.0,
        };
        let seeds = find_recurrences(&sys, &orbit, &block, &cfg, 1e-12).unwrap();
        assert!(!seeds.is_empty());
        for s in &seeds {
            assert!((s.t - std::f64::consts::TAU).abs() < 1e-8, "{}", s.t);
            assert!(s.gap < 1e-9, "{}", s.gap);
        }
        let starts: Vec<f64> = seeds.iter().map(|s| s.start_time).collect();
        assert!(starts.windows(2).all(|w| w[1] - w[0] >= 0.7 - 1e-9));
    }

    #[test]
    fn zero_delta_is_empty() {
        let sys = FlowSystem::rotation(1.0);
        let orbit = OrbitSegment::integrate(&sys, &[1.0, 0.0], 20.0, 0.01, 1e-12).unwrap();
        let cfg = RecurrenceConfig {
            delta: 0.0,
            ..Default::default()
        };
        assert!(find_recurrences(&sys, &orbit, &full_block(201, 0.1), &cfg, 1e-12)
            .unwrap()
            .is_empty());
    }
}
