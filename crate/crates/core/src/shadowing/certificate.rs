use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::pesin::{log_conorm_on, log_norm_on};
use crate::error::{Error, Result};
use crate::flow::{tangent_flow, FlowSystem, Tolerance};
use crate::poincare::NormalFrame;
use crate::splitting::SampledSplitting;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// Π_{i<k} |ψ*|E| ≤ λ^k.
    EProduct,
    /// Π_{i≥k} m(ψ*|F) ≥ λ^{k-l}.
    FCoproduct,
    /// |ψ*|E| / m(ψ*|F) ≤ λ² on step k.
    StepRatio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based partition step.
    pub k: usize,
    pub condition: Condition,
    /// Tested log value and its log bound.
    pub value: f64,
    pub bound: f64,
}

/// Log values of the three tested quantities on one partition step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepValues {
    pub log_e_norm: f64,
    pub log_f_conorm: f64,
    pub log_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuasiHyperbolicCertificate {
    /// Sample range [start, end] of the arc.
    pub start: usize,
    pub end: usize,
    pub step: f64,
    pub t0: f64,
    pub lambda: f64,
    /// Partition sample indices, from `start` to `end`.
    pub partition: Vec<usize>,
    /// Partition times relative to the arc start.
    pub times: Vec<f64>,
    pub per_step: Vec<StepValues>,
    pub violation: Option<Violation>,
    pub passes: bool,
}

/// One-step log norms along the arc, telescoped through the fields.
fn step_logs(split: &SampledSplitting, steps: &[DMatrix<f64>], start: usize, end: usize) -> Result<Vec<(f64, f64)>> {
    (start..end)
        .map(|j| match (&split.e[j], &split.f[j]) {
            (Some(e), Some(f)) => {
                let m = &steps[j - start];
                Ok((log_norm_on(m, e), log_conorm_on(m, f)))
            }
            _ => Err(Error::Coverage { index: j }),
        })
        .collect()
}

fn segment_values(logs: &[(f64, f64)], a: usize, b: usize) -> StepValues {
    let e: f64 = logs[a..b].iter().map(|l| l.0).sum();
    let f: f64 = logs[a..b].iter().map(|l| l.1).sum();
    StepValues {
        log_e_norm: e,
        log_f_conorm: f,
        log_ratio: e - f,
    }
}

/// First violated condition, scanning steps in order and testing the step
/// ratio, then the E prefix, then the F suffix at each step.
fn first_violation(values: &[StepValues], lambda: f64) -> Option<Violation> {
    let ll = lambda.ln();
    let l = values.len();
    let slack = 1e-12;
    let mut prefix = 0.0;
    let suffix: Vec<f64> = {
        let mut s = vec![0.0; l + 1];
        for i in (0..l).rev() {
            s[i] = s[i + 1] + values[i].log_f_conorm;
        }
        s
    };
    for k in 1..=l {
        let v = &values[k - 1];
        if v.log_ratio > 2.0 * ll + slack {
            return Some(Violation {
                k,
                condition: Condition::StepRatio,
                value: v.log_ratio,
                bound: 2.0 * ll,
            });
        }
        prefix += v.log_e_norm;
        if prefix > k as f64 * ll + slack {
            return Some(Violation {
                k,
                condition: Condition::EProduct,
                value: prefix,
                bound: k as f64 * ll,
            });
        }
        let bound = (k as f64 - 1.0 - l as f64) * ll;
        if suffix[k - 1] < bound - slack {
            return Some(Violation {
                k,
                condition: Condition::FCoproduct,
                value: suffix[k - 1],
                bound,
            });
        }
    }
    None
}

/// Greedy partition of the sample range [start, end]: each step takes the
/// smallest length in [T₀, 2T₀] that keeps the E prefix product and the
/// step ratio within budget and leaves a coverable remainder; if none does,
/// the smallest coverable length is taken and the violation reported.
/// Norms are telescoped through the sampled fields as in the Pesin block.
pub fn certify_quasi_hyperbolic(
    split: &SampledSplitting,
    step: f64,
    start: usize,
    end: usize,
    t0: f64,
    lambda: f64,
) -> Result<QuasiHyperbolicCertificate> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Input(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    if !(step > 0.0 && t0 > 0.0) || end > split.steps.len() || start > end {
        return Err(Error::Input("invalid arc or step".into()));
    }
    let n_min = (t0 / step).round().max(1.0) as usize;
    let n_max = 2 * n_min;
    let total = end - start;
    if total < n_min {
        return Err(Error::Partition {
            duration: total as f64 * step,
            min_step: n_min as f64 * step,
            max_step: n_max as f64 * step,
        });
    }
    let logs = step_logs(split, &split.steps[start..end], start, end)?;
    let ll = lambda.ln();
    let mut partition = vec![0];
    let mut values = Vec::new();
    let mut prefix = 0.0;
    let mut pos = 0;
    while pos < total {
        let left = total - pos;
        let lengths: Vec<usize> = (n_min..=n_max.min(left))
            .filter(|&len| left - len == 0 || left - len >= n_min)
            .collect();
        let k = values.len() + 1;
        let pick = lengths
            .iter()
            .copied()
            .find(|&len| {
                let v = segment_values(&logs, pos, pos + len);
                prefix + v.log_e_norm <= k as f64 * ll && v.log_ratio <= 2.0 * ll
            })
            .unwrap_or(lengths[0]);
        let v = segment_values(&logs, pos, pos + pick);
        prefix += v.log_e_norm;
        values.push(v);
        pos += pick;
        partition.push(pos);
    }
    let violation = first_violation(&values, lambda);
    Ok(QuasiHyperbolicCertificate {
        start,
        end,
        step,
        t0,
        lambda,
        times: partition.iter().map(|&p| p as f64 * step).collect(),
        partition: partition.iter().map(|&p| p + start).collect(),
        passes: violation.is_none(),
        per_step: values,
        violation,
    })
}

/// Outcome of re-evaluating a certificate on recomputed step matrices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Recheck {
    pub per_step: Vec<StepValues>,
    /// Largest relative change of any tested quantity.
    pub max_relative_drift: f64,
    pub violation: Option<Violation>,
    pub passes: bool,
}

/// ψ* over one chain step from x to the next sample y, in the frames
/// `NormalFrame::at` builds, with the tangent map recomputed at `tol`.
pub fn scaled_step_matrix(system: &FlowSystem, x: &[f64], y: &[f64], step: f64, tol: Tolerance) -> Result<DMatrix<f64>> {
    let n = system.dim();
    let (_, phi) = tangent_flow(system, x, &DMatrix::identity(n, n), step, tol)?;
    let a = NormalFrame::at(system, x)?;
    let b = NormalFrame::at(system, y)?;
    Ok(b.basis.transpose() * phi * a.basis * (system.speed(x) / system.speed(y)))
}

/// Re-evaluate the certificate's partition with step matrices from
/// `recompute(j)` (for sample j of the arc) and the same fields. Drift is
/// measured on the tested quantities themselves, |exp(Δ log) - 1|.
pub fn recheck_certificate(
    cert: &QuasiHyperbolicCertificate,
    split: &SampledSplitting,
    recompute: impl Fn(usize) -> Result<DMatrix<f64>> + Sync,
) -> Result<Recheck> {
    use rayon::prelude::*;
    let steps: Vec<DMatrix<f64>> = (cert.start..cert.end).into_par_iter().map(&recompute).collect::<Result<_>>()?;
    let logs = step_logs(split, &steps, cert.start, cert.end)?;
    let per_step: Vec<StepValues> = cert
        .partition
        .windows(2)
        .map(|w| segment_values(&logs, w[0] - cert.start, w[1] - cert.start))
        .collect();
    let drift = per_step
        .iter()
        .zip(&cert.per_step)
        .flat_map(|(a, b)| {
            [
                a.log_e_norm - b.log_e_norm,
                a.log_f_conorm - b.log_f_conorm,
                a.log_ratio - b.log_ratio,
            ]
        })
        .map(|d| d.abs().exp_m1())
        .fold(0.0, f64::max);
    let violation = first_violation(&per_step, cert.lambda);
    Ok(Recheck {
        per_step,
        max_relative_drift: drift,
        passes: violation.is_none(),
        violation,
    })
}
