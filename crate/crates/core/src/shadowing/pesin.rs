use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{co_norm, op_norm};
use crate::splitting::SampledSplitting;

/// Samples of a cocycle chain where the N₀-window growth of ψ* is uniformly
/// hyperbolic along E and F.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PesinBlock {
    pub step: f64,
    /// Window length in samples; the window is `n0 as f64 * step` in time.
    pub n0: usize,
    pub threshold: f64,
    /// Sample indices in the block, ascending.
    pub indices: Vec<usize>,
    pub times: Vec<f64>,
    /// (1/N₀) log|ψ*_{N₀}|E| per sample; NaN where undefined.
    pub e_average: Vec<f64>,
    /// (1/N₀) log|ψ*_{-N₀}|F| per sample; NaN where undefined.
    pub f_average: Vec<f64>,
    /// Samples where both averages are defined.
    pub eligible: usize,
    /// Fraction of all samples in the block.
    pub measure: f64,
}

impl PesinBlock {
    pub fn contains(&self, k: usize) -> bool {
        self.indices.binary_search(&k).is_ok()
    }
}

/// log|M|_E| for one step, with E an orthonormal frame.
pub(crate) fn log_norm_on(step: &nalgebra::DMatrix<f64>, e: &nalgebra::DMatrix<f64>) -> f64 {
    op_norm(&(step * e)).ln()
}

/// log m(M|_F) for one step.
pub(crate) fn log_conorm_on(step: &nalgebra::DMatrix<f64>, f: &nalgebra::DMatrix<f64>) -> f64 {
    co_norm(&(step * f)).ln()
}

/// Window averages are telescoped through the sampled fields:
/// log|ψ*_{N₀}|E(x_k)| ≤ Σ_{j<N₀} log|ψ*_h|E(x_{k+j})| and
/// log|ψ*_{-N₀}|F(x_k)| = -log m(ψ*_{N₀}|F(x_{k-N₀})) ≤ -Σ log m(ψ*_h|F).
/// Both are exact for one-dimensional fields and upper bounds otherwise;
/// the products are never formed, so contraction does not underflow.
/// Samples whose window touches a missing estimate (near-singular frames
/// included) are never in the block.
pub fn pesin_block(split: &SampledSplitting, step: f64, n0: usize, threshold: f64) -> Result<PesinBlock> {
    if n0 == 0 || !(step > 0.0) {
        return Err(Error::Input(format!("need n0 >= 1 and step > 0, got {n0}, {step}")));
    }
    if !threshold.is_finite() {
        return Err(Error::Input("threshold must be finite".into()));
    }
    let len = split.points.len();
    if split.steps.len() + 1 != len || split.e.len() != len || split.f.len() != len {
        return Err(Error::Input("splitting arrays have inconsistent lengths".into()));
    }
    if len == 0 || split.e.iter().chain(&split.f).all(|s| s.is_none()) {
        return Err(Error::Coverage { index: 0 });
    }
    let step_e: Vec<f64> = (0..len - 1)
        .map(|k| match &split.e[k] {
            Some(e) => log_norm_on(&split.steps[k], e),
            None => f64::NAN,
        })
        .collect();
    let step_f: Vec<f64> = (0..len - 1)
        .map(|k| match &split.f[k] {
            Some(f) => log_conorm_on(&split.steps[k], f),
            None => f64::NAN,
        })
        .collect();
    let window = n0 as f64 * step;
    let mut e_average = vec![f64::NAN; len];
    let mut f_average = vec![f64::NAN; len];
    for k in 0..len {
        if k + n0 < len {
            e_average[k] = step_e[k..k + n0].iter().sum::<f64>() / window;
        }
        if k >= n0 {
            f_average[k] = -step_f[k - n0..k].iter().sum::<f64>() / window;
        }
    }
    let mut eligible = 0;
    let mut indices = Vec::new();
    for k in 0..len {
        let (a, b) = (e_average[k], f_average[k]);
        if a.is_finite() && b.is_finite() {
            eligible += 1;
            if a < threshold && b < threshold {
                indices.push(k);
            }
        }
    }
    let times = indices.iter().map(|&k| k as f64 * step).collect();
    Ok(PesinBlock {
        step,
        n0,
        threshold,
        measure: indices.len() as f64 / len as f64,
        indices,
        times,
        e_average,
        f_average,
        eligible,
    })
}
