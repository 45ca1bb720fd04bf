//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Thin QR with a non-negative R diagonal. Returns Q and log|R_ii|.
pub fn qr_positive(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let k = a.ncols().min(a.nrows());
    let mut logs = Vec::with_capacity(k);
    for i in 0..k {
        let d = r[(i, i)];
        if d < 0.0 {
            q.column_mut(i).neg_mut();
        }
        logs.push(d.abs().ln());
    }
    (q.columns(0, k).into_owned(), logs)
}

/// Orthonormal basis for the column span of `a` (assumed full rank).
pub fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    qr_positive(a).0
}

/// Orthonormal basis of the orthogonal complement of span(a) in R^n.
pub fn orthogonal_complement(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let q = orthonormalize(a);
    let projector = DMatrix::<f64>::identity(n, n) - &q * q.transpose();
    let eig = projector.symmetric_eigen();
    let cols: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > 0.5)
        .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
        .collect();
    orthonormalize(&DMatrix::from_columns(&cols))
}

/// Largest principal angle between the column spans of two matrices with
/// orthonormal columns and equal rank.
pub fn principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    let m = qa.transpose() * qb;
    let sv = m.singular_values();
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min).clamp(-1.0, 1.0);
    smin.acos()
}

/// Angle between vector `v` and the subspace spanned by the columns of `a`.
pub fn angle_to_subspace(v: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
    let q = orthonormalize(a);
    let proj = &q * (q.transpose() * v);
    let c = (proj.norm() / v.norm()).clamp(0.0, 1.0);
    c.acos()
}

/// Operator 2-norm.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    a.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// Smallest singular value (the co-norm m(A) for square or tall A).
pub fn co_norm(a: &DMatrix<f64>) -> f64 {
    a.singular_values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Coefficients of `v` in the (not necessarily orthogonal) basis given by
/// the columns of [e | f]; returns (component in span(e), component in
/// span(f)).
pub fn oblique_split(
    v: &DVector<f64>,
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let mut basis = DMatrix::zeros(v.len(), e.ncols() + f.ncols());
    basis.columns_mut(0, e.ncols()).copy_from(e);
    basis.columns_mut(e.ncols(), f.ncols()).copy_from(f);
    let coeffs = basis.lu().solve(v)?;
    let ve = e * coeffs.rows(0, e.ncols());
    let vf = f * coeffs.rows(e.ncols(), f.ncols());
    Some((ve, vf))
}

/// Project `v` onto span(target) along span(complement).
pub fn oblique_project(
    v: &DVector<f64>,
    target: &DMatrix<f64>,
    complement: &DMatrix<f64>,
) -> Option<DVector<f64>> {
    oblique_split(v, target, complement).map(|(t, _)| t)
}

/// Least-squares slope and intercept of y against x.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
