//! PCA for deep-embedding feature groups.
//!
//! The covariance matrix is diagonalized with cyclic Jacobi rotations, which
//! is accurate and dependency-free for the bounded widths involved here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` rows of length `d`, orthonormal.
    pub components: Matrix,
    /// Sample variance captured by each component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Total sample variance of the fitting data.
    pub total_variance: f64,
    /// `true` for trailing components taken from the null space of
    /// rank-deficient data.
    pub degenerate: Vec<bool>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn explained_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| {
                if self.total_variance > 0.0 {
                    v / self.total_variance
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Eigen-decomposition of a symmetric matrix (row-major `d*d`).
/// Returns eigenvalues and eigenvectors (as columns of the returned
/// matrix), unsorted.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let d = a.rows();
    if a.cols() != d {
        return Err(Error::Shape(format!(
            "eigen-decomposition of a {}x{} matrix",
            d,
            a.cols()
        )));
    }
    let mut m = a.clone();
    let mut v = Matrix::zeros(d, d);
    for i in 0..d {
        v.set(i, i, 1.0);
    }
    let scale: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok((vec![0.0; d], v));
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..d {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
                for k in 0..d {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Ok(((0..d).map(|i| m.get(i, i)).collect(), v))
}

/// Sample covariance (divide by `n - 1`) of the rows of `data`.
fn covariance(data: &Matrix, mean: &[f64]) -> Matrix {
    let (n, d) = (data.rows(), data.cols());
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for r in 0..n {
        for (c, x) in data.row(r).iter().enumerate() {
            centered[c] = x - mean[c];
        }
        for i in 0..d {
            let ci = centered[i];
            let row = cov.row_mut(i);
            for j in i..d {
                row[j] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    cov
}

/// Fits the top-`k` principal components. Each component's
/// largest-magnitude entry is made positive.
pub fn fit_pca(data: &Matrix, k: usize) -> Result<PcaModel> {
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if k == 0 || k > d.min(n - 1) {
        return Err(Error::Parameter(format!(
            "PCA target dim {k} must lie in 1..={} for {n}x{d} data",
            d.min(n - 1)
        )));
    }
    let mut mean = vec![0.0; d];
    for row in data.iter_rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let cov = covariance(data, &mean);
    let total_variance: f64 = (0..d).map(|i| cov.get(i, i)).sum();
    let (values, vectors) = symmetric_eigen(&cov)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values[order[0]].max(0.0);

    let mut components = Matrix::zeros(k, d);
    let mut explained_variance = Vec::with_capacity(k);
    let mut degenerate = Vec::with_capacity(k);
    for (row, &j) in order[..k].iter().enumerate() {
        let mut comp: Vec<f64> = (0..d).map(|i| vectors.get(i, j)).collect();
        let pivot =
            comp.iter().enumerate().fold(
                0,
                |best, (i, x)| if x.abs() > comp[best].abs() { i } else { best },
            );
        if comp[pivot] < 0.0 {
            comp.iter_mut().for_each(|x| *x = -*x);
        }
        components.row_mut(row).copy_from_slice(&comp);
        let ev = values[j];
        let null = ev <= RANK_TOL * top;
        explained_variance.push(if null { 0.0 } else { ev });
        degenerate.push(null);
    }
    if degenerate.iter().any(|&b| b) {
        log::warn!(
            "PCA: data rank is below the requested {k} components; {} trailing components have zero variance",
            degenerate.iter().filter(|&&b| b).count()
        );
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
        degenerate,
    })
}

/// Projects rows onto the components: `(rows - mean) * components^T`.
pub fn transform_pca(model: &PcaModel, rows: &Matrix) -> Result<Matrix> {
    let d = model.input_dim();
    if rows.cols() != d {
        return Err(Error::Shape(format!(
            "PCA expects {d} columns, got {}",
            rows.cols()
        )));
    }
    let k = model.output_dim();
    let mut out = Matrix::zeros(rows.rows(), k);
    let mut centered = vec![0.0; d];
    for r in 0..rows.rows() {
        for (c, x) in rows.row(r).iter().enumerate() {
            centered[c] = x - model.mean[c];
        }
        for j in 0..k {
            let comp = model.components.row(j);
            out.set(r, j, comp.iter().zip(&centered).map(|(a, b)| a * b).sum());
        }
    }
    Ok(out)
}

/// Maps projected rows back to the input space.
pub fn inverse_transform_pca(model: &PcaModel, projected: &Matrix) -> Result<Matrix> {
    let k = model.output_dim();
    if projected.cols() != k {
        return Err(Error::Shape(format!(
            "expected {k} components, got {}",
            projected.cols()
        )));
    }
    let d = model.input_dim();
    let mut out = Matrix::zeros(projected.rows(), d);
    for r in 0..projected.rows() {
        let row = out.row_mut(r);
        row.copy_from_slice(&model.mean);
        for j in 0..k {
            let w = projected.get(r, j);
            for (o, c) in row.iter_mut().zip(model.components.row(j)) {
                *o += w * c;
            }
        }
    }
    Ok(out)
}
