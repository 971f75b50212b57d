//! Dense least squares via Householder QR.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Matrix::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "ragged rows");
            m.data[i * cols..(i + 1) * cols].copy_from_slice(r);
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// A column is dependent when its residual norm after projecting out the
/// earlier columns falls below this fraction of its own norm.
const RANK_TOL: f64 = 1e-10;

/// Minimizes `‖Xβ − y‖₂`. A rank-deficient `X` yields
/// [`Error::RankDeficient`] naming the dependent column and the earlier
/// columns it is a combination of.
pub fn least_squares(x: &Matrix, y: &[f64], names: &[String]) -> Result<Vec<f64>> {
    let (n, p) = (x.rows, x.cols);
    assert_eq!(y.len(), n);
    assert_eq!(names.len(), p);
    if n < p {
        return Err(Error::InsufficientData(format!("{n} rows for {p} regression columns")));
    }
    // column-major copy for Householder sweeps
    let mut a: Vec<Vec<f64>> = (0..p).map(|j| (0..n).map(|i| x.get(i, j)).collect()).collect();
    let mut b = y.to_vec();
    let col_norms: Vec<f64> = a.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    for k in 0..p {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= RANK_TOL * col_norms[k] {
            return Err(collinear(&a, k, names));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in a.iter_mut().skip(k) {
                let dot: f64 = v.iter().zip(&col[k..]).map(|(vi, ci)| vi * ci).sum();
                let f = 2.0 * dot / vnorm2;
                for (ci, vi) in col[k..].iter_mut().zip(&v) {
                    *ci -= f * vi;
                }
            }
            let dot: f64 = v.iter().zip(&b[k..]).map(|(vi, bi)| vi * bi).sum();
            let f = 2.0 * dot / vnorm2;
            for (bi, vi) in b[k..].iter_mut().zip(&v) {
                *bi -= f * vi;
            }
        }
    }
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let s: f64 = ((k + 1)..p).map(|j| a[j][k] * beta[j]).sum();
        beta[k] = (b[k] - s) / a[k][k];
    }
    Ok(beta)
}

/// Expresses column `k` through the already-triangularized columns `0..k`.
fn collinear(a: &[Vec<f64>], k: usize, names: &[String]) -> Error {
    let mut c = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = ((i + 1)..k).map(|j| a[j][i] * c[j]).sum();
        c[i] = (a[k][i] - s) / a[i][i];
    }
    let mut columns: Vec<String> = (0..k)
        .filter(|&i| c[i].abs() > 1e-8)
        .map(|i| names[i].clone())
        .collect();
    columns.push(names[k].clone());
    Error::RankDeficient { columns }
}

/// Weighted least squares: rows scaled by `√w`.
pub fn weighted_least_squares(x: &Matrix, y: &[f64], w: &[f64], names: &[String]) -> Result<Vec<f64>> {
    let mut xs = x.clone();
    let mut ys = y.to_vec();
    for i in 0..x.rows {
        let s = w[i].sqrt();
        for j in 0..x.cols {
            xs.data[i * x.cols + j] *= s;
        }
        ys[i] *= s;
    }
    least_squares(&xs, &ys, names)
}
