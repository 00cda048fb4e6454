//! Synthetic end-to-end tasks: tumor-style segmentation with FNR control, single-period
//! storage arbitrage with cvar control, and a conformal-training classification demo.

pub mod conftr;
mod io;
pub mod seg;
pub mod storage;

pub use io::{read_storage_csv, read_seg_csv, write_storage_csv, write_seg_csv};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Value and partial derivatives of a per-example cost `l(theta, lambda)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPartials {
    pub value: f64,
    pub d_theta: Vec<f64>,
    pub d_lambda: f64,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub(crate) fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(invalid("singular normal equations"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Ordinary least squares over `(features, target)` rows.
pub fn least_squares<'a>(rows: impl IntoIterator<Item = (&'a [f64], f64)>, dim: usize) -> Result<Vec<f64>> {
    let mut xtx = vec![vec![0.0; dim]; dim];
    let mut xty = vec![0.0; dim];
    for (x, y) in rows {
        for i in 0..dim {
            xty[i] += x[i] * y;
            for j in 0..dim {
                xtx[i][j] += x[i] * x[j];
            }
        }
    }
    solve(xtx, xty)
}
