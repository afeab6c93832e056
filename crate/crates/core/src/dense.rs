//! Small dense linear algebra: Gaussian elimination with partial pivoting.
//!
//! Everything here runs on (k+1) x (k+1) systems with k <= 40, so no BLAS.

use crate::error::{MeltError, Result};

/// Solve `A x = rhs` in place for a square row-major matrix.
pub fn solve(a: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    assert!(a.iter().all(|r| r.len() == n) && rhs.len() == n);
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x: Vec<f64> = rhs.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[piv][col].abs() < f64::MIN_POSITIVE.sqrt() {
            return Err(MeltError::IllConditioned(format!(
                "pivot {:.3e} at column {col}",
                m[piv][col]
            )));
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[row][j] -= f * m[col][j];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for j in col + 1..n {
            s -= m[col][j] * x[j];
        }
        x[col] = s / m[col][col];
    }
    Ok(x)
}

/// Matrix inverse by column solves.
pub fn inverse(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve(a, &e)?);
    }
    let mut inv = vec![vec![0.0; n]; n];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            inv[i][j] = col[i];
        }
    }
    Ok(inv)
}

fn inf_norm(a: &[Vec<f64>]) -> f64 {
    a.iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Infinity-norm condition number estimate.
pub fn condition(a: &[Vec<f64>]) -> Result<f64> {
    Ok(inf_norm(a) * inf_norm(&inverse(a)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn solves_small_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve(&a, &[5.0, 10.0]).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(x[1], 3.0, epsilon = 1e-13);
    }

    #[test]
    fn condition_of_identity_is_one() {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_abs_diff_eq!(condition(&id).unwrap(), 1.0, epsilon = 1e-14);
    }
}
