//! Symmetric tridiagonal eigenproblems and linear solves.
//!
//! Eigenvalues come from Sturm-sequence bisection (counts certified by
//! inertia), eigenvectors from shifted inverse iteration. This is all the
//! linear algebra the Liouville-form discretizations need.

use crate::error::{MeltError, Result};

/// Symmetric tridiagonal matrix: `diag` of length n, `off` of length n-1.
#[derive(Debug, Clone)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    /// Number of eigenvalues strictly below `x` (Sturm count via the
    /// factorization pivots, with the customary guard against zero pivots).
    pub fn count_below(&self, x: f64) -> usize {
        let n = self.n();
        let mut count = 0;
        let mut q = self.diag[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..n {
            let e = self.off[i - 1];
            let denom = if q.abs() < 1e-300 {
                1e-300_f64.copysign(if q == 0.0 { 1.0 } else { q })
            } else {
                q
            };
            q = self.diag[i] - x - e * e / denom;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.n();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += self.off[i - 1].abs();
            }
            if i + 1 < n {
                r += self.off[i].abs();
            }
            lo = lo.min(self.diag[i] - r);
            hi = hi.max(self.diag[i] + r);
        }
        (lo, hi)
    }

    /// The `m` smallest eigenvalues by bisection, ascending.
    pub fn smallest_eigenvalues(&self, m: usize) -> Result<Vec<f64>> {
        if m == 0 || m > self.n() {
            return Err(MeltError::InvalidParameter(format!(
                "requested {m} eigenvalues of an n = {} problem",
                self.n()
            )));
        }
        let (glo, ghi) = self.gershgorin();
        let mut out = Vec::with_capacity(m);
        for k in 0..m {
            let mut lo = glo;
            let mut hi = ghi;
            // invariant: count_below(lo) <= k < count_below(hi)
            for _ in 0..220 {
                let mid = 0.5 * (lo + hi);
                if self.count_below(mid) <= k {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-14 * mid.abs() + 1e-20 {
                    break;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        Ok(out)
    }

    /// Largest row sum, a cheap operator-norm proxy used to scale residuals.
    pub fn norm_scale(&self) -> f64 {
        let n = self.n();
        (0..n)
            .map(|i| {
                let mut r = self.diag[i].abs();
                if i > 0 {
                    r += self.off[i - 1].abs();
                }
                if i + 1 < n {
                    r += self.off[i].abs();
                }
                r
            })
            .fold(1.0, f64::max)
    }

    /// Eigenvector for an isolated eigenvalue by inverse iteration.
    ///
    /// Returns the vector (2-normalized) and the iteration count. The
    /// convergence test is relative to the operator norm: stiff grids put the
    /// attainable absolute residual at `norm * machine-eps`.
    pub fn eigenvector(&self, lambda: f64) -> Result<(Vec<f64>, usize)> {
        let n = self.n();
        // deterministic start, mildly oscillatory to overlap any mode
        let mut v: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.3 * ((i as f64 * 0.7312).sin()))
            .collect();
        normalize(&mut v);
        let scale = self.norm_scale();
        let shift = lambda + 1e-12 * scale.max(1.0);
        let a: Vec<f64> = self.diag.iter().map(|d| d - shift).collect();
        let tol = 1e-13 * scale + 1e-12 * (1.0 + lambda.abs());
        let mut iters = 0;
        for it in 0..50 {
            iters = it + 1;
            let w = solve_shifted(&a, &self.off, &v)?;
            let mut wn = w;
            normalize(&mut wn);
            // residual check against the unshifted matrix
            let r = self.mul(&wn);
            let resid: f64 = r
                .iter()
                .zip(wn.iter())
                .map(|(ri, vi)| (ri - lambda * vi) * (ri - lambda * vi))
                .sum::<f64>()
                .sqrt();
            v = wn;
            if resid < tol {
                return Ok((v, iters));
            }
        }
        Err(MeltError::EigenFailure(format!(
            "inverse iteration did not converge in {iters} iterations at lambda = {lambda}"
        )))
    }
}

fn normalize(v: &mut [f64]) {
    let n2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n2 > 0.0 {
        for x in v.iter_mut() {
            *x /= n2;
        }
    }
}

/// Solve `(T) x = b` for tridiagonal `T` given by `diag`/`off`, with partial
/// pivoting between adjacent rows (stable for the near-singular shifted
/// systems inverse iteration produces).
pub fn solve_shifted(diag: &[f64], off: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 {
        return Ok(vec![]);
    }
    // rows: [c, d, e] with c = subdiag, d = diag, e = superdiag; fill-in f
    let mut d: Vec<f64> = diag.to_vec();
    let mut e: Vec<f64> = (0..n - 1).map(|i| off[i]).collect();
    let mut f: Vec<f64> = vec![0.0; n.saturating_sub(2)];
    let mut x: Vec<f64> = rhs.to_vec();
    let mut swapped = vec![false; n];
    for i in 0..n - 1 {
        let c = off[i]; // entry (i+1, i)
        if c.abs() > d[i].abs() {
            swapped[i] = true;
            // swap row i and i+1
            let (di, ei) = (d[i], e[i]);
            d[i] = c;
            e[i] = d[i + 1];
            let fi = if i + 2 < n { off[i + 1] } else { 0.0 };
            d[i + 1] = ei;
            if i + 2 < n {
                f[i] = fi;
                e[i + 1] = 0.0;
            }
            let tmp = x[i];
            x[i] = x[i + 1];
            x[i + 1] = tmp;
            // eliminate: row_{i+1} -= (di / d[i]) * row_i
            let m = di / d[i];
            d[i + 1] -= m * e[i];
            if i + 2 < n {
                e[i + 1] -= m * f[i];
            }
            x[i + 1] -= m * x[i];
        } else {
            let piv = if d[i].abs() < 1e-300 {
                1e-300_f64.copysign(if d[i] == 0.0 { 1.0 } else { d[i] })
            } else {
                d[i]
            };
            let m = c / piv;
            d[i + 1] -= m * e[i];
            x[i + 1] -= m * x[i];
            if i + 2 < n {
                f[i] = 0.0;
            }
        }
    }
    // back substitution
    let last = n - 1;
    let piv = if d[last].abs() < 1e-300 {
        1e-300_f64.copysign(if d[last] == 0.0 { 1.0 } else { d[last] })
    } else {
        d[last]
    };
    x[last] /= piv;
    if n >= 2 {
        let i = n - 2;
        x[i] = (x[i] - e[i] * x[i + 1]) / d[i];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (x[i] - e[i] * x[i + 1] - f[i] * x[i + 2]) / d[i];
    }
    Ok(x)
}

/// Thomas solve for a general (not necessarily symmetric) tridiagonal system;
/// no pivoting, intended for diagonally dominant parabolic steps.
pub fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    assert!(sub.len() == n - 1 && sup.len() == n - 1 && rhs.len() == n);
    let mut c = vec![0.0; n - 1];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv.abs() < 1e-300 {
        return Err(MeltError::IllConditioned("zero pivot in thomas solve".into()));
    }
    c[0] = sup[0] / piv;
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - sub[i - 1] * c[i - 1];
        if piv.abs() < 1e-300 {
            return Err(MeltError::IllConditioned("zero pivot in thomas solve".into()));
        }
        if i < n - 1 {
            c[i] = sup[i] / piv;
        }
        d[i] = (rhs[i] - sub[i - 1] * d[i - 1]) / piv;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] = x[i] - c[i] * x[i + 1];
    }
    Ok(x)
}
