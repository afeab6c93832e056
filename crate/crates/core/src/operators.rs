//! Discrete differential operators on radial grids.
//!
//! Interior nodes use centered 3-point stencils; endpoints use one-sided
//! stencils of matching (second) order. Stencil weights for arbitrary node
//! spacing come from Fornberg's recursion, so uniform and graded grids share
//! one code path.

use crate::error::{MeltError, Result};
use crate::grid::WeightedFunction;
use crate::quadrature::simpson;

/// Fornberg finite-difference weights.
///
/// Returns, for each derivative order `0..=m`, the weights at the given nodes
/// approximating that derivative at `x0`. Exact for polynomials of degree
/// `nodes.len() - 1`.
pub fn fd_weights(x0: f64, nodes: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    assert!(n > m, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

fn require_len(f: &WeightedFunction, min: usize) -> Result<()> {
    if f.grid.len() < min {
        return Err(MeltError::InvalidGrid(format!(
            "operator needs at least {min} nodes, grid has {}",
            f.grid.len()
        )));
    }
    Ok(())
}

/// First derivative: centered interior, one-sided 3-point at the endpoints.
pub fn derivative(f: &WeightedFunction) -> Result<WeightedFunction> {
    require_len(f, 5)?;
    let z = f.grid.nodes();
    let u = &f.values;
    let n = z.len();
    let mut out = vec![0.0; n];
    out[0] = apply_stencil(z[0], &z[0..3], &u[0..3], 1);
    out[n - 1] = apply_stencil(z[n - 1], &z[n - 3..n], &u[n - 3..n], 1);
    for i in 1..n - 1 {
        out[i] = apply_stencil(z[i], &z[i - 1..i + 2], &u[i - 1..i + 2], 1);
    }
    WeightedFunction::new(f.grid.clone(), out)
}

/// Endpoint derivative by the one-sided 3-point stencil, without forming the
/// whole derivative field.
pub fn boundary_slope_left(f: &WeightedFunction) -> f64 {
    let z = f.grid.nodes();
    apply_stencil(z[0], &z[0..3], &f.values[0..3], 1)
}

fn apply_stencil(x0: f64, nodes: &[f64], vals: &[f64], order: usize) -> f64 {
    let w = fd_weights(x0, nodes, order);
    w[order].iter().zip(vals).map(|(wi, vi)| wi * vi).sum()
}

/// Second derivative: centered 3-point interior, one-sided 4-point at the
/// endpoints (both second order).
pub fn second_derivative(f: &WeightedFunction) -> Result<WeightedFunction> {
    require_len(f, 5)?;
    let z = f.grid.nodes();
    let u = &f.values;
    let n = z.len();
    let mut out = vec![0.0; n];
    out[0] = apply_stencil(z[0], &z[0..4], &u[0..4], 2);
    out[n - 1] = apply_stencil(z[n - 1], &z[n - 4..n], &u[n - 4..n], 2);
    for i in 1..n - 1 {
        out[i] = apply_stencil(z[i], &z[i - 1..i + 2], &u[i - 1..i + 2], 2);
    }
    WeightedFunction::new(f.grid.clone(), out)
}

/// 3D radial Laplacian `u'' + (2/z) u'`.
///
/// At a node sitting exactly at `z = 0` the smooth radial limit `3 u''(0)` is
/// used (valid for even profiles, which is what radial regularity gives).
pub fn radial_laplacian(f: &WeightedFunction) -> Result<WeightedFunction> {
    let d1 = derivative(f)?;
    let d2 = second_derivative(f)?;
    let z = f.grid.nodes();
    let out = z
        .iter()
        .enumerate()
        .map(|(i, &zi)| {
            if zi == 0.0 {
                3.0 * d2.values[i]
            } else {
                d2.values[i] + 2.0 / zi * d1.values[i]
            }
        })
        .collect();
    WeightedFunction::new(f.grid.clone(), out)
}

/// Scaling operator `Lambda u = z u'`.
pub fn lambda_op(f: &WeightedFunction) -> Result<WeightedFunction> {
    let d1 = derivative(f)?;
    let out = f
        .grid
        .nodes()
        .iter()
        .zip(d1.values.iter())
        .map(|(&z, &d)| z * d)
        .collect();
    WeightedFunction::new(f.grid.clone(), out)
}

/// Both sides of the weighted Poincare inequality
/// `||z u||^2 <= 6 ||u||^2 + 4 ||u'||^2` in `L^2_rho` on `[0, inf)`.
#[derive(Debug, Clone, Copy)]
pub struct PoincareReport {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn check_poincare(u: &WeightedFunction) -> Result<PoincareReport> {
    require_len(u, 5)?;
    let z = u.grid.nodes();
    let du = derivative(u)?;
    let w = |f: &dyn Fn(usize) -> f64| {
        let vals: Vec<f64> = (0..z.len())
            .map(|i| {
                let v = f(i);
                v * v * (-0.5 * z[i] * z[i]).exp() * z[i] * z[i]
            })
            .collect();
        simpson(z, &vals)
    };
    let zu_sq = w(&|i| z[i] * u.values[i]);
    let u_sq = w(&|i| u.values[i]);
    let du_sq = w(&|i| du.values[i]);
    Ok(PoincareReport {
        lhs: zu_sq,
        rhs: 6.0 * u_sq + 4.0 * du_sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{RadialGrid, Spacing};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn grid(left: f64, right: f64, n: usize) -> Arc<RadialGrid> {
        Arc::new(RadialGrid::new(left, right, n, Spacing::Uniform).unwrap())
    }

    #[test]
    fn fornberg_reproduces_uniform_stencils() {
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_abs_diff_eq!(w[1][0], -0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1][2], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(w[2][0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[2][1], -2.0, epsilon = 1e-14);
        let w = fd_weights(0.0, &[0.0, 1.0, 2.0], 1);
        assert_abs_diff_eq!(w[1][0], -1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1][1], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1][2], -0.5, epsilon = 1e-14);
    }

    #[test]
    fn laplacian_of_z_squared_is_six() {
        let g = grid(0.0, 3.0, 61);
        let f = WeightedFunction::sample(&g, |z| z * z).unwrap();
        let lap = radial_laplacian(&f).unwrap();
        for &v in &lap.values {
            assert_abs_diff_eq!(v, 6.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn laplacian_of_inverse_z_vanishes() {
        let g = grid(0.5, 6.0, 2001);
        let f = WeightedFunction::sample(&g, |z| 1.0 / z).unwrap();
        let lap = radial_laplacian(&f).unwrap();
        // interior nodes: O(h^2) residual against the harmonic profile
        for i in 1..g.len() - 1 {
            assert!(lap.values[i].abs() < 2e-4, "Delta(1/z) = {}", lap.values[i]);
        }
    }

    #[test]
    fn oscillator_on_ground_quadratic() {
        // (-Delta + Lambda)(3/2 - z^2/2) = 3 - z^2: exact for quadratics.
        let g = grid(0.0, 4.0, 81);
        let f = WeightedFunction::sample(&g, |z| 1.5 - 0.5 * z * z).unwrap();
        let lap = radial_laplacian(&f).unwrap();
        let lam = lambda_op(&f).unwrap();
        for (i, &z) in g.nodes().iter().enumerate() {
            let h_f = -lap.values[i] + lam.values[i];
            assert_abs_diff_eq!(h_f, 3.0 - z * z, epsilon = 1e-9);
            assert_abs_diff_eq!(h_f, 2.0 * f.values[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn derivative_second_order_on_sine() {
        let err = |n: usize| {
            let g = grid(0.0, 3.0, n);
            let f = WeightedFunction::sample(&g, |z| z.sin()).unwrap();
            let d = derivative(&f).unwrap();
            g.nodes()
                .iter()
                .zip(d.values.iter())
                .map(|(&z, &v)| (v - z.cos()).abs())
                .fold(0.0f64, f64::max)
        };
        let e1 = err(201);
        let e2 = err(401);
        let ratio = e1 / e2;
        assert!(
            (3.5..=4.5).contains(&ratio),
            "expected second-order factor, got {ratio}"
        );
    }

    #[test]
    fn commutator_identity_on_smooth_sample() {
        // [Delta, Lambda] u = 2 Delta u with O(h^2) residual.
        let g = grid(0.0, 8.0, 3201);
        let f = WeightedFunction::sample(&g, |z| (-0.25 * z * z).exp()).unwrap();
        let dl = lambda_op(&radial_laplacian(&f).unwrap()).unwrap();
        let ld = radial_laplacian(&lambda_op(&f).unwrap()).unwrap();
        let lap = radial_laplacian(&f).unwrap();
        // skip endpoints: one-sided composition loses an order there
        for i in 2..g.len() - 2 {
            let resid = (ld.values[i] - dl.values[i]) - 2.0 * lap.values[i];
            assert!(resid.abs() < 5e-4, "residual {resid} at i={i}");
        }
    }

    #[test]
    fn poincare_on_gaussian_and_quadratic() {
        let g = grid(0.0, 14.0, 4001);
        let u = WeightedFunction::sample(&g, |z| (-0.25 * z * z).exp()).unwrap();
        let r = check_poincare(&u).unwrap();
        assert!(r.lhs < r.rhs, "lhs {} rhs {}", r.lhs, r.rhs);

        let u = WeightedFunction::sample(&g, |z| 1.5 - 0.5 * z * z).unwrap();
        let r = check_poincare(&u).unwrap();
        assert!(r.lhs < r.rhs);

        let zero = WeightedFunction::zeros(&g);
        let r = check_poincare(&zero).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }
}
