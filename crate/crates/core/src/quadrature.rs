//! Composite quadrature on stored grids and the two weighted inner products.
//!
//! `<f,g>_b = int_{sqrt(b)}^inf f g e^{-z^2/2} z^2 dz` lives on the hole
//! domain; `(f,g)_b = int_1^inf f g e^{-b y^2/2} y^2 dy` on the renormalised
//! domain. Both are truncated at the grid end, which must sit deep enough in
//! the Gaussian tail for the truncation to be negligible.

use crate::error::{MeltError, Result};
use crate::grid::WeightedFunction;

/// A quadrature value together with a refinement-based error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerProductReport {
    pub value: f64,
    pub quadrature_error_estimate: f64,
}

/// Composite Simpson rule on arbitrary strictly increasing nodes.
///
/// Interval pairs use the unequal-spacing Simpson weights; a trailing odd
/// interval is integrated with the quadratic through the last three nodes.
pub fn simpson(nodes: &[f64], values: &[f64]) -> f64 {
    assert_eq!(nodes.len(), values.len());
    let n = nodes.len();
    assert!(n >= 3, "simpson needs at least 3 nodes");
    let mut total = 0.0;
    let mut i = 0;
    while i + 2 < n {
        let h1 = nodes[i + 1] - nodes[i];
        let h2 = nodes[i + 2] - nodes[i + 1];
        let s = h1 + h2;
        total += s / 6.0
            * ((2.0 - h2 / h1) * values[i]
                + s * s / (h1 * h2) * values[i + 1]
                + (2.0 - h1 / h2) * values[i + 2]);
        i += 2;
    }
    if i + 2 == n {
        // One interval left: integrate the quadratic through the last three
        // nodes over that interval only.
        let h1 = nodes[n - 2] - nodes[n - 3];
        let h2 = nodes[n - 1] - nodes[n - 2];
        let w0 = -h2 * h2 * h2 / (6.0 * h1 * (h1 + h2));
        let w1 = h2 * (h2 + 3.0 * h1) / (6.0 * h1);
        let w2 = h2 * (2.0 * h2 + 3.0 * h1) / (6.0 * (h1 + h2));
        total += w0 * values[n - 3] + w1 * values[n - 2] + w2 * values[n - 1];
    }
    total
}

/// Simpson value plus an error estimate from comparison with the
/// half-resolution result (every other node, last node kept).
pub fn simpson_with_estimate(nodes: &[f64], values: &[f64]) -> InnerProductReport {
    let full = simpson(nodes, values);
    let n = nodes.len();
    let mut cn = Vec::with_capacity(n / 2 + 2);
    let mut cv = Vec::with_capacity(n / 2 + 2);
    let mut i = 0;
    while i < n {
        cn.push(nodes[i]);
        cv.push(values[i]);
        i += 2;
    }
    if *cn.last().unwrap() != nodes[n - 1] {
        cn.push(nodes[n - 1]);
        cv.push(values[n - 1]);
    }
    let err = if cn.len() >= 3 {
        (full - simpson(&cn, &cv)).abs()
    } else {
        f64::INFINITY
    };
    InnerProductReport {
        value: full,
        quadrature_error_estimate: err,
    }
}

fn check_shared_grid(f: &WeightedFunction, g: &WeightedFunction) -> Result<()> {
    if !f.same_grid(g) {
        return Err(MeltError::GridMismatch(
            "inner product operands sampled on different grids".into(),
        ));
    }
    Ok(())
}

fn check_tail(nodes: &[f64], integrand: &[f64], tail_weight: f64) -> Result<()> {
    let scale = integrand.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(());
    }
    let tail = integrand.last().unwrap().abs().max(tail_weight * 1e-300);
    if tail > 1e-30 * scale {
        return Err(MeltError::TruncationTooSmall {
            truncation: *nodes.last().unwrap(),
            tail,
            scale,
        });
    }
    Ok(())
}

/// `<f,g>_b`: Gaussian-weighted inner product on `[sqrt(b), infinity)`.
///
/// The operands must share a grid whose left endpoint is `sqrt(b)` and whose
/// truncation leaves a weight tail below `1e-30` of the integrand scale.
pub fn inner_product_rho(
    f: &WeightedFunction,
    g: &WeightedFunction,
    b: f64,
) -> Result<InnerProductReport> {
    check_shared_grid(f, g)?;
    if b < 0.0 {
        return Err(MeltError::InvalidParameter(format!(
            "b must be nonnegative, got {b}"
        )));
    }
    let nodes = f.grid.nodes();
    let left = nodes[0];
    if (left - b.sqrt()).abs() > 1e-12 * (1.0 + b.sqrt()) {
        return Err(MeltError::GridMismatch(format!(
            "grid left endpoint {left} does not match sqrt(b) = {}",
            b.sqrt()
        )));
    }
    let integrand: Vec<f64> = nodes
        .iter()
        .zip(f.values.iter().zip(g.values.iter()))
        .map(|(&z, (&fv, &gv))| fv * gv * (-0.5 * z * z).exp() * z * z)
        .collect();
    let t = *nodes.last().unwrap();
    check_tail(nodes, &integrand, (-0.5 * t * t).exp() * t * t)?;
    Ok(simpson_with_estimate(nodes, &integrand))
}

/// `(f,g)_b`: renormalised inner product on `[1, infinity)` with weight
/// `e^{-b y^2 / 2}`.
pub fn inner_product_renorm(
    f: &WeightedFunction,
    g: &WeightedFunction,
    b: f64,
) -> Result<InnerProductReport> {
    check_shared_grid(f, g)?;
    if b <= 0.0 {
        return Err(MeltError::InvalidParameter(format!(
            "b must be positive, got {b}"
        )));
    }
    let nodes = f.grid.nodes();
    if (nodes[0] - 1.0).abs() > 1e-12 {
        return Err(MeltError::GridMismatch(format!(
            "renormalised inner product needs a grid starting at 1, got {}",
            nodes[0]
        )));
    }
    let integrand: Vec<f64> = nodes
        .iter()
        .zip(f.values.iter().zip(g.values.iter()))
        .map(|(&y, (&fv, &gv))| fv * gv * (-0.5 * b * y * y).exp() * y * y)
        .collect();
    let y_end = *nodes.last().unwrap();
    check_tail(nodes, &integrand, (-0.5 * b * y_end * y_end).exp() * y_end * y_end)?;
    Ok(simpson_with_estimate(nodes, &integrand))
}

/// Weighted `L^2_{rho,b}` norm squared of grid samples (no tail check; the
/// caller owns the grid choice).
pub fn weighted_norm_sq(nodes: &[f64], values: &[f64]) -> f64 {
    let integrand: Vec<f64> = nodes
        .iter()
        .zip(values.iter())
        .map(|(&z, &v)| v * v * (-0.5 * z * z).exp() * z * z)
        .collect();
    simpson(nodes, &integrand)
}

/// Adaptive Simpson on `[a, b]` to the requested absolute tolerance.
///
/// Used only as an independent test oracle against the grid-based rules.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson3(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), fm)
    }
    fn rec(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (left, flm) = simpson3(f, a, fa, m, fm);
        let (right, frm) = simpson3(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, fa, m, fm, left, flm, 0.5 * tol, depth - 1)
                + rec(f, m, fm, b, fb, right, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, fm) = simpson3(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, whole, fm, tol, 48)
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
    fn gaussian_second_moment() {
        // int_0^inf z^2 e^{-z^2/2} dz = sqrt(pi/2)
        let g = grid(0.0, 14.0, 8001);
        let one = WeightedFunction::sample(&g, |_| 1.0).unwrap();
        let r = inner_product_rho(&one, &one, 0.0).unwrap();
        assert_abs_diff_eq!(
            r.value,
            (std::f64::consts::PI / 2.0).sqrt(),
            epsilon = 1e-12
        );
        assert!(r.quadrature_error_estimate >= 0.0);
        assert!(r.quadrature_error_estimate < 1e-10);
    }

    #[test]
    fn renorm_unit_integral_matches_adaptive_oracle() {
        // Oracle first: adaptive Simpson at tight tolerance for
        // int_1^inf y^2 e^{-y^2} dy, then the grid rule must agree.
        let oracle = adaptive_simpson(&|y: f64| y * y * (-y * y).exp(), 1.0, 10.0, 1e-14);
        assert_abs_diff_eq!(oracle, 0.25364111690588664, epsilon = 1e-12);

        let g = grid(1.0, 10.0, 4001);
        let one = WeightedFunction::sample(&g, |_| 1.0).unwrap();
        let r = inner_product_renorm(&one, &one, 2.0).unwrap();
        assert_abs_diff_eq!(r.value, oracle, epsilon = 1e-11);
    }

    #[test]
    fn rho_and_renorm_agree_under_change_of_variables() {
        // (f,g)_b = b^{-3/2} <f(./sqrt b), g(./sqrt b)>_b
        let b: f64 = 0.04;
        let rb = b.sqrt();
        let f = |z: f64| 1.0 / (1.0 + z * z);
        let gz = Arc::new(RadialGrid::new(rb, 14.0, 6001, Spacing::Uniform).unwrap());
        let fz = WeightedFunction::sample(&gz, f).unwrap();
        let lhs_z = inner_product_rho(&fz, &fz, b).unwrap().value;

        let gy = Arc::new(RadialGrid::new(1.0, 14.0 / rb, 6001, Spacing::Uniform).unwrap());
        let fy = WeightedFunction::sample(&gy, |y| f(rb * y)).unwrap();
        let lhs_y = inner_product_renorm(&fy, &fy, b).unwrap().value;

        assert_abs_diff_eq!(lhs_y, lhs_z / b.powf(1.5), epsilon = 1e-8 * lhs_y.abs());
    }

    #[test]
    fn rejects_short_truncation() {
        // e^{-z^2/2} z^2 at z = 4 is ~ 5e-3: far too large a tail.
        let g = grid(0.0, 4.0, 101);
        let one = WeightedFunction::sample(&g, |_| 1.0).unwrap();
        assert!(matches!(
            inner_product_rho(&one, &one, 0.0),
            Err(MeltError::TruncationTooSmall { .. })
        ));
    }

    #[test]
    fn rejects_mismatched_grids() {
        let g1 = grid(0.0, 14.0, 101);
        let g2 = grid(0.0, 14.0, 102);
        let f = WeightedFunction::sample(&g1, |_| 1.0).unwrap();
        let h = WeightedFunction::sample(&g2, |_| 1.0).unwrap();
        assert!(inner_product_rho(&f, &h, 0.0).is_err());
    }

    #[test]
    fn zero_function_is_legal_everywhere() {
        let g = grid(0.0, 4.0, 101); // short grid: fine, integrand is 0
        let z = WeightedFunction::zeros(&g);
        let r = inner_product_rho(&z, &z, 0.0).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn simpson_exact_on_quadratics_nonuniform() {
        let g = RadialGrid::new(0.0, 2.0, 57, Spacing::Graded(1.05)).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|&x| 3.0 * x * x - x + 2.0).collect();
        // int_0^2 (3x^2 - x + 2) dx = 8 - 2 + 4 = 10
        assert_abs_diff_eq!(simpson(g.nodes(), &vals), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn simpson_converges_on_cubics_nonuniform() {
        // graded pairs are exact only for quadratics; refining spacing and
        // stretch together must shrink the cubic error fast
        let err = |n: usize, r: f64| {
            let g = RadialGrid::new(0.0, 2.0, n, Spacing::Graded(r)).unwrap();
            let vals: Vec<f64> = g.nodes().iter().map(|&x| x * x * x).collect();
            (simpson(g.nodes(), &vals) - 4.0).abs()
        };
        assert!(err(201, 1.01) / err(401, 1.005) > 6.0);
        assert!(err(401, 1.005) < 1e-8);
    }
}
