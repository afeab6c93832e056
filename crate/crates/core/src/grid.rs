//! Radial grids and grid-sampled functions.
//!
//! All quadrature, differentiation and solvers in this crate operate on a
//! [`RadialGrid`]: a strictly increasing set of nodes on `[left, right]`,
//! either uniform or geometrically graded towards the left endpoint.

use crate::error::{MeltError, Result};
use std::sync::Arc;

/// Node spacing law of a radial grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spacing {
    Uniform,
    /// Geometric grading: consecutive spacings grow by at most the stretch factor.
    Graded(f64),
}

/// A strictly increasing 1D grid of radii.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    spacing: Spacing,
}

impl RadialGrid {
    /// Build a grid of `n` nodes on `[left, right]`.
    ///
    /// Uniform spacing is exact to rounding (the last node is pinned to
    /// `right`). A graded grid starts with the smallest spacing at `left` and
    /// stretches each interval by the given factor, rescaled so the nodes end
    /// exactly at `right`; spacing ratios stay within `[1, factor]`.
    pub fn new(left: f64, right: f64, n: usize, spacing: Spacing) -> Result<Self> {
        if !(left.is_finite() && right.is_finite()) {
            return Err(MeltError::InvalidGrid("endpoints must be finite".into()));
        }
        if right <= left {
            return Err(MeltError::InvalidGrid(format!(
                "right endpoint {right} must exceed left endpoint {left}"
            )));
        }
        if n < 3 {
            return Err(MeltError::InvalidGrid(format!(
                "need at least 3 nodes, got {n}"
            )));
        }
        let nodes = match spacing {
            Spacing::Uniform => {
                let h = (right - left) / (n - 1) as f64;
                let mut v: Vec<f64> = (0..n).map(|i| left + h * i as f64).collect();
                v[n - 1] = right;
                v
            }
            Spacing::Graded(r) => {
                if !(r >= 1.0) || !r.is_finite() {
                    return Err(MeltError::InvalidGrid(format!(
                        "stretch factor must be >= 1, got {r}"
                    )));
                }
                // h_i = h0 * r^i, sum over n-1 intervals equals the span.
                let m = (n - 1) as f64;
                let span = right - left;
                let h0 = if (r - 1.0).abs() < 1e-15 {
                    span / m
                } else {
                    span * (r - 1.0) / (r.powf(m) - 1.0)
                };
                let mut v = Vec::with_capacity(n);
                let mut x = left;
                let mut h = h0;
                v.push(x);
                for _ in 0..n - 1 {
                    x += h;
                    v.push(x);
                    h *= r;
                }
                v[n - 1] = right;
                v
            }
        };
        // Rounding can in principle collapse adjacent nodes on extreme inputs.
        for w in nodes.windows(2) {
            if w[1] <= w[0] {
                return Err(MeltError::InvalidGrid(format!(
                    "nodes not strictly increasing near {}",
                    w[0]
                )));
            }
        }
        Ok(Self { nodes, spacing })
    }

    /// Grid whose spacing follows `h(z) ~ alpha * z` (geometric, resolving a
    /// `1/z`-type layer at the left endpoint) until the spacing reaches
    /// `h_out`, then stays uniform at `h_out` up to `right`.
    ///
    /// This is the workhorse grid for the Dirichlet-hole eigenproblems where
    /// the eigenfunctions carry a `1/z - 1/sqrt(b)` layer at `z = sqrt(b)`.
    pub fn layer_adapted(left: f64, right: f64, alpha: f64, h_out: f64) -> Result<Self> {
        if right <= left || left <= 0.0 {
            return Err(MeltError::InvalidGrid(format!(
                "need 0 < left < right, got [{left}, {right}]"
            )));
        }
        if alpha <= 0.0 || h_out <= 0.0 {
            return Err(MeltError::InvalidGrid(
                "alpha and h_out must be positive".into(),
            ));
        }
        let mut nodes = vec![left];
        let mut x = left;
        // geometric phase: h ~ alpha * z until the spacing reaches h_out
        while alpha * x < h_out && x + alpha * x < right {
            x += alpha * x;
            nodes.push(x);
        }
        // uniform tail, spacing snapped so the last node lands on `right`
        if x < right {
            let m = ((right - x) / h_out).ceil().max(1.0) as usize;
            let h = (right - x) / m as f64;
            for i in 1..=m {
                nodes.push(x + h * i as f64);
            }
            let n = nodes.len();
            nodes[n - 1] = right;
        }
        if nodes.len() < 3 {
            return Err(MeltError::InvalidGrid(
                "layer-adapted grid degenerated to fewer than 3 nodes".into(),
            ));
        }
        let ratio = 1.0 + alpha;
        Ok(Self {
            nodes,
            spacing: Spacing::Graded(ratio),
        })
    }

    /// Wrap an explicit strictly increasing node set (used when a grid is
    /// derived from another by a change of variables).
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(MeltError::InvalidGrid("need at least 3 nodes".into()));
        }
        let mut max_ratio = 1.0f64;
        for w in nodes.windows(2) {
            if !(w[1] > w[0]) {
                return Err(MeltError::InvalidGrid(format!(
                    "nodes not strictly increasing near {}",
                    w[0]
                )));
            }
        }
        for w in nodes.windows(3) {
            let r = (w[2] - w[1]) / (w[1] - w[0]);
            max_ratio = max_ratio.max(r).max(1.0 / r);
        }
        let spacing = if max_ratio < 1.0 + 1e-12 {
            Spacing::Uniform
        } else {
            Spacing::Graded(max_ratio)
        };
        Ok(Self { nodes, spacing })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn left_endpoint(&self) -> f64 {
        self.nodes[0]
    }

    pub fn truncation_point(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    /// Largest ratio of consecutive spacings.
    pub fn max_spacing_ratio(&self) -> f64 {
        self.nodes
            .windows(3)
            .map(|w| {
                let h0 = w[1] - w[0];
                let h1 = w[2] - w[1];
                (h1 / h0).max(h0 / h1)
            })
            .fold(1.0, f64::max)
    }
}

/// A real function sampled on a shared grid.
#[derive(Debug, Clone)]
pub struct WeightedFunction {
    pub grid: Arc<RadialGrid>,
    pub values: Vec<f64>,
}

impl WeightedFunction {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MeltError::GridMismatch(format!(
                "{} values on a {}-node grid",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MeltError::InvalidParameter(
                "function values must be finite at every node".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    /// Sample a closure on the grid.
    pub fn sample(grid: &Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&z| f(z)).collect();
        Self::new(grid.clone(), values)
    }

    pub fn zeros(grid: &Arc<RadialGrid>) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }
}
