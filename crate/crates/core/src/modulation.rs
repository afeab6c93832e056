//! Reduced finite-dimensional melting dynamics.
//!
//! Stable regime: `b_s = -sqrt(2/pi) b^{5/2}` with `lambda_s = -b lambda`,
//! integrated in `log lambda` because the scale factor falls below the
//! double-precision floor long before the asymptotics settle. Excited
//! regime (k >= 1): the frozen values `b = 1/(2ks)` plus the linear system
//! for the tilde-perturbations `U_j`, whose top 2x2 block is the matrix `B_k`
//! with eigenvalues `mu_1 = alpha_k + 1/k + 1` and `mu_2 = alpha_k - 1`.
//! The codimension-k shooting that realises the Brouwer argument is a
//! coordinate-wise bisection over the unstable directions.

use crate::basis::BasisTable;
use crate::error::{MeltError, Result};
use crate::parallel;

/// `alpha_k`: the tilde-normalisation exponent.
pub fn alpha_k(k: usize) -> f64 {
    assert!(k >= 1);
    if k <= 4 {
        0.125
    } else {
        0.5 / k as f64
    }
}

/// `gamma_k`: decay exponent of the admissible remainder forcing band.
pub fn gamma_k(k: usize) -> f64 {
    assert!(k >= 1);
    match k {
        1..=3 => 0.125,
        4 => 0.0625,
        _ => 0.5 / k as f64,
    }
}

pub fn sqrt_2_over_pi() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

/// Coefficient of the stable b-law: `b_s = -c2 b^{5/2}` integrates to
/// `b^{-3/2}(s) = b^{-3/2}(s0) + (3/2) c2 (s - s0)` with
/// `c2 = (3/2) sqrt(2/pi)` absorbing the 3/2 below.
fn stable_c2() -> f64 {
    1.5 * sqrt_2_over_pi()
}

// ---------------------------------------------------------------------------
// stable regime
// ---------------------------------------------------------------------------

/// State of the stable-regime reduced flow.
#[derive(Debug, Clone, Copy)]
pub struct StableState {
    pub s: f64,
    pub t: f64,
    pub b: f64,
    pub log_lambda: f64,
}

impl StableState {
    pub fn new(s0: f64, b0: f64, lambda0: f64) -> Result<Self> {
        if !(b0 > 0.0 && b0 <= 0.05) {
            return Err(MeltError::InvalidParameter(format!(
                "stable regime needs 0 < b <= 0.05, got {b0}"
            )));
        }
        if lambda0 <= 0.0 || s0 <= 0.0 {
            return Err(MeltError::InvalidParameter(
                "lambda0 and s0 must be positive".into(),
            ));
        }
        Ok(Self {
            s: s0,
            t: 0.0,
            b: b0,
            log_lambda: lambda0.ln(),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    /// The paper's derived stable coefficient `b_0(s) = -(1/C_0) b^{3/2}`.
    pub fn b0_coefficient(&self, table: &BasisTable) -> f64 {
        -self.b.powf(1.5) / table.c[0]
    }
}

/// One RK4 step of the stable law. `correction` is the bounded `O(b^3)` hook:
/// `b_s = -sqrt(2/pi) b^{5/2} + correction * b^3` (zero reproduces the
/// leading modulation equation).
pub fn stable_step(state: &StableState, ds: f64, correction: f64) -> Result<StableState> {
    if ds < 0.0 {
        return Err(MeltError::InvalidParameter("ds must be nonnegative".into()));
    }
    if ds == 0.0 {
        return Ok(*state);
    }
    let c = sqrt_2_over_pi();
    // y = (b, log_lambda, t)
    let rhs = |y: [f64; 3]| -> [f64; 3] {
        let b = y[0];
        let db = -c * b.powf(2.5) + correction * b * b * b;
        let a = b; // leading boundary relation a = b + O(b^{3/2})
        [db, -a, (2.0 * y[1]).exp()]
    };
    let y0 = [state.b, state.log_lambda, state.t];
    let k1 = rhs(y0);
    let add = |y: [f64; 3], k: [f64; 3], h: f64| {
        [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]]
    };
    let k2 = rhs(add(y0, k1, 0.5 * ds));
    let k3 = rhs(add(y0, k2, 0.5 * ds));
    let k4 = rhs(add(y0, k3, ds));
    let y1 = [
        y0[0] + ds / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y0[1] + ds / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        y0[2] + ds / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ];
    if y1[0] <= 0.0 {
        return Err(MeltError::InvalidParameter(format!(
            "step ds = {ds} drove b to {} <= 0",
            y1[0]
        )));
    }
    Ok(StableState {
        s: state.s + ds,
        t: y1[2],
        b: y1[0],
        log_lambda: y1[1],
    })
}

/// Closed-form solution of the leading law, the RK4 oracle:
/// `b(s) = (b0^{-3/2} + (3/2) sqrt(2/pi) (s - s0))^{-2/3}`.
pub fn stable_closed_form_b(b0: f64, s0: f64, s: f64) -> f64 {
    (b0.powf(-1.5) + stable_c2() * (s - s0)).powf(-2.0 / 3.0)
}

/// A point of an integrated trajectory.
#[derive(Debug, Clone, Copy)]
pub struct TrajectorySample {
    pub s: f64,
    pub t: f64,
    pub b: f64,
    pub log_lambda: f64,
}

#[derive(Debug, Clone)]
pub struct StableTrajectory {
    pub samples: Vec<TrajectorySample>,
    /// Extinction time `T = t_end + closed-form tail of int lambda^2 ds`.
    pub t_extinction: f64,
    /// `ln(T - t_i)` for every sample, accumulated backwards in log space
    /// (the linear-space feature underflows long before b reaches its floor).
    pub log_tau: Vec<f64>,
}

/// Integrate the stable law with logarithmic stepping `ds = s / steps_per_efold`
/// until `b <= b_floor`.
pub fn run_stable(
    s0: f64,
    b0: f64,
    lambda0: f64,
    b_floor: f64,
    steps_per_efold: usize,
    correction: f64,
) -> Result<StableTrajectory> {
    let mut state = StableState::new(s0, b0, lambda0)?;
    let mut samples = vec![TrajectorySample {
        s: state.s,
        t: state.t,
        b: state.b,
        log_lambda: state.log_lambda,
    }];
    let max_steps = 2_000_000;
    for _ in 0..max_steps {
        if state.b <= b_floor {
            break;
        }
        let ds = state.s / steps_per_efold as f64;
        state = stable_step(&state, ds, correction)?;
        samples.push(TrajectorySample {
            s: state.s,
            t: state.t,
            b: state.b,
            log_lambda: state.log_lambda,
        });
    }
    if state.b > b_floor {
        return Err(MeltError::InsufficientData(
            "stable run hit the step cap before reaching the b floor".into(),
        ));
    }
    // closed-form tail of T - t_end for the leading law:
    // lambda(s) = lambda_e exp(-(3/c2)(X^{1/3} - X_e^{1/3})), X = X_e + c2 (s - s_e)
    // => int_{s_e}^inf lambda^2 ds = lambda_e^2 (3/c2) e^{a w_e} int_{w_e}^inf w^2 e^{-a w} dw,
    //    w = X^{1/3}, a = 6/c2
    let end = *samples.last().unwrap();
    let c2 = stable_c2();
    let we = end.b.powf(-0.5); // X_e^{1/3} = b^{-1/2}
    let a = 6.0 / c2;
    let poly = we * we / a + 2.0 * we / (a * a) + 2.0 / (a * a * a);
    let log_tail = 2.0 * end.log_lambda + (3.0 / c2 * poly).ln();
    let t_extinction = end.t + log_tail.exp(); // exp may underflow to 0: fine
    let log_tau = accumulate_log_tau(&samples, log_tail);
    Ok(StableTrajectory {
        samples,
        t_extinction,
        log_tau,
    })
}

/// Backward logsumexp accumulation of `ln(T - t_i)` from per-segment
/// integrals of `lambda^2` (exponential interpolation of `log lambda`).
pub fn accumulate_log_tau(samples: &[TrajectorySample], log_tail: f64) -> Vec<f64> {
    let n = samples.len();
    let mut log_tau = vec![f64::NEG_INFINITY; n];
    let mut acc = log_tail;
    for i in (0..n - 1).rev() {
        let ds = samples[i + 1].s - samples[i].s;
        let dll = samples[i + 1].log_lambda - samples[i].log_lambda;
        let rate = 2.0 * dll / ds; // d(log lambda^2)/ds, negative
        // int_0^ds e^{2 ll_i + rate s} ds = e^{2 ll_i} (e^{rate ds} - 1)/rate
        let log_seg = if rate.abs() < 1e-12 {
            2.0 * samples[i].log_lambda + ds.ln()
        } else {
            2.0 * samples[i].log_lambda + ((rate * ds).exp_m1() / rate).ln()
        };
        acc = log_add_exp(acc, log_seg);
        log_tau[i] = acc;
    }
    log_tau[n - 1] = log_tail;
    log_tau
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// The stable melting-rate diagnostic
/// `r(t) = lambda |log(T-t)| / (4 sqrt(pi) sqrt(T-t))`, evaluated in log
/// space over the trajectory.
#[derive(Debug, Clone)]
pub struct StableRateReport {
    /// `(ln(T-t), ratio)` pairs, ordered from early to late.
    pub ratio_series: Vec<(f64, f64)>,
    /// Min and max of the ratio over the final decade of `T - t`.
    pub final_decade_range: (f64, f64),
    /// Fitted slope of `-log lambda` against `s^{1/3}`.
    pub loglambda_s13_slope: f64,
}

pub fn stable_rate(traj: &StableTrajectory) -> Result<StableRateReport> {
    let n = traj.samples.len();
    if n < 10 || traj.samples.last().unwrap().b > 1e-6 {
        return Err(MeltError::InsufficientData(
            "stable rate needs a trajectory integrated down to b <= 1e-6".into(),
        ));
    }
    let four_sqrt_pi = 4.0 * std::f64::consts::PI.sqrt();
    let mut ratio_series = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let lt = traj.log_tau[i];
        let ll = traj.samples[i].log_lambda;
        // r = lambda |ln tau| / (4 sqrt(pi) tau^{1/2})
        let r = (ll + lt.abs().ln() - four_sqrt_pi.ln() - 0.5 * lt).exp();
        ratio_series.push((lt, r));
    }
    let lt_end = ratio_series.last().unwrap().0;
    let final_decade: Vec<f64> = ratio_series
        .iter()
        .filter(|(lt, _)| *lt <= lt_end + std::f64::consts::LN_10)
        .map(|(_, r)| *r)
        .collect();
    let lo = final_decade.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = final_decade.iter().copied().fold(0.0f64, f64::max);
    // -log lambda = 3 ((3/2) sqrt(2/pi))^{-2/3} s^{1/3} + O(log s)
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .filter(|p| p.s > 10.0 * traj.samples[0].s)
        .map(|p| (p.s.powf(1.0 / 3.0), -p.log_lambda))
        .collect();
    let slope = slope_of(&pts);
    Ok(StableRateReport {
        ratio_series,
        final_decade_range: (lo, hi),
        loglambda_s13_slope: slope,
    })
}

fn slope_of(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

// ---------------------------------------------------------------------------
// reduced 2x2 matrix
// ---------------------------------------------------------------------------

/// The 2x2 linearisation of the `(U_k, U_{k-1})` system.
#[derive(Debug, Clone, Copy)]
pub struct ReducedMatrix {
    pub k: usize,
    pub entries: [[f64; 2]; 2],
    pub mu1: f64,
    pub mu2: f64,
    /// Rows of `p` are left eigenvectors: `p B_k p^{-1} = diag(mu2, mu1)`.
    pub p: [[f64; 2]; 2],
    pub p_inv: [[f64; 2]; 2],
}

pub fn build_reduced_matrix(k: usize, table: &BasisTable) -> Result<ReducedMatrix> {
    if k < 1 {
        return Err(MeltError::InvalidParameter(
            "reduced matrix defined for k >= 1".into(),
        ));
    }
    if k > table.k_max {
        return Err(MeltError::InvalidParameter(format!(
            "k = {k} beyond basis table k_max = {}",
            table.k_max
        )));
    }
    let kf = k as f64;
    let al = alpha_k(k);
    let a_entry = kf + 1.0 - al; // stored negated in the matrix
    let b_entry = (kf + 1.0) * table.c[k - 1] / table.c[k];
    let c_entry = (kf + 1.0) * (2.0 * kf + 1.0) / (2.0 * kf) * table.a[k - 1] / table.a[k];
    let d_entry =
        1.0 / kf + al + (2.0 * kf + 1.0) * (kf + 1.0) * table.b[k - 1] / (2.0 * kf * table.b[k]);
    let entries = [[-a_entry, -b_entry], [c_entry, d_entry]];
    // quadratic formula on the characteristic polynomial
    let tr = entries[0][0] + entries[1][1];
    let det = entries[0][0] * entries[1][1] - entries[0][1] * entries[1][0];
    let disc = (tr * tr - 4.0 * det).sqrt();
    let mu1 = 0.5 * (tr + disc);
    let mu2 = 0.5 * (tr - disc);
    // left eigenvector for mu: w (B - mu I) = 0 => w ~ (c_entry, a_entry + mu)
    let mut p = [[0.0; 2]; 2];
    for (row, mu) in [(0usize, mu2), (1usize, mu1)] {
        let w = [c_entry, a_entry + mu];
        let nrm = w[0].abs().max(w[1].abs());
        p[row] = [w[0] / nrm, w[1] / nrm];
    }
    let detp = p[0][0] * p[1][1] - p[0][1] * p[1][0];
    if detp.abs() < 1e-14 {
        return Err(MeltError::IllConditioned(
            "degenerate eigenbasis for the reduced matrix".into(),
        ));
    }
    let p_inv = [
        [p[1][1] / detp, -p[0][1] / detp],
        [-p[1][0] / detp, p[0][0] / detp],
    ];
    Ok(ReducedMatrix {
        k,
        entries,
        mu1,
        mu2,
        p,
        p_inv,
    })
}

impl ReducedMatrix {
    /// `(W_k, W_{k-1})` from `(U_k, U_{k-1})`.
    pub fn w_from_u(&self, u_k: f64, u_km1: f64) -> (f64, f64) {
        (
            self.p[0][0] * u_k + self.p[0][1] * u_km1,
            self.p[1][0] * u_k + self.p[1][1] * u_km1,
        )
    }

    /// `(U_k, U_{k-1})` from `(W_k, W_{k-1})`.
    pub fn u_from_w(&self, w_k: f64, w_km1: f64) -> (f64, f64) {
        (
            self.p_inv[0][0] * w_k + self.p_inv[0][1] * w_km1,
            self.p_inv[1][0] * w_k + self.p_inv[1][1] * w_km1,
        )
    }
}

// ---------------------------------------------------------------------------
// excited regime
// ---------------------------------------------------------------------------

/// Bounded remainder forcing `f_j(s) = amplitude * s^{-1-gamma_k}` emulating
/// the modulation-equation error band. Zero amplitude reproduces the pure
/// leading-order system.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForcingBand {
    pub amplitude: f64,
}

/// Excited-regime state: frozen `b = 1/(2ks)` plus the tilde perturbations.
#[derive(Debug, Clone)]
pub struct ExcitedState {
    pub k: usize,
    pub s: f64,
    pub t: f64,
    pub log_lambda: f64,
    /// `U_0 .. U_k`.
    pub u: Vec<f64>,
}

impl ExcitedState {
    pub fn new(k: usize, s0: f64, lambda0: f64, u0: Vec<f64>) -> Result<Self> {
        if k < 1 {
            return Err(MeltError::InvalidParameter("excited regime needs k >= 1".into()));
        }
        if s0 <= 0.0 {
            return Err(MeltError::InvalidParameter("s0 must be positive".into()));
        }
        if u0.len() != k + 1 {
            return Err(MeltError::InvalidParameter(format!(
                "need k+1 = {} tilde components, got {}",
                k + 1,
                u0.len()
            )));
        }
        Ok(Self {
            k,
            s: s0,
            t: 0.0,
            log_lambda: lambda0.ln(),
            u: u0,
        })
    }

    pub fn b(&self) -> f64 {
        1.0 / (2.0 * self.k as f64 * self.s)
    }

    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    /// `btilde_j = U_j / s^{3/2 + alpha_k}`.
    pub fn btilde(&self) -> Vec<f64> {
        let scale = self.s.powf(1.5 + alpha_k(self.k));
        self.u.iter().map(|u| u / scale).collect()
    }

    /// `(W_k, W_{k-1})` through the stored change of basis.
    pub fn w_pair(&self, m: &ReducedMatrix) -> (f64, f64) {
        m.w_from_u(self.u[self.k], self.u[self.k - 1])
    }
}

/// Right-hand side of the excited tilde system at time `s`.
fn excited_rhs(
    k: usize,
    table: &BasisTable,
    s: f64,
    u: &[f64],
    forcing: &ForcingBand,
) -> Vec<f64> {
    let kf = k as f64;
    let al = alpha_k(k);
    let f = if forcing.amplitude != 0.0 {
        forcing.amplitude * s.powf(-1.0 - gamma_k(k))
    } else {
        0.0
    };
    let weighted: f64 = (0..=k).map(|j| table.c[j] * u[j]).sum();
    let mut du = vec![0.0; k + 1];
    for (j, duj) in du.iter_mut().enumerate().take(k.saturating_sub(1)) {
        // decoupled unstable scalars, growth exponent 1 + alpha_k - j/k
        *duj = (1.0 + al - j as f64 / kf) / s * u[j] + f;
    }
    if k >= 1 {
        du[k - 1] = (1.0 / kf + al) / s * u[k - 1]
            + (kf + 1.0) * (2.0 * kf + 1.0) / (2.0 * kf) * table.a[k - 1]
                / (table.a[k] * table.c[k] * s)
                * weighted
            + f;
        du[k] = al / s * u[k] - (kf + 1.0) / (table.c[k] * s) * weighted + f;
    }
    du
}

/// One RK4 step of the excited system (frozen `b`, tilde flow, scale factor).
pub fn excited_step(
    state: &ExcitedState,
    ds: f64,
    table: &BasisTable,
    forcing: &ForcingBand,
) -> Result<ExcitedState> {
    if ds <= 0.0 {
        return Err(MeltError::InvalidParameter("ds must be positive".into()));
    }
    let k = state.k;
    let kf = k as f64;
    let al = alpha_k(k);
    // a(s) = a^e - sum C_j btilde_j / sqrt(b)
    //      = (k+1)/(2ks) - sqrt(2k) sum C_j U_j / s^{1+alpha}
    let a_of = |s: f64, u: &[f64]| -> f64 {
        let weighted: f64 = (0..=k).map(|j| table.c[j] * u[j]).sum();
        (kf + 1.0) / (2.0 * kf * s) - (2.0 * kf).sqrt() * weighted / s.powf(1.0 + al)
    };
    let n = k + 1;
    // y = (u_0..u_k, log_lambda, t)
    let rhs = |s: f64, y: &[f64]| -> Vec<f64> {
        let u = &y[0..n];
        let mut dy = excited_rhs(k, table, s, u, forcing);
        dy.push(-a_of(s, u));
        dy.push((2.0 * y[n]).exp());
        dy
    };
    let mut y0: Vec<f64> = state.u.clone();
    y0.push(state.log_lambda);
    y0.push(state.t);
    let k1 = rhs(state.s, &y0);
    let adv = |y: &[f64], kk: &[f64], h: f64| -> Vec<f64> {
        y.iter().zip(kk).map(|(a, b)| a + h * b).collect()
    };
    let k2 = rhs(state.s + 0.5 * ds, &adv(&y0, &k1, 0.5 * ds));
    let k3 = rhs(state.s + 0.5 * ds, &adv(&y0, &k2, 0.5 * ds));
    let k4 = rhs(state.s + ds, &adv(&y0, &k3, ds));
    let y1: Vec<f64> = (0..y0.len())
        .map(|i| y0[i] + ds / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    Ok(ExcitedState {
        k,
        s: state.s + ds,
        t: y1[n + 1],
        log_lambda: y1[n],
        u: y1[0..n].to_vec(),
    })
}

/// Residuals of the frozen excited solution against the leading modulation
/// system, scaled by `s^3` (the paper's remainder order).
#[derive(Debug, Clone, Copy)]
pub struct FrozenCheck {
    /// `max_s |(b_k^e)_s + b b_k^e lambda_{b,k} + (a^e - b) b_k^e| s^3`
    pub mode_residual_scaled: f64,
    /// `max_s |b_s + 2b(a^e - b)| s^2` (vanishes identically)
    pub b_residual_scaled: f64,
    /// `max_s |a^e + C_k b_k^e / sqrt(b)|` (exact identity)
    pub a_identity: f64,
}

/// Substitute the frozen values into the leading system over `[s0, 100 s0]`,
/// with `lambda_{b,k} = 2k + C_k^2 sqrt(b)`.
pub fn frozen_residual_check(k: usize, table: &BasisTable, s0: f64) -> FrozenCheck {
    let kf = k as f64;
    let ck = table.c[k];
    let mut worst_mode = 0.0f64;
    let mut worst_b = 0.0f64;
    let mut worst_a = 0.0f64;
    let mut s = s0;
    while s <= 100.0 * s0 {
        let b = 1.0 / (2.0 * kf * s);
        let ae = (kf + 1.0) / (2.0 * kf * s);
        let bke = -(kf + 1.0) / (ck * (2.0 * kf * s).powf(1.5));
        let bke_s = 1.5 * (kf + 1.0) / (ck * (2.0 * kf).powf(1.5)) * s.powf(-2.5);
        let lambda_bk = 2.0 * kf + ck * ck * b.sqrt();
        let r1 = bke_s + b * bke * lambda_bk + (ae - b) * bke;
        worst_mode = worst_mode.max((r1 * s * s * s).abs());
        let b_s = -1.0 / (2.0 * kf * s * s);
        let r2 = b_s + 2.0 * b * (ae - b);
        worst_b = worst_b.max((r2 * s * s).abs());
        let r3 = ae + ck * bke / b.sqrt();
        worst_a = worst_a.max(r3.abs());
        s *= 1.1;
    }
    FrozenCheck {
        mode_residual_scaled: worst_mode,
        b_residual_scaled: worst_b,
        a_identity: worst_a,
    }
}

// ---------------------------------------------------------------------------
// shooting
// ---------------------------------------------------------------------------

/// Outcome of the codimension-k shooting.
#[derive(Debug, Clone)]
pub struct ShootResult {
    pub k: usize,
    pub s0: f64,
    pub horizon: f64,
    /// Tuned initial value of the unstable eigen-coordinate `W_{k-1}`.
    pub w_km1: f64,
    /// Tuned initial values of `U_0 .. U_{k-2}`.
    pub u_lower: Vec<f64>,
    /// `(candidate, exit s, exit sign)` scan around the bracket: exit times
    /// grow monotonically toward the tuned value.
    pub exit_scan: Vec<(f64, f64, f64)>,
    /// Smallest outgoing derivative `d/ds [W_{k-1}^2 + sum (U_j/delta)^2]`
    /// observed at probed boundary crossings (must be positive).
    pub min_outgoing_derivative: f64,
}

/// Integrates the tilde system from fixed initial data to the horizon or the
/// bootstrap-set exit, returning (exit s, signed exit indicator, outgoing
/// derivative at exit). Indicator: 0 when it survives to the horizon,
/// otherwise the sign of the exiting coordinate.
fn integrate_bootstrap(
    k: usize,
    table: &BasisTable,
    m: &ReducedMatrix,
    s0: f64,
    horizon: f64,
    w_k0: f64,
    w_km1_0: f64,
    u_lower: &[f64],
    delta: f64,
    forcing: &ForcingBand,
    steps_per_efold: usize,
) -> (f64, f64, f64) {
    let (u_k0, u_km1_0) = m.u_from_w(w_k0, w_km1_0);
    let mut u = vec![0.0; k + 1];
    u[..k.saturating_sub(1)].copy_from_slice(&u_lower[..k.saturating_sub(1)]);
    if k >= 1 {
        u[k - 1] = u_km1_0;
        u[k] = u_k0;
    }
    let mut state = ExcitedState {
        k,
        s: s0,
        t: 0.0,
        log_lambda: 0.0,
        u,
    };
    let bootstrap = |st: &ExcitedState| -> f64 {
        let (_, w_km1) = st.w_pair(m);
        let mut q = w_km1 * w_km1;
        for j in 0..k.saturating_sub(1) {
            q += (st.u[j] / delta) * (st.u[j] / delta);
        }
        q
    };
    let outgoing = |st: &ExcitedState| -> f64 {
        // d/ds [W_{k-1}^2 + sum (U_j/delta)^2] from the ODE right-hand side
        let du = excited_rhs(k, table, st.s, &st.u, forcing);
        let (_, w_km1) = st.w_pair(m);
        let dw_km1 = m.p[1][0] * du[st.k] + m.p[1][1] * du[st.k - 1];
        let mut g = 2.0 * w_km1 * dw_km1;
        for j in 0..k.saturating_sub(1) {
            g += 2.0 * st.u[j] * du[j] / (delta * delta);
        }
        g
    };
    loop {
        if bootstrap(&state) >= 4.0 {
            let (_, w_km1) = state.w_pair(m);
            return (state.s, w_km1.signum(), outgoing(&state));
        }
        if state.s >= horizon {
            return (state.s, 0.0, f64::NAN);
        }
        let ds = state.s / steps_per_efold as f64;
        state = excited_step(&state, ds, table, forcing).expect("positive step");
    }
}

/// Bisection for a single decoupled unstable scalar `U_j` (j <= k-2).
fn bisect_scalar(
    k: usize,
    j: usize,
    s0: f64,
    horizon: f64,
    delta: f64,
    forcing: &ForcingBand,
    steps_per_efold: usize,
) -> Result<f64> {
    let al = alpha_k(k);
    let nu = 1.0 + al - j as f64 / k as f64;
    let gamma = gamma_k(k);
    let f0 = forcing.amplitude;
    // integrate u' = (nu/s) u + f0 s^{-1-gamma}; exit when |u| > 2 delta
    let run = |u0: f64| -> f64 {
        let mut s = s0;
        let mut u = u0;
        while s < horizon {
            let ds = s / steps_per_efold as f64;
            let rhs = |s: f64, u: f64| nu / s * u + f0 * s.powf(-1.0 - gamma);
            let k1 = rhs(s, u);
            let k2 = rhs(s + 0.5 * ds, u + 0.5 * ds * k1);
            let k3 = rhs(s + 0.5 * ds, u + 0.5 * ds * k2);
            let k4 = rhs(s + ds, u + ds * k3);
            u += ds / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            s += ds;
            if u.abs() > 2.0 * delta {
                return u.signum();
            }
        }
        0.0
    };
    let mut lo = -2.0 * delta;
    let mut hi = 2.0 * delta;
    let (slo, shi) = (run(lo), run(hi));
    if slo == 0.0 {
        return Ok(lo);
    }
    if shi == 0.0 {
        return Ok(hi);
    }
    if slo >= shi {
        return Err(MeltError::BracketNotFound(format!(
            "scalar mode {j}: exit signs ({slo}, {shi}) do not bracket"
        )));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        match run(mid) {
            0.0 => return Ok(mid),
            x if x > 0.0 => hi = mid,
            _ => lo = mid,
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Constructive realisation of the Brouwer argument: find initial data on the
/// stable manifold of the bootstrap set.
///
/// `U_j` for `j <= k-2` evolve autonomously and are tuned first by scalar
/// bisection; `W_{k-1}` then sees them only as bounded forcing and is tuned
/// by an outer bisection. The candidate bracket scan runs in parallel.
pub fn shoot_unstable(
    k: usize,
    s0: f64,
    horizon: f64,
    forcing: &ForcingBand,
    delta: f64,
    table: &BasisTable,
) -> Result<ShootResult> {
    if k < 1 {
        return Err(MeltError::InvalidParameter("shooting needs k >= 1".into()));
    }
    if s0 <= 0.0 || horizon <= s0 {
        return Err(MeltError::InvalidParameter(
            "need 0 < s0 < horizon".into(),
        ));
    }
    let m = build_reduced_matrix(k, table)?;
    let steps = 160;
    let mut u_lower = vec![0.0; k.saturating_sub(1)];
    for (j, slot) in u_lower.iter_mut().enumerate() {
        *slot = bisect_scalar(k, j, s0, horizon, delta, forcing, steps)?;
    }
    let w_k0 = 0.0;
    // parallel bracket scan for monotonicity evidence
    let candidates: Vec<f64> = (0..17).map(|i| -2.0 + 0.25 * i as f64).collect();
    let scans = parallel::map_collect(candidates, |w| {
        let (es, sign, _) = integrate_bootstrap(
            k, table, &m, s0, horizon, w_k0, w, &u_lower, delta, forcing, steps,
        );
        (w, es, sign)
    });
    let mut lo = f64::NAN;
    let mut hi = f64::NAN;
    for w in scans.windows(2) {
        if w[0].2 <= 0.0 && w[1].2 > 0.0 {
            lo = w[0].0;
            hi = w[1].0;
            break;
        }
        if w[0].2 == 0.0 {
            lo = w[0].0;
            hi = w[0].0;
            break;
        }
    }
    if lo.is_nan() {
        let pattern: Vec<f64> = scans.iter().map(|s| s.2).collect();
        return Err(MeltError::BracketNotFound(format!(
            "exit-sign pattern over the scan: {pattern:?}"
        )));
    }
    let mut min_outgoing = f64::INFINITY;
    let mut best = 0.5 * (lo + hi);
    for _ in 0..80 {
        if hi - lo < 1e-14 * (1.0 + best.abs()) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        best = mid;
        let (_, sign, out) = integrate_bootstrap(
            k, table, &m, s0, horizon, w_k0, mid, &u_lower, delta, forcing, steps,
        );
        if sign == 0.0 {
            break;
        }
        if out.is_finite() {
            min_outgoing = min_outgoing.min(out);
        }
        if sign > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // verify the final choice survives
    let (exit_s, sign, _) = integrate_bootstrap(
        k, table, &m, s0, horizon, w_k0, best, &u_lower, delta, forcing, steps,
    );
    if sign != 0.0 {
        return Err(MeltError::BracketNotFound(format!(
            "tuned trajectory still exits at s = {exit_s}"
        )));
    }
    Ok(ShootResult {
        k,
        s0,
        horizon,
        w_km1: best,
        u_lower,
        exit_scan: scans,
        min_outgoing_derivative: min_outgoing,
    })
}

/// Integrate an excited trajectory from tuned initial data, recording samples.
pub fn run_excited(
    k: usize,
    s0: f64,
    horizon: f64,
    w_k0: f64,
    w_km1: f64,
    u_lower: &[f64],
    lambda0: f64,
    table: &BasisTable,
    forcing: &ForcingBand,
    steps_per_efold: usize,
) -> Result<Vec<TrajectorySample>> {
    let m = build_reduced_matrix(k, table)?;
    let (u_k0, u_km1_0) = m.u_from_w(w_k0, w_km1);
    let mut u = vec![0.0; k + 1];
    u[..k.saturating_sub(1)].copy_from_slice(&u_lower[..k.saturating_sub(1)]);
    u[k - 1] = u_km1_0;
    u[k] = u_k0;
    let mut state = ExcitedState {
        k,
        s: s0,
        t: 0.0,
        log_lambda: lambda0.ln(),
        u,
    };
    let mut out = vec![TrajectorySample {
        s: state.s,
        t: state.t,
        b: state.b(),
        log_lambda: state.log_lambda,
    }];
    while state.s < horizon {
        let ds = state.s / steps_per_efold as f64;
        state = excited_step(&state, ds, table, forcing)?;
        out.push(TrajectorySample {
            s: state.s,
            t: state.t,
            b: state.b(),
            log_lambda: state.log_lambda,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rk4_matches_closed_form_b() {
        let mut st = StableState::new(1000.0, 0.01, 1.0).unwrap();
        let ds = 0.05;
        for _ in 0..20_000 {
            st = stable_step(&st, ds, 0.0).unwrap();
        }
        let exact = stable_closed_form_b(0.01, 1000.0, st.s);
        assert_abs_diff_eq!(st.b, exact, epsilon = 1e-8 * exact);
        // zero step is the identity
        let same = stable_step(&st, 0.0, 0.0).unwrap();
        assert_eq!(same.b, st.b);
        assert_eq!(same.log_lambda, st.log_lambda);
    }

    #[test]
    fn b_approaches_the_universal_power_law() {
        // b(s) ((3/2) sqrt(2/pi) s)^{2/3} -> 1
        let traj = run_stable(1000.0, 0.01, 1.0, 1e-6, 200, 0.0).unwrap();
        let end = traj.samples.last().unwrap();
        let r = end.b * (stable_c2() * end.s).powf(2.0 / 3.0);
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn stable_ratio_near_one_in_last_decade() {
        let traj = run_stable(1000.0, 0.01, 1.0, 1e-6, 200, 0.0).unwrap();
        let rep = stable_rate(&traj).unwrap();
        let (lo, hi) = rep.final_decade_range;
        assert!(lo > 0.95 && hi < 1.05, "ratio range [{lo}, {hi}]");
        // -log lambda slope against s^{1/3}: 3 ((3/2) sqrt(2/pi))^{-2/3}
        let expect = 3.0 * stable_c2().powf(-2.0 / 3.0);
        assert_abs_diff_eq!(rep.loglambda_s13_slope, expect, epsilon = 0.02 * expect);
        // ratio tends to 1 monotonically over the final two decades
        let n = rep.ratio_series.len();
        let late: Vec<f64> = rep.ratio_series[n - 50..].iter().map(|p| p.1).collect();
        for w in late.windows(2) {
            assert!((w[1] - 1.0).abs() <= (w[0] - 1.0).abs() + 1e-12);
        }
    }

    #[test]
    fn starting_point_does_not_move_the_limit() {
        let r1 = {
            let t = run_stable(1000.0, 0.01, 1.0, 1e-6, 200, 0.0).unwrap();
            stable_rate(&t).unwrap().final_decade_range
        };
        let r2 = {
            let t = run_stable(2000.0, 0.008, 0.7, 1e-6, 200, 0.0).unwrap();
            stable_rate(&t).unwrap().final_decade_range
        };
        assert_abs_diff_eq!(r1.0, r2.0, epsilon = 0.02);
        assert_abs_diff_eq!(r1.1, r2.1, epsilon = 0.02);
    }

    #[test]
    fn reduced_matrix_k1_hand_values() {
        let table = build_basis(10).unwrap();
        let m = build_reduced_matrix(1, &table).unwrap();
        assert_abs_diff_eq!(m.entries[0][0], -15.0 / 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.entries[0][1], -2.0 * (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(m.entries[1][0], 6.0f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(m.entries[1][1], 25.0 / 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mu1, 17.0 / 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mu2, -7.0 / 8.0, epsilon = 1e-12);
    }

    #[test]
    fn reduced_matrix_trace_det_and_eigen_formulas() {
        let table = build_basis(10).unwrap();
        for k in 1..=10usize {
            let m = build_reduced_matrix(k, &table).unwrap();
            let kf = k as f64;
            let al = alpha_k(k);
            // mu1 = alpha_k + 1/k + 1, mu2 = alpha_k - 1
            assert_abs_diff_eq!(m.mu1, al + 1.0 / kf + 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m.mu2, al - 1.0, epsilon = 1e-12);
            // trace = 2 alpha_k + 1/k (numerical form of a_k - d_k)
            let tr = m.entries[0][0] + m.entries[1][1];
            assert_abs_diff_eq!(tr, 2.0 * al + 1.0 / kf, epsilon = 1e-12);
            // det = -1 - 1/k + alpha_k (1/k + alpha_k)
            let det = m.entries[0][0] * m.entries[1][1] - m.entries[0][1] * m.entries[1][0];
            assert_abs_diff_eq!(
                det,
                -1.0 - 1.0 / kf + al * (1.0 / kf + al),
                epsilon = 1e-12
            );
            // P B P^{-1} = diag(mu2, mu1)
            let b = m.entries;
            let mut pb = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    pb[i][j] = m.p[i][0] * b[0][j] + m.p[i][1] * b[1][j];
                }
            }
            let mut d = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    d[i][j] = pb[i][0] * m.p_inv[0][j] + pb[i][1] * m.p_inv[1][j];
                }
            }
            assert_abs_diff_eq!(d[0][0], m.mu2, epsilon = 1e-10);
            assert_abs_diff_eq!(d[1][1], m.mu1, epsilon = 1e-10);
            assert_abs_diff_eq!(d[0][1], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(d[1][0], 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn frozen_values_solve_the_leading_system() {
        let table = build_basis(6).unwrap();
        for k in 1..=4usize {
            let chk = frozen_residual_check(k, &table, 1000.0);
            // r2 and the a^e identity are exact
            assert!(chk.b_residual_scaled < 1e-12, "k={k}: {}", chk.b_residual_scaled);
            assert!(chk.a_identity < 1e-16, "k={k}: {}", chk.a_identity);
            // r1 * s^3 equals C_k (k+1)/(2k)^3 up to rounding
            let kf = k as f64;
            let expect = table.c[k] * (kf + 1.0) / (2.0 * kf).powi(3);
            assert_abs_diff_eq!(chk.mode_residual_scaled, expect, epsilon = 1e-9 * expect);
        }
    }

    #[test]
    fn zero_tilde_data_gives_exact_power_law() {
        let table = build_basis(4).unwrap();
        let k = 1;
        let mut st = ExcitedState::new(k, 1000.0, 1.0, vec![0.0; k + 1]).unwrap();
        let forcing = ForcingBand::default();
        while st.s < 1.0e6 {
            let ds = st.s / 200.0;
            st = excited_step(&st, ds, &table, &forcing).unwrap();
        }
        for &u in &st.u {
            assert_eq!(u, 0.0);
        }
        // lambda(s) = (s/s0)^{-(k+1)/2k} exactly for zero tilde data
        let expect = -(k as f64 + 1.0) / (2.0 * k as f64) * (st.s / 1000.0).ln();
        assert_abs_diff_eq!(st.log_lambda, expect, epsilon = 1e-8 * expect.abs());
        // t(s) increases and stays finite
        assert!(st.t > 0.0 && st.t.is_finite());
    }

    #[test]
    fn w_modes_follow_their_exponents() {
        let table = build_basis(4).unwrap();
        let k = 2;
        let m = build_reduced_matrix(k, &table).unwrap();
        let forcing = ForcingBand::default();
        // pure W_{k-1}: growth s^{mu1}
        let (uk, ukm1) = m.u_from_w(0.0, 1e-6);
        let mut st = ExcitedState::new(k, 100.0, 1.0, vec![0.0, ukm1, uk]).unwrap();
        while st.s < 1.0e4 {
            let ds = st.s / 400.0;
            st = excited_step(&st, ds, &table, &forcing).unwrap();
        }
        let (wk, wkm1) = st.w_pair(&m);
        let growth = (wkm1 / 1e-6).ln() / (st.s / 100.0).ln();
        assert_abs_diff_eq!(growth, m.mu1, epsilon = 0.01 * m.mu1);
        assert!(wk.abs() < 1e-9, "stable coordinate stayed decoupled: {wk}");
        // pure W_k: decay s^{mu2}
        let (uk, ukm1) = m.u_from_w(1e-2, 0.0);
        let mut st = ExcitedState::new(k, 100.0, 1.0, vec![0.0, ukm1, uk]).unwrap();
        while st.s < 1.0e4 {
            let ds = st.s / 400.0;
            st = excited_step(&st, ds, &table, &forcing).unwrap();
        }
        let (wk, _) = st.w_pair(&m);
        let decay = (wk / 1e-2).ln() / (st.s / 100.0).ln();
        assert_abs_diff_eq!(decay, m.mu2, epsilon = 0.01 * m.mu2.abs());
    }

    #[test]
    fn btilde_and_w_consistency() {
        let table = build_basis(4).unwrap();
        let k = 2;
        let m = build_reduced_matrix(k, &table).unwrap();
        let st = ExcitedState::new(k, 500.0, 1.0, vec![1e-3, 2e-3, -1e-3]).unwrap();
        let bt = st.btilde();
        let scale = 500.0f64.powf(1.5 + alpha_k(k));
        for (u, b) in st.u.iter().zip(bt.iter()) {
            assert_abs_diff_eq!(u / scale, *b, epsilon = 1e-18);
        }
        assert_abs_diff_eq!(st.b(), 1.0 / (2.0 * 2.0 * 500.0), epsilon = 1e-18);
        let (wk, wkm1) = st.w_pair(&m);
        let (uk, ukm1) = m.u_from_w(wk, wkm1);
        assert_abs_diff_eq!(uk, st.u[2], epsilon = 1e-15);
        assert_abs_diff_eq!(ukm1, st.u[1], epsilon = 1e-15);
    }

    #[test]
    fn shooting_k1_without_forcing_finds_zero() {
        let table = build_basis(4).unwrap();
        let res = shoot_unstable(1, 1000.0, 1.0e6, &ForcingBand::default(), 1e-2, &table).unwrap();
        assert!(res.w_km1.abs() < 1e-6, "tuned W_0 = {}", res.w_km1);
        assert!(res.u_lower.is_empty());
    }

    #[test]
    fn shooting_k1_with_forcing_matches_duhamel_oracle() {
        let table = build_basis(4).unwrap();
        let m = build_reduced_matrix(1, &table).unwrap();
        let c = 0.1;
        let s0 = 1000.0f64;
        let res = shoot_unstable(
            1,
            s0,
            1.0e6,
            &ForcingBand { amplitude: c },
            1e-2,
            &table,
        )
        .unwrap();
        // oracle: W' = (mu1/s) W + f_W s^{-1-gamma}, bounded iff
        //   W(s0) = -f_W s0^{-gamma} / (gamma + mu1),
        // with f_W the forcing mapped through the row of P for W_{k-1}
        let gamma = gamma_k(1);
        let f_w = c * (m.p[1][0] + m.p[1][1]);
        let oracle = -f_w * s0.powf(-gamma) / (gamma + m.mu1);
        assert_abs_diff_eq!(res.w_km1, oracle, epsilon = 2e-3 * oracle.abs().max(1e-6));
        // bound shape |W_0(s0)| <= C s0^{-gamma_1}
        assert!(res.w_km1.abs() <= 2.0 * c * s0.powf(-gamma));
        // outgoing condition positive at every probed boundary state
        assert!(res.min_outgoing_derivative > 0.0);
        // exit-time monotonicity on each side of the bracket
        let exits: Vec<(f64, f64, f64)> = res.exit_scan.clone();
        let best = res.w_km1;
        for w in exits.windows(2) {
            if w[1].0 < best {
                assert!(w[1].1 >= w[0].1 - 1e-9, "left branch exit times decrease");
            }
        }
    }

    #[test]
    fn shooting_k2_nested() {
        let table = build_basis(4).unwrap();
        let forcing = ForcingBand { amplitude: 0.05 };
        // shoot well past the fitting window: the leftover unstable component
        // grows like s^{mu1} toward the horizon, so the window must sit far
        // inside it
        let res = shoot_unstable(2, 1000.0, 3.0e7, &forcing, 1e-2, &table).unwrap();
        assert_eq!(res.u_lower.len(), 1);
        let traj = run_excited(
            2, 1000.0, 1.0e6, 0.0, res.w_km1, &res.u_lower, 1.0, &table, &forcing, 200,
        )
        .unwrap();
        // lambda ~ s^{-(k+1)/2k} = s^{-3/4} on the window
        let pts: Vec<(f64, f64)> = traj
            .iter()
            .filter(|p| p.s >= 3.0e4)
            .map(|p| (p.s.ln(), p.log_lambda))
            .collect();
        let slope = slope_of(&pts);
        assert_abs_diff_eq!(slope, -0.75, epsilon = 0.02);
    }
}
