//! Checks of the weighted-energy inequality layer against closed forms and
//! simulated trajectories.
//!
//! - exponent calculus: `theta(m)`, the six `beta` exponents, and the
//!   thresholds `4+rho`, `5+rho`, `6+2rho`, `6+2rho0`;
//! - Gagliardo-Nirenberg ratio samplers (plain and exponentially weighted);
//! - the pointwise `u_tt` bound with constant `C_{eps,rho}`;
//! - the two weighted budget propositions and the nonlinear integral ratios;
//! - the convolution integral `int_0^t (1+t-s)^-a (1+s)^-b ds`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::energetics::{DiagnosticsRow, RunningIntegrals};
use crate::error::{Error, Result};
use crate::grid::{self, Field, PolarGrid};
use crate::solver::{bump_profile, nonlinearity, NonlinearityParams, State};
use crate::weight::{budget_constants, psi, psi_derivatives, rho0_constant, WeightParams};

// ---------------------------------------------------------------------------
// exponent calculus

/// `theta(m) = 1 - 2/m`, the interpolation exponent of `L^m` between `L^2`
/// and `H^1` in two dimensions.
pub fn theta_exponent(m: f64) -> Result<f64> {
    if !(m >= 2.0) {
        return Err(Error::Domain(format!("theta(m) needs m >= 2, got {m}")));
    }
    Ok(1.0 - 2.0 / m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// `4 + rho`: both exponents must exceed it for the `int ||e^psi F||^2` bound.
    pub square: f64,
    /// `5 + rho`: for the `int ||e^psi F|| ||e^psi u_t||` bound.
    pub cross: f64,
    /// `6 + 2 rho`: for the derivative-type term.
    pub derivative: f64,
    /// `6 + 2 rho0`: global existence.
    pub global: f64,
}

pub fn thresholds(rho: f64) -> Thresholds {
    Thresholds {
        square: 4.0 + rho,
        cross: 5.0 + rho,
        derivative: 6.0 + 2.0 * rho,
        global: 6.0 + 2.0 * rho0_constant(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gates {
    pub square_ok: bool,
    pub cross_ok: bool,
    pub derivative_ok: bool,
    pub global_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentReport {
    pub p: f64,
    pub q: f64,
    pub rho: f64,
    pub eta: f64,
    pub eps1: f64,
    pub delta: f64,
    pub beta: [f64; 6],
    pub thresholds: Thresholds,
    pub gates: Gates,
}

pub fn exponent_report(
    p: f64,
    q: f64,
    rho: f64,
    eta: f64,
    eps1: f64,
    delta: f64,
) -> Result<ExponentReport> {
    if !(p > 1.0 && q > 1.0) {
        return Err(Error::Domain(format!(
            "p, q must exceed 1, got p = {p}, q = {q}"
        )));
    }
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("rho must be positive, got {rho}")));
    }
    if !(eta > 0.0 && eps1 > 0.0 && delta > 0.0) {
        return Err(Error::Domain("eta, eps1, delta must be positive".into()));
    }
    let th2p = theta_exponent(2.0 * p)?;
    let th2q = theta_exponent(2.0 * q)?;
    let k = 2.0 + rho;

    let beta1 = k * (1.0 - th2p) + (1.0 + eta) / p - (1.0 - 1.0 / p);
    let beta2 = k * (1.0 - th2q) + (1.0 + eta) / q - (1.0 - 1.0 / q);
    let beta3 = k * (1.0 - th2p) / 2.0 + (1.0 + eta) / p - 0.5 * (1.0 - 1.0 / p);
    let beta4 = k * (1.0 - th2q) / 2.0 + (1.0 + eta) / q - 0.5 * (1.0 - 1.0 / q);
    let beta5 = k * (1.0 + eps1) / (2.0 * q) + (1.0 + eta) / q;
    let beta6 = beta5 + k * (1.0 - th2q) / 2.0 - (1.0 - delta) / 2.0;

    let th = thresholds(rho);
    let gates = Gates {
        square_ok: p > th.square && q > th.square,
        cross_ok: p > th.cross && q > th.cross,
        derivative_ok: q > th.derivative,
        global_ok: p > th.global && q > th.global,
    };
    Ok(ExponentReport {
        p,
        q,
        rho,
        eta,
        eps1,
        delta,
        beta: [beta1, beta2, beta3, beta4, beta5, beta6],
        thresholds: th,
        gates,
    })
}

/// An `eta` making `beta1, beta2 < 0` (and `beta3, beta4 < 0` when the
/// second gate also holds), or `None` if `p, q <= 4 + rho`.
pub fn admissible_eta(p: f64, q: f64, rho: f64) -> Option<f64> {
    let slack1 = (p - 4.0 - rho).min(q - 4.0 - rho);
    if !(slack1 > 0.0) {
        return None;
    }
    let slack2 = 0.5 * (p - 5.0 - rho).min(q - 5.0 - rho);
    Some(if slack2 > 0.0 {
        0.5 * slack1.min(slack2)
    } else {
        0.5 * slack1
    })
}

/// `(eta, eps1, delta)` making `beta6 < 0`, or `None` if `q <= 6 + 2 rho`.
pub fn admissible_small_constants(q: f64, rho: f64) -> Option<(f64, f64, f64)> {
    let gap = 0.5 - (3.0 + rho) / q;
    if !(gap > 0.0) {
        return None;
    }
    let delta = gap / 2.0;
    let eps1 = gap * q / (4.0 * (2.0 + rho));
    let eta = gap * q / 8.0;
    Some((eta, eps1, delta))
}

// ---------------------------------------------------------------------------
// Gagliardo-Nirenberg samplers

fn ln_lm_sum(grid: &PolarGrid, v: &Field, m: f64, ring_log_factor: &[f64]) -> Option<f64> {
    // log of sum_i w_i exp(ring_log_factor_i) sum_j |v_ij|^m, computed around
    // the sup norm with log-sum-exp so extreme weights stay finite.
    let sup = v.sup_norm();
    if sup == 0.0 {
        return None;
    }
    let terms: Vec<f64> = (0..grid.nr())
        .filter_map(|i| {
            let s: f64 = v.ring(i).iter().map(|x| (x.abs() / sup).powf(m)).sum();
            (s > 0.0).then(|| grid.ring_weight(i).ln() + ring_log_factor[i] + s.ln())
        })
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + terms.iter().map(|x| (x - top).exp()).sum::<f64>().ln();
    Some(m * sup.ln() + lse)
}

/// `||v||_{L^m} / (||v||_2^{1-theta} ||grad v||_2^theta)`.
pub fn gn_ratio(grid: &PolarGrid, v: &Field, m: f64) -> Result<f64> {
    let th = theta_exponent(m)?;
    if !m.is_finite() {
        return Err(Error::Domain("m must be finite".into()));
    }
    let num = grid::lm_norm(grid, v, m);
    let l2 = grid::lm_norm(grid, v, 2.0);
    let grad = grid::dirichlet_form(grid, v).sqrt();
    if l2 == 0.0 || (th > 0.0 && grad == 0.0) {
        return Err(Error::Undefined(
            "GN ratio of a field with zero norm or gradient".into(),
        ));
    }
    Ok(num / (l2.powf(1.0 - th) * grad.powf(th)))
}

/// `||e^{sigma psi} v||_{L^m} / ((1+t)^{(2+rho)(1-theta)/2} ||grad v||^{1-sigma} ||e^psi grad v||^sigma)`.
pub fn weighted_gn_ratio(
    grid: &PolarGrid,
    v: &Field,
    t: f64,
    m: f64,
    sigma: f64,
    w: &WeightParams,
) -> Result<f64> {
    let th = theta_exponent(m)?;
    if !m.is_finite() {
        return Err(Error::Domain("m must be finite".into()));
    }
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::Domain(format!(
            "sigma must lie in (0, 1], got {sigma}"
        )));
    }
    let psi_ring: Vec<f64> = grid.radii().iter().map(|&r| psi(t, r, w)).collect();
    let factor: Vec<f64> = psi_ring.iter().map(|p| m * sigma * p).collect();
    let ln_num = ln_lm_sum(grid, v, m, &factor)
        .ok_or_else(|| Error::Undefined("weighted GN ratio of the zero field".into()))?
        / m;

    let gsq = grid::gradient_sq(grid, v);
    let grad = grid::dirichlet_form(grid, v);
    let lw: Vec<f64> = psi_ring.iter().map(|p| 2.0 * p).collect();
    let wgrad = grid::radial_weighted_sum(grid, &gsq, &lw);
    if !(grad > 0.0) || !(wgrad > 0.0) {
        return Err(Error::Undefined(
            "weighted GN ratio with zero gradient".into(),
        ));
    }
    let ln_den = (2.0 + w.rho()) * (1.0 - th) / 2.0 * (1.0 + t).ln()
        + 0.5 * (1.0 - sigma) * grad.ln()
        + 0.5 * sigma * wgrad.ln();
    Ok((ln_num - ln_den).exp())
}

/// A smooth Dirichlet-compatible function on an annulus: a sum of radial
/// bumps times angular harmonics. It is mesh independent, so the same
/// sample can be evaluated on several refinements.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothField {
    pub modes: Vec<BumpMode>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpMode {
    pub coef: f64,
    pub r1: f64,
    pub r2: f64,
    pub harmonic: u32,
    pub phase: f64,
}

impl SmoothField {
    /// Five modes with standard normal coefficients, supported inside
    /// `(r_inner, r_outer)`.
    pub fn random(rng: &mut impl Rng, r_inner: f64, r_outer: f64) -> Self {
        let len = r_outer - r_inner;
        let modes = (0..5)
            .map(|_| {
                let width = len * rng.random_range(0.25..0.6);
                let r1 = r_inner + rng.random_range(0.02..(0.98 - width / len)) * len;
                BumpMode {
                    coef: rng.sample(StandardNormal),
                    r1,
                    r2: r1 + width,
                    harmonic: rng.random_range(0..4),
                    phase: rng.random_range(0.0..2.0 * PI),
                }
            })
            .collect();
        Self { modes }
    }

    pub fn eval(&self, r: f64, theta: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                m.coef * bump_profile(r, m.r1, m.r2) * (m.harmonic as f64 * theta + m.phase).cos()
            })
            .sum()
    }

    pub fn sample(&self, grid: &PolarGrid) -> Field {
        grid.sample(|r, th| self.eval(r, th))
    }
}

/// `count` seeded random fields for the annulus of `grid`.
pub fn random_fields(seed: u64, count: usize, r_inner: f64, r_outer: f64) -> Vec<SmoothField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| SmoothField::random(&mut rng, r_inner, r_outer))
        .collect()
}

// ---------------------------------------------------------------------------
// pointwise u_tt bound

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UttBoundReport {
    /// `min (rhs - lhs) / (rhs + lhs)` over nodes with nonzero terms; 0 when all
    /// terms vanish. The common factor `e^{2 psi}` is divided out.
    pub min_relative_slack: f64,
    /// Node with the smallest relative slack.
    pub worst_node: (usize, usize),
    pub c_eps_rho: f64,
}

/// Evaluates
/// `|grad psi|^2/(-psi_t) |u_tt|^2 <= (-psi_t) |lap u|^2 + eps |lap u_t|^2 + C_{eps,rho} |F|^2`
/// at every node, with `u_tt = lap u + lap u_t + F` taken from the equation.
pub fn utt_bound_residual(
    grid: &PolarGrid,
    s: &State,
    np: &NonlinearityParams,
    w: &WeightParams,
) -> Result<UttBoundReport> {
    if !s.is_finite() {
        return Err(Error::BlowUp { t: s.t });
    }
    let eps = w.eps().filter(|_| w.above_rho0()).ok_or_else(|| {
        Error::Domain("the u_tt bound needs rho > rho0 and eps in the window".into())
    })?;
    let c = budget_constants(w)?.c_eps_rho;
    let lap_u = grid::laplacian(grid, &s.u);
    let lap_v = grid::laplacian(grid, &s.v);
    let f = nonlinearity(&s.u, &s.v, np);

    let mut worst = f64::INFINITY;
    let mut worst_node = (0, 0);
    for i in 0..grid.nr() {
        let d = psi_derivatives(s.t, grid.radii()[i], w);
        let mpt = -d.psi_t;
        let ratio = d.grad_psi_mag * d.grad_psi_mag / mpt;
        for j in 0..grid.ntheta() {
            let (lu, lv, ff) = (lap_u.get(i, j), lap_v.get(i, j), f.get(i, j));
            let utt = lu + lv + ff;
            let lhs = ratio * utt * utt;
            let rhs = mpt * lu * lu + eps * lv * lv + c * ff * ff;
            let scale = lhs + rhs;
            if scale > 0.0 {
                let rel = (rhs - lhs) / scale;
                if rel < worst {
                    worst = rel;
                    worst_node = (i, j);
                }
            }
        }
    }
    Ok(UttBoundReport {
        min_relative_slack: if worst.is_finite() { worst } else { 0.0 },
        worst_node,
        c_eps_rho: c,
    })
}

// ---------------------------------------------------------------------------
// trajectory monitors

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// Higher-order weighted budget with constant `C~_{eps,rho}` (needs `rho > rho0`).
    Higher,
    /// Lower-order weighted budget (any `rho > 0`).
    Lower,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetReport {
    pub t: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `max_t (lhs - rhs) / max(rhs, 1e-14)`
    pub max_violation: f64,
}

pub const BUDGET_FLOOR: f64 = 1e-14;

pub fn budget_monitor(
    rows: &[DiagnosticsRow],
    integrals: &[RunningIntegrals],
    w: &WeightParams,
    which: Budget,
) -> Result<BudgetReport> {
    if rows.is_empty() || rows.len() != integrals.len() {
        return Err(Error::Domain(
            "budget monitor needs matching, nonempty rows and integrals".into(),
        ));
    }
    let (eps, c_tilde) = match which {
        Budget::Higher => {
            let eps = w.eps().filter(|_| w.above_rho0()).ok_or_else(|| {
                Error::Domain(
                    "the higher-order budget needs rho > rho0 and eps in the window".into(),
                )
            })?;
            (eps, budget_constants(w)?.c_tilde)
        }
        Budget::Lower => (0.0, 0.0),
    };
    let first = rows[0];
    let mut report = BudgetReport {
        t: Vec::with_capacity(rows.len()),
        lhs: Vec::with_capacity(rows.len()),
        rhs: Vec::with_capacity(rows.len()),
        max_violation: f64::NEG_INFINITY,
    };
    for (row, int) in rows.iter().zip(integrals) {
        let (lhs, rhs) = match which {
            Budget::Higher => (
                row.w_second + (1.0 - eps) * int.lap_v_sq_w,
                first.w_second + c_tilde * int.forcing_sq_w,
            ),
            Budget::Lower => (row.w_first, first.w_first + 2.0 * int.forcing_dot_w),
        };
        let violation = (lhs - rhs) / rhs.max(BUDGET_FLOOR);
        report.max_violation = report.max_violation.max(violation);
        report.t.push(row.t);
        report.lhs.push(lhs);
        report.rhs.push(rhs);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearSample {
    pub t: f64,
    /// `int ||e^psi F||^2`
    pub a_lhs: f64,
    /// `int ||e^psi F|| ||e^psi u_t||`
    pub b_lhs: f64,
    /// running `M[u](t) = sup W`
    pub m: f64,
    pub m_p: f64,
    pub m_q: f64,
    pub m_p_half: f64,
    pub m_q_half: f64,
    pub ratio_a: f64,
    pub ratio_b: f64,
}

/// Ratios `A / (M^p + M^q)` and `B / (M^{(p+1)/2} + M^{(q+1)/2})` along a
/// trajectory. Refuses when `p, q` are not above `5 + rho`.
pub fn nonlinear_integral_monitor(
    rows: &[DiagnosticsRow],
    integrals: &[RunningIntegrals],
    np: &NonlinearityParams,
    w: &WeightParams,
) -> Result<Vec<NonlinearSample>> {
    let th = thresholds(w.rho());
    if !(np.p > th.square && np.q > th.square) {
        return Err(Error::Domain(format!(
            "integral bound needs p, q > 4 + rho = {}",
            th.square
        )));
    }
    if !(np.p > th.cross && np.q > th.cross) {
        return Err(Error::Domain(format!(
            "mixed integral bound needs p, q > 5 + rho = {}",
            th.cross
        )));
    }
    let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };
    let mut m = 0.0f64;
    Ok(rows
        .iter()
        .zip(integrals)
        .map(|(row, int)| {
            m = m.max(row.w);
            let (m_p, m_q) = (m.powf(np.p), m.powf(np.q));
            let (m_ph, m_qh) = (m.powf((np.p + 1.0) / 2.0), m.powf((np.q + 1.0) / 2.0));
            NonlinearSample {
                t: row.t,
                a_lhs: int.forcing_sq_w,
                b_lhs: int.forcing_dot_w,
                m,
                m_p,
                m_q,
                m_p_half: m_ph,
                m_q_half: m_qh,
                ratio_a: ratio(int.forcing_sq_w, m_p + m_q),
                ratio_b: ratio(int.forcing_dot_w, m_ph + m_qh),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// convolution decay integral

const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const GK_WK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const G7_W: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WK[7] * fc;
    let mut g = G7_W[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        k += GK_WK[i] * s;
        if i % 2 == 1 {
            g += G7_W[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod (7, 15) quadrature to absolute tolerance `tol`.
pub fn adaptive_integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (val, err) = gk15(f, a, b);
        if err <= tol || depth >= 50 {
            return val;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    rec(&f, a, b, tol, 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvolutionSample {
    pub t: f64,
    pub integral: f64,
    /// `(1+t)^a I(t)`
    pub normalized: f64,
}

pub const CONVOLUTION_TOL: f64 = 1e-10;

/// `I(t) = int_0^t (1+t-s)^-a (1+s)^-b ds`.
pub fn convolution_integral(a: f64, b: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let f = |s: f64| (1.0 + t - s).powf(-a) * (1.0 + s).powf(-b);
    // The integrand is concentrated near s = 0 (and near s = t); splitting at
    // fixed distances from the ends keeps the panels well scaled for large t.
    let mut cuts = vec![0.0];
    let mut x = 1.0;
    while x < 0.5 * t {
        cuts.push(x);
        x *= 4.0;
    }
    let mut upper: Vec<f64> = cuts
        .iter()
        .rev()
        .filter(|&&c| c > 0.0)
        .map(|c| t - c)
        .collect();
    cuts.retain(|&c| c < 0.5 * t);
    cuts.push(0.5 * t);
    cuts.append(&mut upper);
    cuts.push(t);
    cuts.dedup();
    let tol = CONVOLUTION_TOL / cuts.len() as f64;
    cuts.windows(2)
        .map(|w| adaptive_integrate(f, w[0], w[1], tol))
        .sum()
}

/// Table of `(t, I(t), (1+t)^a I(t))` at `samples` log-spaced times in `[0, t_max]`.
pub fn convolution_decay(
    a: f64,
    b: f64,
    t_max: f64,
    samples: usize,
) -> Result<Vec<ConvolutionSample>> {
    if !(a > 0.0 && a <= 1.0) || !(b > 1.0) {
        return Err(Error::Domain(format!(
            "convolution decay needs a in (0, 1] and b > 1, got a = {a}, b = {b}"
        )));
    }
    if !(t_max > 0.0) || samples < 2 {
        return Err(Error::Domain(
            "need t_max > 0 and at least 2 samples".into(),
        ));
    }
    Ok((0..samples)
        .map(|k| {
            let t = (1.0 + t_max).powf(k as f64 / (samples - 1) as f64) - 1.0;
            let integral = convolution_integral(a, b, t);
            ConvolutionSample {
                t,
                integral,
                normalized: (1.0 + t).powf(a) * integral,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// report rows

/// One line of a check report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRecord {
    pub check_id: String,
    /// `key=value` pairs separated by `;`.
    pub params: String,
    pub lhs: f64,
    pub rhs: f64,
    pub value: f64,
    pub pass: bool,
}

impl CheckRecord {
    pub const CSV_HEADER: &'static str = "check_id,params,lhs,rhs,value,pass";

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{:.16e},{:.16e},{:.16e},{}",
            self.check_id, self.params, self.lhs, self.rhs, self.value, self.pass
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energetics::log_weight;
    use crate::grid::build_annulus;
    use approx::assert_relative_eq;

    #[test]
    fn theta_examples() {
        assert_eq!(theta_exponent(2.0).unwrap(), 0.0);
        assert_relative_eq!(theta_exponent(14.0).unwrap(), 6.0 / 7.0, epsilon = 1e-15);
        assert!(theta_exponent(1.5).is_err());
        let mut prev = 0.0;
        for k in 1..50 {
            let v = theta_exponent(2.0 + k as f64).unwrap();
            assert!(v > prev && v < 1.0);
            prev = v;
        }
    }

    #[test]
    fn beta_closed_forms() {
        let r = exponent_report(7.0, 7.5, 2.0, 0.1, 0.05, 0.02).unwrap();
        assert_relative_eq!(r.beta[0], -0.9 / 7.0, epsilon = 1e-14);
        let (p, q, rho, eta, e1, d) = (r.p, r.q, r.rho, r.eta, r.eps1, r.delta);
        assert_relative_eq!(r.beta[1], eta / q - (q - 4.0 - rho) / q, epsilon = 1e-14);
        assert_relative_eq!(
            r.beta[2],
            eta / p - (p - 5.0 - rho) / (2.0 * p),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            r.beta[3],
            eta / q - (q - 5.0 - rho) / (2.0 * q),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            r.beta[5],
            (e1 * (2.0 + rho) + 2.0 * eta) / (2.0 * q) + d / 2.0
                - (0.5 - (6.0 + 2.0 * rho) / (2.0 * q)),
            epsilon = 1e-14
        );
        let th = thresholds(2.0);
        assert_eq!((th.square, th.cross, th.derivative), (6.0, 7.0, 10.0));
        assert!(
            exponent_report(9.0, 9.0, 0.7, 0.1, 0.1, 0.1)
                .unwrap()
                .gates
                .global_ok
        );
    }

    #[test]
    fn constructive_small_parameters() {
        for &(p, q, rho) in &[(6.5, 7.0, 2.0), (9.0, 9.0, 1.5), (20.0, 6.2, 2.1)] {
            let eta = admissible_eta(p, q, rho).unwrap();
            let r = exponent_report(p, q, rho, eta, 0.1, 0.1).unwrap();
            assert!(r.beta[0] < 0.0 && r.beta[1] < 0.0);
        }
        assert!(admissible_eta(5.0, 9.0, 1.5).is_none());
        let (eta, e1, d) = admissible_small_constants(11.0, 2.0).unwrap();
        assert!(exponent_report(11.0, 11.0, 2.0, eta, e1, d).unwrap().beta[5] < 0.0);
        assert!(admissible_small_constants(10.0, 2.0).is_none());
    }

    #[test]
    fn gn_ratio_m2_is_one_and_scale_invariant() {
        let g = build_annulus(1.0, 4.0, 24, 48, None).unwrap();
        for f in random_fields(7, 5, 1.0, 4.0) {
            let v = f.sample(&g);
            assert!((gn_ratio(&g, &v, 2.0).unwrap() - 1.0).abs() < 1e-12);
            let r = gn_ratio(&g, &v, 6.0).unwrap();
            assert_relative_eq!(
                gn_ratio(&g, &v.scaled(-3.7), 6.0).unwrap(),
                r,
                max_relative = 1e-12
            );
        }
        assert!(matches!(
            gn_ratio(&g, &g.zeros(), 4.0),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn weighted_gn_decreases_for_frozen_field() {
        let g = build_annulus(1.0, 4.0, 24, 48, None).unwrap();
        let w = WeightParams::new(2.0).unwrap();
        for f in random_fields(11, 5, 1.0, 4.0) {
            let v = f.sample(&g);
            let r0 = weighted_gn_ratio(&g, &v, 0.0, 6.0, 0.5, &w).unwrap();
            let r10 = weighted_gn_ratio(&g, &v, 10.0, 6.0, 0.5, &w).unwrap();
            assert!(r10 < r0, "{r10} !< {r0}");
        }
    }

    #[test]
    fn utt_bound_zero_state() {
        let g = build_annulus(1.0, 2.0, 8, 8, None).unwrap();
        let w = WeightParams::with_eps(2.0, 0.9).unwrap();
        let rep =
            utt_bound_residual(&g, &State::zero(&g), &NonlinearityParams::linear(), &w).unwrap();
        assert_eq!(rep.min_relative_slack, 0.0);
        assert!(utt_bound_residual(
            &g,
            &State::zero(&g),
            &NonlinearityParams::linear(),
            &WeightParams::new(2.0).unwrap()
        )
        .is_err());
    }

    #[test]
    fn utt_bound_holds_for_arbitrary_fields() {
        // the inequality is algebraic in (lap u, lap v, F), so any state works
        let g = build_annulus(1.0, 5.0, 20, 32, None).unwrap();
        let w = WeightParams::with_midpoint_eps(1.5).unwrap();
        let np = NonlinearityParams::new(1.0, 1.0, 3.0, 2.0).unwrap();
        let fields = random_fields(3, 6, 1.0, 5.0);
        for pair in fields.chunks(2) {
            for t in [0.0, 0.5, 3.0, 40.0] {
                let s = State {
                    u: pair[0].sample(&g),
                    v: pair[1].sample(&g),
                    t,
                };
                let rep = utt_bound_residual(&g, &s, &np, &w).unwrap();
                assert!(rep.min_relative_slack >= -1e-12, "{rep:?}");
            }
        }
    }

    #[test]
    fn gk_matches_closed_form() {
        let v = adaptive_integrate(|x| (-x).exp(), 0.0, 5.0, 1e-13);
        assert!((v - (1.0 - (-5f64).exp())).abs() < 1e-13);
        // a = 1, b = 2 has the closed form below
        let t: f64 = 3.0;
        let s = 2.0 + t;
        let exact =
            (1.0 / s) * (1.0 - 1.0 / (1.0 + t)) + (1.0 / (s * s)) * ((1.0 + t) * (1.0 + t)).ln();
        assert!((convolution_integral(1.0, 2.0, t) - exact).abs() < 1e-11);
        assert_eq!(convolution_integral(0.5, 2.0, 0.0), 0.0);
    }

    #[test]
    fn convolution_rejects_bad_regime() {
        assert!(convolution_decay(0.0, 2.0, 10.0, 5).is_err());
        assert!(convolution_decay(1.5, 2.0, 10.0, 5).is_err());
        assert!(convolution_decay(0.5, 1.0, 10.0, 5).is_err());
        let tab = convolution_decay(0.5, 2.0, 10.0, 5).unwrap();
        assert_eq!(tab[0].t, 0.0);
        assert_eq!(tab[0].integral, 0.0);
        assert!((tab[4].t - 10.0).abs() < 1e-12);
    }

    #[test]
    fn monitors_on_zero_trajectory() {
        let row = DiagnosticsRow {
            t: 0.0,
            e_classical: 0.0,
            e_higher: 0.0,
            l2_u: 0.0,
            w_first: 0.0,
            w_second: 0.0,
            w: 0.0,
            sup_u: 0.0,
            sup_v: 0.0,
            outer_ring_amp: 0.0,
        };
        let rows = vec![row; 4];
        let ints = vec![RunningIntegrals::default(); 4];
        let w = WeightParams::with_eps(2.0, 0.9).unwrap();
        for which in [Budget::Higher, Budget::Lower] {
            let rep = budget_monitor(&rows, &ints, &w, which).unwrap();
            assert_eq!(rep.max_violation, 0.0);
        }
        let np = NonlinearityParams::new(0.0, 0.0, 9.0, 9.0).unwrap();
        let mon = nonlinear_integral_monitor(&rows, &ints, &np, &w).unwrap();
        assert!(mon
            .iter()
            .all(|s| s.a_lhs == 0.0 && s.b_lhs == 0.0 && s.ratio_a == 0.0));
        let low = NonlinearityParams::new(1.0, 1.0, 6.5, 9.0).unwrap();
        let err = nonlinear_integral_monitor(&rows, &ints, &low, &w).unwrap_err();
        assert!(err.to_string().contains("5 + rho"));
        assert!(budget_monitor(
            &rows,
            &ints,
            &WeightParams::new(1.0).unwrap(),
            Budget::Higher
        )
        .is_err());
    }

    #[test]
    fn log_weight_is_twice_psi() {
        let g = build_annulus(1.0, 2.0, 4, 8, None).unwrap();
        let w = WeightParams::new(2.0).unwrap();
        let lw = log_weight(&g, 1.0, &w);
        assert_relative_eq!(lw[0], 2.0 * psi(1.0, g.radii()[0], &w));
    }
}
