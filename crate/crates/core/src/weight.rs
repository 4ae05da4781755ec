//! The radial exponential weight
//!
//! ```text
//! psi(t, r) = 1 / (rho (1+t)^rho) + r^2 / (2 (1+t)^(2+rho))
//! ```
//!
//! together with its derivatives, the admissible window for the auxiliary
//! constant `eps`, and the explicit constants that appear in the weighted
//! higher-order energy budget. Everything here is a pure function of its
//! arguments.

use crate::error::{Error, Result};

/// Relative tolerance used when deciding whether a pointwise inequality holds.
pub const POINTWISE_RTOL: f64 = 1e-12;

/// Positive root of `2 r^2 + 3 r - 8 = 0`.
pub fn rho0_constant() -> f64 {
    (-3.0 + 73f64.sqrt()) / 4.0
}

const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Admissible range `[lo, 1)` for `eps` at a given `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsWindow {
    Empty,
    HalfOpen { lo: f64 },
}

impl EpsWindow {
    pub fn is_empty(&self) -> bool {
        match *self {
            EpsWindow::Empty => true,
            EpsWindow::HalfOpen { .. } => false,
        }
    }

    pub fn contains(&self, eps: f64) -> bool {
        match *self {
            EpsWindow::Empty => false,
            EpsWindow::HalfOpen { lo } => eps >= lo && eps < 1.0,
        }
    }

    pub fn lower(&self) -> Option<f64> {
        match *self {
            EpsWindow::Empty => None,
            EpsWindow::HalfOpen { lo } => Some(lo),
        }
    }

    pub fn midpoint(&self) -> Option<f64> {
        self.lower().map(|lo| (0.5 * (lo + 1.0)).min(ONE_BELOW))
    }
}

/// Lower end of the eps window, `(4 rho + 14) / ((2+rho)(2 rho+3))`,
/// without the emptiness decision.
pub fn epsilon_lower_bound(rho: f64) -> f64 {
    (4.0 * rho + 14.0) / ((2.0 + rho) * (2.0 * rho + 3.0))
}

pub fn epsilon_window(rho: f64) -> Result<EpsWindow> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Domain(format!("rho must be positive, got {rho}")));
    }
    // lo < 1 exactly when 2 rho^2 + 3 rho - 8 > 0, i.e. rho > rho0. Deciding on
    // rho directly keeps the boundary case rho == rho0 empty.
    if rho <= rho0_constant() {
        return Ok(EpsWindow::Empty);
    }
    let quad = 2.0 * rho * rho + 3.0 * rho - 8.0;
    let lo = 1.0 - quad.max(0.0) / ((2.0 + rho) * (2.0 * rho + 3.0));
    // within an ulp of rho0 the bound rounds to 1; keep one float in the window
    Ok(EpsWindow::HalfOpen {
        lo: lo.min(ONE_BELOW),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightParams {
    rho: f64,
    eps: Option<f64>,
}

impl WeightParams {
    /// Weight with no auxiliary constant. Only checks that need `rho > 0` are
    /// available on such a value.
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Domain(format!("rho must be positive, got {rho}")));
        }
        Ok(Self { rho, eps: None })
    }

    /// Weight with `eps`, gated on the window `[lo, 1)`.
    pub fn with_eps(rho: f64, eps: f64) -> Result<Self> {
        let window = epsilon_window(rho)?;
        if window.is_empty() {
            return Err(Error::Domain(format!(
                "eps = {eps} given but the eps window is empty for rho = {rho} (rho <= rho0 = {:.6})",
                rho0_constant()
            )));
        }
        if !window.contains(eps) {
            return Err(Error::Domain(format!(
                "eps = {eps} outside window [{}, 1) for rho = {rho}",
                window.lower().unwrap_or(f64::NAN)
            )));
        }
        Ok(Self {
            rho,
            eps: Some(eps),
        })
    }

    /// `eps` at the midpoint of the window, when the window is nonempty.
    pub fn with_midpoint_eps(rho: f64) -> Result<Self> {
        match epsilon_window(rho)?.midpoint() {
            Some(eps) => Self::with_eps(rho, eps),
            None => Self::new(rho),
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn eps(&self) -> Option<f64> {
        self.eps
    }

    /// True iff `rho > rho0`.
    pub fn above_rho0(&self) -> bool {
        self.rho > rho0_constant()
    }

    /// True iff `rho > rho0` and `eps` is set (and therefore in the window).
    pub fn has_valid_eps(&self) -> bool {
        self.above_rho0() && self.eps.is_some()
    }
}

pub fn psi(t: f64, r: f64, w: &WeightParams) -> f64 {
    let rho = w.rho;
    let s = 1.0 + t;
    1.0 / (rho * s.powf(rho)) + r * r / (2.0 * s.powf(2.0 + rho))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiDerivatives {
    pub psi_t: f64,
    pub grad_psi_mag: f64,
    pub laplacian_psi: f64,
}

pub fn psi_derivatives(t: f64, r: f64, w: &WeightParams) -> PsiDerivatives {
    let rho = w.rho;
    let s = 1.0 + t;
    let s2 = s.powf(2.0 + rho);
    PsiDerivatives {
        psi_t: -1.0 / s.powf(1.0 + rho) - (2.0 + rho) * r * r / (2.0 * s.powf(3.0 + rho)),
        grad_psi_mag: r / s2,
        laplacian_psi: 2.0 / s2,
    }
}

/// Outcome of the pointwise weight inequalities at one `(t, r)`.
///
/// Each `*_value` is the left side of an inequality of the form `value <= 0`;
/// margins are `-value`, so positive means the inequality holds with room.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointwiseReport {
    pub mixed_ok: bool,
    pub eps_ok: bool,
    /// The `eps`-dependent check was not evaluated because `rho <= rho0` or
    /// `eps` is missing. `eps_ok` is false in that case.
    pub eps_gate_failed: bool,
    pub grad_ratio_ok: bool,
    pub ratio_bound_ok: bool,
    pub mixed_value: f64,
    pub eps_value: Option<f64>,
    pub grad_ratio_value: f64,
    pub ratio_value: f64,
    /// Smallest relative margin among the evaluated checks.
    pub worst_margin: f64,
}

impl PointwiseReport {
    /// All evaluated checks hold (a gated check counts as not evaluated).
    pub fn all_evaluated_ok(&self) -> bool {
        self.mixed_ok
            && self.grad_ratio_ok
            && self.ratio_bound_ok
            && (self.eps_gate_failed || self.eps_ok)
    }
}

/// `(value, scale)` where `value <= 0` is the inequality and `scale` is the sum
/// of the magnitudes of the terms that were combined.
fn holds(value: f64, scale: f64) -> (bool, f64) {
    let margin = if scale > 0.0 { -value / scale } else { -value };
    (value <= POINTWISE_RTOL * scale, margin)
}

pub fn check_pointwise(t: f64, r: f64, w: &WeightParams) -> PointwiseReport {
    let rho = w.rho;
    let d = psi_derivatives(t, r, w);
    let g2 = d.grad_psi_mag * d.grad_psi_mag;
    let pt = d.psi_t;
    let pt2 = pt * pt;

    // |grad psi|^2 - psi_t |grad psi|^2 - |psi_t|^2 <= 0
    let mixed_value = g2 - pt * g2 - pt2;
    let (mixed_ok, m_mixed) = holds(mixed_value, g2 + (pt * g2).abs() + pt2);

    // |grad psi|^2 / (-psi_t) <= 2 / (2+rho)
    let grad_bound = 2.0 / (2.0 + rho);
    let grad_ratio_value = g2 / (-pt) - grad_bound;
    let (grad_ratio_ok, m_grad) = holds(grad_ratio_value, grad_bound);

    // (-psi_t)(1+t) / psi <= 2 + rho
    let ratio_value = (-pt) * (1.0 + t) / psi(t, r, w) - (2.0 + rho);
    let (ratio_bound_ok, mr) = holds(ratio_value, 2.0 + rho);

    let mut worst = m_mixed.min(m_grad).min(mr);

    let (eps_ok, eps_gate_failed, eps_value) = match w.eps {
        Some(eps) if w.above_rho0() => {
            let k = (eps * (2.0 + rho) + 6.0) / (eps * (2.0 + rho) - 2.0);
            let value = k * g2 - pt2;
            let (ok, m7) = holds(value, k * g2 + pt2);
            worst = worst.min(m7);
            (ok, false, Some(value))
        }
        _ => (false, true, None),
    };

    PointwiseReport {
        mixed_ok,
        eps_ok,
        eps_gate_failed,
        grad_ratio_ok,
        ratio_bound_ok,
        mixed_value,
        eps_value,
        grad_ratio_value,
        ratio_value,
        worst_margin: worst,
    }
}

/// The two explicit constants of the weighted higher-order budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetConstants {
    /// Coefficient of `e^{2 psi} |F|^2` in the pointwise `u_tt` bound.
    pub c_eps_rho: f64,
    /// `c_eps_rho + 1 / (2 (1 - eps))`.
    pub c_tilde: f64,
}

pub fn budget_constants(w: &WeightParams) -> Result<BudgetConstants> {
    let eps = w
        .eps
        .ok_or_else(|| Error::Domain("eps is required for the budget constants".to_string()))?;
    if !w.above_rho0() {
        return Err(Error::Domain(format!(
            "budget constants need rho > rho0, got rho = {}",
            w.rho
        )));
    }
    let rho = w.rho;
    let gap = eps * (2.0 + rho) - 2.0;
    if !(gap > 0.0) || !(eps < 1.0) {
        return Err(Error::Domain(format!(
            "eps = {eps} outside window for rho = {rho}"
        )));
    }
    let c_eps_rho = (2.0 / (2.0 + rho)) * (1.0 + gap / 4.0 + 4.0 / gap);
    let c_tilde = c_eps_rho + 1.0 / (2.0 * (1.0 - eps));
    Ok(BudgetConstants { c_eps_rho, c_tilde })
}
