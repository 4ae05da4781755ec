//! Energies and data functionals evaluated on grid states.
//!
//! All spatial integrals use the midpoint quadrature of [`crate::grid`]; the
//! gradient terms use the face-split `|grad f|^2` so that `||grad f||^2` is
//! exactly the Dirichlet form of the discrete Laplacian. Exponentially
//! weighted quantities use `e^{2 psi(t, r)}`, which is radial, so the weight
//! is applied ring by ring in log space.

use crate::error::{Error, Result};
use crate::grid::{self, Field, PolarGrid};
use crate::solver::State;
use crate::weight::{psi, WeightParams};

/// One time sample of every monitored energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub t: f64,
    /// `1/2 (||u_t||^2 + ||grad u||^2)`
    pub e_classical: f64,
    /// `1/2 (||u_t||^2 + ||grad u||^2 + ||grad u_t||^2 + ||lap u||^2)`
    pub e_higher: f64,
    /// `||u||^2`
    pub l2_u: f64,
    /// `||e^psi u_t||^2 + ||e^psi grad u||^2`
    pub w_first: f64,
    /// `||e^psi grad u_t||^2 + ||e^psi lap u||^2`
    pub w_second: f64,
    /// `W[u](t)`
    pub w: f64,
    pub sup_u: f64,
    pub sup_v: f64,
    pub outer_ring_amp: f64,
}

impl DiagnosticsRow {
    pub const CSV_HEADER: &'static str =
        "t,E_classical,E_higher,L2_u,Wfirst,Wsecond,W,sup_u,sup_v,outer_ring_amp";

    pub fn to_csv(&self) -> String {
        let v = self.values();
        v.iter()
            .map(|x| format!("{x:.16e}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn values(&self) -> [f64; 10] {
        [
            self.t,
            self.e_classical,
            self.e_higher,
            self.l2_u,
            self.w_first,
            self.w_second,
            self.w,
            self.sup_u,
            self.sup_v,
            self.outer_ring_amp,
        ]
    }

    /// Looks up a column by its CSV header name.
    pub fn column(&self, name: &str) -> Option<f64> {
        Self::CSV_HEADER
            .split(',')
            .position(|c| c == name)
            .map(|k| self.values()[k])
    }

    /// `||grad u_t||^2 + ||lap u||^2`
    pub fn higher_part(&self) -> f64 {
        2.0 * (self.e_higher - self.e_classical)
    }
}

/// The four unweighted derivative norms plus `||u||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerivativeNorms {
    pub u: f64,
    pub v: f64,
    pub grad_u: f64,
    pub grad_v: f64,
    pub lap_u: f64,
}

impl DerivativeNorms {
    /// `||D u||^2` over `D = (d_t, grad, grad d_t, lap)`.
    pub fn d_total(&self) -> f64 {
        self.v + self.grad_u + self.grad_v + self.lap_u
    }
}

struct Nodewise {
    lap_u: Field,
    grad_u: Field,
    grad_v: Field,
}

fn nodewise(grid: &PolarGrid, s: &State) -> Nodewise {
    Nodewise {
        lap_u: grid::laplacian(grid, &s.u),
        grad_u: grid::gradient_sq(grid, &s.u),
        grad_v: grid::gradient_sq(grid, &s.v),
    }
}

fn field_sum(grid: &PolarGrid, f: &Field) -> f64 {
    (0..grid.nr())
        .map(|i| grid.ring_weight(i) * f.ring(i).iter().sum::<f64>())
        .sum()
}

fn squared(f: &Field) -> Field {
    f.map(|x| x * x)
}

/// `2 psi(t, r_i)` for every ring.
pub fn log_weight(grid: &PolarGrid, t: f64, w: &WeightParams) -> Vec<f64> {
    grid.radii().iter().map(|&r| 2.0 * psi(t, r, w)).collect()
}

/// `||e^psi f||^2` for a field.
pub fn weighted_sq(grid: &PolarGrid, f: &Field, lw: &[f64]) -> f64 {
    grid::radial_weighted_sum(grid, &squared(f), lw)
}

fn norms_of(grid: &PolarGrid, s: &State, nw: &Nodewise) -> DerivativeNorms {
    DerivativeNorms {
        u: grid::sq_sum(grid, &s.u),
        v: grid::sq_sum(grid, &s.v),
        grad_u: field_sum(grid, &nw.grad_u),
        grad_v: field_sum(grid, &nw.grad_v),
        lap_u: grid::sq_sum(grid, &nw.lap_u),
    }
}

fn weighted_of(grid: &PolarGrid, s: &State, nw: &Nodewise, lw: &[f64]) -> DerivativeNorms {
    DerivativeNorms {
        u: weighted_sq(grid, &s.u, lw),
        v: weighted_sq(grid, &s.v, lw),
        grad_u: grid::radial_weighted_sum(grid, &nw.grad_u, lw),
        grad_v: grid::radial_weighted_sum(grid, &nw.grad_v, lw),
        lap_u: weighted_sq(grid, &nw.lap_u, lw),
    }
}

pub fn derivative_norms(grid: &PolarGrid, s: &State) -> DerivativeNorms {
    norms_of(grid, s, &nodewise(grid, s))
}

/// `e^psi`-weighted derivative norms at `s.t`.
pub fn weighted_derivative_norms(grid: &PolarGrid, s: &State, w: &WeightParams) -> DerivativeNorms {
    let lw = log_weight(grid, s.t, w);
    weighted_of(grid, s, &nodewise(grid, s), &lw)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub e_classical: f64,
    pub e_higher: f64,
    pub l2_u: f64,
}

pub fn energies(grid: &PolarGrid, s: &State) -> Energies {
    let n = derivative_norms(grid, s);
    Energies {
        e_classical: 0.5 * (n.v + n.grad_u),
        e_higher: 0.5 * n.d_total(),
        l2_u: n.u,
    }
}

/// `(Wfirst, Wsecond)`.
pub fn weighted_energies(grid: &PolarGrid, s: &State, w: &WeightParams) -> (f64, f64) {
    let n = weighted_derivative_norms(grid, s, w);
    (n.v + n.grad_u, n.grad_v + n.lap_u)
}

/// `W[u](t) = ||e^psi D u||^2 + (1+t) ||D u||^2 + ||u||^2`.
pub fn w_functional(grid: &PolarGrid, s: &State, w: &WeightParams) -> f64 {
    diagnostics(grid, s, w).w
}

pub fn diagnostics(grid: &PolarGrid, s: &State, w: &WeightParams) -> DiagnosticsRow {
    let nw = nodewise(grid, s);
    let plain = norms_of(grid, s, &nw);
    let lw = log_weight(grid, s.t, w);
    let weighted = weighted_of(grid, s, &nw, &lw);
    let w_first = weighted.v + weighted.grad_u;
    let w_second = weighted.grad_v + weighted.lap_u;
    DiagnosticsRow {
        t: s.t,
        e_classical: 0.5 * (plain.v + plain.grad_u),
        e_higher: 0.5 * plain.d_total(),
        l2_u: plain.u,
        w_first,
        w_second,
        w: w_first + w_second + (1.0 + s.t) * plain.d_total() + plain.u,
        sup_u: s.u.sup_norm(),
        sup_v: s.v.sup_norm(),
        outer_ring_amp: s.u.outer_ring_amp(),
    }
}

/// Time integrals accumulated by the stepper, one step at a time.
///
/// Velocity-type terms use the implicit average `theta v+ + (1-theta) v`
/// at `t + theta dt`, the same combination the scheme dissipates; the forcing
/// is the lagged `F(u, v)` of the old state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningIntegrals {
    pub t: f64,
    /// `int ||e^psi F||^2`
    pub forcing_sq_w: f64,
    /// `int ||e^psi F|| ||e^psi u_t||`
    pub forcing_dot_w: f64,
    /// `int ||e^psi lap u_t||^2`
    pub lap_v_sq_w: f64,
    /// `int ||grad u_t||^2`
    pub grad_v_sq: f64,
    /// `int (||u_t||^2 + ||grad u||^2)`
    pub classical: f64,
    /// `int (||grad u_t||^2 + ||lap u||^2)`
    pub higher: f64,
}

impl RunningIntegrals {
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate(
        &mut self,
        grid: &PolarGrid,
        w: &WeightParams,
        old: &State,
        new: &State,
        forcing: &Field,
        theta: f64,
        dt: f64,
    ) {
        let v_mid = old.v.scaled(1.0 - theta).axpy(theta, &new.v);
        let u_mid = old.u.scaled(1.0 - theta).axpy(theta, &new.u);
        let t_mid = old.t + theta * dt;
        let lw = log_weight(grid, t_mid, w);

        let lap_v = grid::laplacian(grid, &v_mid);
        let lap_u = grid::laplacian(grid, &u_mid);
        let grad_v = grid::dirichlet_form(grid, &v_mid);
        let grad_u = grid::dirichlet_form(grid, &u_mid);

        let f_w = weighted_sq(grid, forcing, &lw);
        let v_w = weighted_sq(grid, &v_mid, &lw);

        self.forcing_sq_w += dt * f_w;
        self.forcing_dot_w += dt * (f_w * v_w).sqrt();
        self.lap_v_sq_w += dt * weighted_sq(grid, &lap_v, &lw);
        self.grad_v_sq += dt * grad_v;
        self.classical += dt * (grid::sq_sum(grid, &v_mid) + grad_u);
        self.higher += dt * (grad_v + grid::sq_sum(grid, &lap_u));
        self.t = new.t;
    }
}

/// Functionals of the initial data `(u0, u1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataFunctionals {
    pub i0: f64,
    pub i1: f64,
    pub i2: f64,
    pub j: f64,
    pub i_exp: f64,
    /// Hardy constant used inside `i0`.
    pub c0: f64,
}

pub fn data_functionals(
    grid: &PolarGrid,
    u0: &Field,
    u1: &Field,
    w: &WeightParams,
    c0: f64,
) -> Result<DataFunctionals> {
    if !(c0 > 0.0) {
        return Err(Error::config("constants.C0", "C0 must be positive"));
    }
    if !u0.is_finite() || !u1.is_finite() {
        return Err(Error::NonFinite("initial data".into()));
    }
    let lap_u0 = grid::laplacian(grid, u0);
    let grad_u0_sq = grid::gradient_sq(grid, u0);
    let grad_u1_sq = grid::gradient_sq(grid, u1);

    let u0_2 = grid::sq_sum(grid, u0);
    let u1_2 = grid::sq_sum(grid, u1);
    let gu0 = field_sum(grid, &grad_u0_sq);
    let gu1 = field_sum(grid, &grad_u1_sq);
    let lu0 = grid::sq_sum(grid, &lap_u0);

    // d(r)^2 as a log weight so that it shares the ring-wise summation
    let log_d2: Vec<f64> = grid
        .radii()
        .iter()
        .map(|&r| grid::d_function(r, grid).map(|d| 2.0 * d.ln()))
        .collect::<Result<_>>()?;
    let d_u1 = weighted_sq(grid, u1, &log_d2);
    let d_lap_u0 = weighted_sq(grid, &lap_u0, &log_d2);
    let d_mix = weighted_sq(grid, &u1.axpy(-1.0, &lap_u0), &log_d2);

    let i0 = 2.0 * u0_2 + u1_2 + 0.5 * gu0 + 3.0 * c0 * d_mix;
    let i1 = lu0 + gu1 + 1.5 * gu0 + u1_2;
    let i2 = 0.5 * (i0 + i1 + u1_2 + gu0 + gu1 + lu0);

    let lw0 = log_weight(grid, 0.0, w);
    let i_exp = grid::radial_weighted_sum(grid, &grad_u1_sq, &lw0)
        + weighted_sq(grid, &lap_u0, &lw0)
        + weighted_sq(grid, u1, &lw0)
        + grid::radial_weighted_sum(grid, &grad_u0_sq, &lw0);

    let j = u0_2 + gu0 + u1_2 + gu1 + lu0 + d_lap_u0 + d_u1 + i_exp;
    Ok(DataFunctionals {
        i0,
        i1,
        i2,
        j,
        i_exp,
        c0,
    })
}

/// Power-law fit `value ~ c (1+t)^(-alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub alpha: f64,
    pub c: f64,
    pub samples: usize,
}

/// Least squares of `log value` against `log(1+t)` over `t_a <= t <= t_b`.
pub fn fit_decay_exponent(series: &[(f64, f64)], t_a: f64, t_b: f64) -> Result<DecayFit> {
    let window: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= t_a && t <= t_b)
        .collect();
    if window.len() < 10 {
        return Err(Error::Fit(format!(
            "need at least 10 samples in [{t_a}, {t_b}], got {}",
            window.len()
        )));
    }
    if let Some(&(t, v)) = window.iter().find(|&&(_, v)| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Fit(format!(
            "nonpositive or non-finite value {v} at t = {t} (blow-up or zero solution?)"
        )));
    }
    let n = window.len() as f64;
    let (sx, sy) = window.iter().fold((0.0, 0.0), |(sx, sy), &(t, v)| {
        (sx + (1.0 + t).ln(), sy + v.ln())
    });
    let (mx, my) = (sx / n, sy / n);
    let (sxx, sxy) = window.iter().fold((0.0, 0.0), |(sxx, sxy), &(t, v)| {
        let dx = (1.0 + t).ln() - mx;
        (sxx + dx * dx, sxy + dx * (v.ln() - my))
    });
    if sxx == 0.0 {
        return Err(Error::Fit("all samples share one time".into()));
    }
    let slope = sxy / sxx;
    Ok(DecayFit {
        alpha: -slope,
        c: (my - slope * mx).exp(),
        samples: window.len(),
    })
}
