//! Theta-scheme time stepping for
//! `u_tt - lap u - lap u_t = a |u|^p + b |u_t|^q + g(t, x)`.
//!
//! The equation is advanced as a first-order system in `(u, v = u_t)`:
//!
//! ```text
//! (v+ - v) / dt = lap(theta u+ + (1-theta) u) + lap(theta v+ + (1-theta) v) + F(u, v) + g(t + theta dt)
//! (u+ - u) / dt = theta v+ + (1-theta) v
//! ```
//!
//! with `F` evaluated at the old state. Eliminating `u+` leaves
//! `(I - c lap) v+ = rhs` with `c = theta dt (1 + theta dt)`, which is self
//! adjoint and positive definite in the quadrature inner product and is
//! solved with Jacobi-preconditioned conjugate gradients.

use std::f64::consts::PI;

use crate::energetics::{self, DiagnosticsRow, RunningIntegrals};
use crate::error::{Error, Result};
use crate::grid::{self, Field, PolarGrid};
use crate::weight::WeightParams;

/// `sup |u|` or `sup |v|` above this value is reported as blow-up.
pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Field,
    pub v: Field,
    pub t: f64,
}

impl State {
    pub fn zero(grid: &PolarGrid) -> Self {
        Self {
            u: grid.zeros(),
            v: grid.zeros(),
            t: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearityParams {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub q: f64,
}

impl NonlinearityParams {
    pub fn new(a: f64, b: f64, p: f64, q: f64) -> Result<Self> {
        if !(a >= 0.0) {
            return Err(Error::config("nonlinearity.a", "a must be nonnegative"));
        }
        if !(b >= 0.0) {
            return Err(Error::config("nonlinearity.b", "b must be nonnegative"));
        }
        if !(p > 1.0) {
            return Err(Error::config("nonlinearity.p", "p must exceed 1"));
        }
        if !(q > 1.0) {
            return Err(Error::config("nonlinearity.q", "q must exceed 1"));
        }
        Ok(Self { a, b, p, q })
    }

    /// `a = b = 0`; the exponents are placeholders.
    pub fn linear() -> Self {
        Self {
            a: 0.0,
            b: 0.0,
            p: 2.0,
            q: 2.0,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.a == 0.0 && self.b == 0.0
    }

    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let mut f = 0.0;
        if self.a != 0.0 {
            f += self.a * u.abs().powf(self.p);
        }
        if self.b != 0.0 {
            f += self.b * v.abs().powf(self.q);
        }
        f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeScheme {
    pub dt: f64,
    pub theta: f64,
    pub linear_solve_tol: f64,
    pub max_linear_iters: usize,
}

impl TimeScheme {
    pub fn new(dt: f64, theta: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::config("time.dt", "dt must be positive"));
        }
        if !(0.5..=1.0).contains(&theta) {
            return Err(Error::config("time.theta", "theta must lie in [0.5, 1]"));
        }
        Ok(Self {
            dt,
            theta,
            linear_solve_tol: 1e-10,
            max_linear_iters: 5000,
        })
    }
}

/// Nodewise `a |u|^p + b |v|^q`.
pub fn nonlinearity(u: &Field, v: &Field, np: &NonlinearityParams) -> Field {
    assert_eq!(u.shape(), v.shape());
    let mut out = u.clone();
    for (o, &vv) in out.values_mut().iter_mut().zip(v.values()) {
        *o = np.eval(*o, vv);
    }
    out
}

/// Radial bump `A exp(-1 / (1 - s^2))`, `s = (2r - (r1+r2)) / (r2 - r1)`,
/// vanishing outside `(r1, r2)`.
pub fn initial_bump(grid: &PolarGrid, amplitude: f64, r1: f64, r2: f64) -> Result<Field> {
    if !(grid.r_inner() < r1 && r1 < r2 && r2 < grid.r_outer()) {
        return Err(Error::config(
            "init.support",
            format!(
                "support [{r1}, {r2}] must satisfy r_inner < r1 < r2 < r_outer ({} .. {})",
                grid.r_inner(),
                grid.r_outer()
            ),
        ));
    }
    Ok(grid.sample_radial(|r| amplitude * bump_profile(r, r1, r2)))
}

/// Unit-amplitude bump profile on `(r1, r2)`.
pub fn bump_profile(r: f64, r1: f64, r2: f64) -> f64 {
    let s = (2.0 * r - (r1 + r2)) / (r2 - r1);
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Manufactured solution
/// `u(t, r, theta) = exp(-rate t) sin(pi (r - r_inner) / (r_outer - r_inner)) cos(k theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmsProblem {
    pub rate: f64,
    pub k: u32,
}

impl Default for MmsProblem {
    fn default() -> Self {
        // rate 1 would make lap u + lap u_t vanish identically; see `source`.
        Self { rate: 0.5, k: 2 }
    }
}

impl MmsProblem {
    fn spatial(&self, grid: &PolarGrid, r: f64, theta: f64) -> (f64, f64) {
        let len = grid.r_outer() - grid.r_inner();
        let w = PI / len;
        let x = w * (r - grid.r_inner());
        let (s, c) = x.sin_cos();
        let k = self.k as f64;
        let ang = (k * theta).cos();
        let lap = (-w * w * s + w * c / r - k * k * s / (r * r)) * ang;
        (s * ang, lap)
    }

    pub fn u_exact_at(&self, grid: &PolarGrid, t: f64, r: f64, theta: f64) -> f64 {
        (-self.rate * t).exp() * self.spatial(grid, r, theta).0
    }

    /// `(u_exact, v_exact)` sampled on the grid.
    pub fn reference(&self, grid: &PolarGrid, t: f64) -> (Field, Field) {
        let decay = (-self.rate * t).exp();
        let u = grid.sample(|r, th| decay * self.spatial(grid, r, th).0);
        let v = u.scaled(-self.rate);
        (u, v)
    }

    /// `g = u_tt - lap u - lap u_t - a |u|^p - b |u_t|^q` in closed form.
    pub fn source(&self, grid: &PolarGrid, np: &NonlinearityParams, t: f64) -> Field {
        let lam = self.rate;
        let decay = (-lam * t).exp();
        grid.sample(|r, th| {
            let (phi, lap_phi) = self.spatial(grid, r, th);
            let u = decay * phi;
            let lap_u = decay * lap_phi;
            // u_t = -lam u, u_tt = lam^2 u
            lam * lam * u - (1.0 - lam) * lap_u - np.eval(u, -lam * u)
        })
    }
}

/// Reusable buffers and the preconditioner for one grid and scheme.
pub struct Stepper<'g> {
    grid: &'g PolarGrid,
    scheme: TimeScheme,
    blowup_threshold: f64,
    inv_diag: Vec<f64>,
    lap_u: Field,
    lap_v: Field,
    r: Field,
    z: Field,
    p: Field,
    ap: Field,
}

/// Result of one step: the new state, the lagged forcing that was used, and
/// the number of CG iterations.
pub struct StepOutput {
    pub state: State,
    pub forcing: Field,
    pub iterations: usize,
}

impl<'g> Stepper<'g> {
    pub fn new(grid: &'g PolarGrid, scheme: TimeScheme) -> Self {
        let c = scheme.theta * scheme.dt * (1.0 + scheme.theta * scheme.dt);
        let inv_diag = grid::laplacian_diagonal(grid)
            .into_iter()
            .map(|d| 1.0 / (1.0 - c * d))
            .collect();
        Self {
            grid,
            scheme,
            blowup_threshold: DEFAULT_BLOWUP_THRESHOLD,
            inv_diag,
            lap_u: grid.zeros(),
            lap_v: grid.zeros(),
            r: grid.zeros(),
            z: grid.zeros(),
            p: grid.zeros(),
            ap: grid.zeros(),
        }
    }

    pub fn with_blowup_threshold(mut self, threshold: f64) -> Self {
        self.blowup_threshold = threshold;
        self
    }

    pub fn scheme(&self) -> &TimeScheme {
        &self.scheme
    }

    fn implicit_coeff(&self) -> f64 {
        self.scheme.theta * self.scheme.dt * (1.0 + self.scheme.theta * self.scheme.dt)
    }

    /// `out = x - c lap x`
    fn apply(&self, x: &Field, out: &mut Field) {
        let c = self.implicit_coeff();
        grid::laplacian_into(self.grid, x, out);
        for (o, xv) in out.values_mut().iter_mut().zip(x.values()) {
            *o = xv - c * *o;
        }
    }

    fn precondition(&mut self) {
        let nt = self.grid.ntheta();
        for (i, d) in self.inv_diag.iter().enumerate() {
            for (z, r) in self.z.values_mut()[i * nt..(i + 1) * nt]
                .iter_mut()
                .zip(&self.r.values()[i * nt..(i + 1) * nt])
            {
                *z = d * r;
            }
        }
    }

    /// Solves `(I - c lap) x = b` starting from `x`.
    fn solve(&mut self, b: &Field, x: &mut Field, t: f64) -> Result<usize> {
        let g = self.grid;
        let b_norm = grid::sq_sum(g, b).sqrt();
        if b_norm == 0.0 {
            x.values_mut().fill(0.0);
            return Ok(0);
        }
        let tol = self.scheme.linear_solve_tol * b_norm;

        let mut ax = g.zeros();
        self.apply(x, &mut ax);
        for ((r, bv), av) in self
            .r
            .values_mut()
            .iter_mut()
            .zip(b.values())
            .zip(ax.values())
        {
            *r = bv - av;
        }
        let mut res = grid::sq_sum(g, &self.r).sqrt();
        if res <= tol {
            return Ok(0);
        }
        self.precondition();
        self.p.values_mut().copy_from_slice(self.z.values());
        let mut rz = grid::inner(g, &self.r, &self.z);

        for it in 1..=self.scheme.max_linear_iters {
            let p = std::mem::replace(&mut self.p, g.zeros());
            let mut ap = std::mem::replace(&mut self.ap, g.zeros());
            self.apply(&p, &mut ap);
            let pap = grid::inner(g, &p, &ap);
            if !(pap > 0.0) || !pap.is_finite() {
                self.p = p;
                self.ap = ap;
                return Err(Error::NonConvergence {
                    t,
                    iterations: it,
                    residual: res,
                });
            }
            let alpha = rz / pap;
            for (xv, pv) in x.values_mut().iter_mut().zip(p.values()) {
                *xv += alpha * pv;
            }
            for (rv, av) in self.r.values_mut().iter_mut().zip(ap.values()) {
                *rv -= alpha * av;
            }
            res = grid::sq_sum(g, &self.r).sqrt();
            self.p = p;
            self.ap = ap;
            if res <= tol {
                return Ok(it);
            }
            self.precondition();
            let rz_new = grid::inner(g, &self.r, &self.z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (pv, zv) in self.p.values_mut().iter_mut().zip(self.z.values()) {
                *pv = zv + beta * *pv;
            }
        }
        Err(Error::NonConvergence {
            t,
            iterations: self.scheme.max_linear_iters,
            residual: res,
        })
    }

    /// Advances `s` by one step. `source` is `g(t + theta dt)` when present.
    pub fn step(
        &mut self,
        s: &State,
        np: &NonlinearityParams,
        source: Option<&Field>,
    ) -> Result<StepOutput> {
        if !s.is_finite() {
            return Err(Error::BlowUp { t: s.t });
        }
        let TimeScheme { dt, theta, .. } = self.scheme;
        let forcing = nonlinearity(&s.u, &s.v, np);

        grid::laplacian_into(self.grid, &s.u, &mut self.lap_u);
        grid::laplacian_into(self.grid, &s.v, &mut self.lap_v);
        let cv = (1.0 - theta) * (1.0 + theta * dt);
        let mut rhs = s.v.clone();
        {
            let vals = rhs.values_mut();
            let lu = self.lap_u.values();
            let lv = self.lap_v.values();
            let f = forcing.values();
            for k in 0..vals.len() {
                let g = source.map_or(0.0, |g| g.values()[k]);
                vals[k] += dt * (lu[k] + cv * lv[k] + f[k] + g);
            }
        }
        if !rhs.is_finite() {
            return Err(Error::BlowUp { t: s.t + dt });
        }

        let mut v_new = s.v.clone();
        let iterations = self.solve(&rhs, &mut v_new, s.t + dt)?;

        let mut u_new = s.u.clone();
        for ((un, vn), vo) in u_new
            .values_mut()
            .iter_mut()
            .zip(v_new.values())
            .zip(s.v.values())
        {
            *un += dt * (theta * vn + (1.0 - theta) * vo);
        }

        let t_new = s.t + dt;
        let next = State {
            u: u_new,
            v: v_new,
            t: t_new,
        };
        if !next.is_finite()
            || next.u.sup_norm() > self.blowup_threshold
            || next.v.sup_norm() > self.blowup_threshold
        {
            return Err(Error::BlowUp { t: t_new });
        }
        Ok(StepOutput {
            state: next,
            forcing,
            iterations,
        })
    }
}

/// Convenience wrapper around [`Stepper::step`] for a single step.
pub fn step(
    grid: &PolarGrid,
    s: &State,
    scheme: &TimeScheme,
    np: &NonlinearityParams,
    source: Option<&Field>,
) -> Result<State> {
    Stepper::new(grid, *scheme)
        .step(s, np, source)
        .map(|o| o.state)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    BlewUp { t: f64 },
    SolverFailed { t: f64 },
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::BlewUp { .. } => "blew_up",
            RunStatus::SolverFailed { .. } => "solver_failed",
        }
    }

    /// Time of blow-up, or `-1` when the run did not blow up.
    pub fn blowup_time(&self) -> f64 {
        match *self {
            RunStatus::BlewUp { t } => t,
            _ => -1.0,
        }
    }
}

/// Everything needed to run one simulation.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub grid: PolarGrid,
    pub scheme: TimeScheme,
    pub nonlinearity: NonlinearityParams,
    pub weight: WeightParams,
    pub t_end: f64,
    /// Emit diagnostics every `stride` steps.
    pub stride: usize,
    pub u0: Field,
    pub u1: Field,
    pub mms: Option<MmsProblem>,
    pub blowup_threshold: f64,
}

impl SimSetup {
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.scheme.dt).round() as usize
    }
}

/// One emitted sample of a run.
pub struct Sample<'a> {
    pub state: &'a State,
    pub row: &'a DiagnosticsRow,
    pub integrals: &'a RunningIntegrals,
}

/// Runs from the initial data to `t_end` or failure, calling `observer` at
/// `t = 0` and after every `stride` steps (and at the final step).
pub fn run(setup: &SimSetup, mut observer: impl FnMut(Sample<'_>)) -> RunStatus {
    let grid = &setup.grid;
    let w = &setup.weight;
    let np = &setup.nonlinearity;
    let dt = setup.scheme.dt;
    let theta = setup.scheme.theta;
    let stride = setup.stride.max(1);
    let n_steps = setup.n_steps();

    let mut state = State {
        u: setup.u0.clone(),
        v: setup.u1.clone(),
        t: 0.0,
    };
    let mut integrals = RunningIntegrals::default();
    let row = energetics::diagnostics(grid, &state, w);
    observer(Sample {
        state: &state,
        row: &row,
        integrals: &integrals,
    });

    let mut stepper =
        Stepper::new(grid, setup.scheme).with_blowup_threshold(setup.blowup_threshold);
    for n in 1..=n_steps {
        let t_mid = state.t + theta * dt;
        let source = setup.mms.map(|m| m.source(grid, np, t_mid));
        let out = match stepper.step(&state, np, source.as_ref()) {
            Ok(o) => o,
            Err(Error::BlowUp { t }) => return RunStatus::BlewUp { t },
            Err(_) => return RunStatus::SolverFailed { t: state.t + dt },
        };
        integrals.accumulate(grid, w, &state, &out.state, &out.forcing, theta, dt);
        state = out.state;
        // keep t on the exact step lattice
        state.t = n as f64 * dt;
        if n % stride == 0 || n == n_steps {
            let row = energetics::diagnostics(grid, &state, w);
            observer(Sample {
                state: &state,
                row: &row,
                integrals: &integrals,
            });
        }
    }
    RunStatus::Completed
}

/// Rows and integrals at every output time, plus optional state snapshots.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub status: RunStatus,
    pub rows: Vec<DiagnosticsRow>,
    pub integrals: Vec<RunningIntegrals>,
    pub snapshots: Vec<State>,
}

/// Runs `setup`, keeping a state snapshot at every `snapshot_every`-th output
/// sample (none when zero).
pub fn run_collect(setup: &SimSetup, snapshot_every: usize) -> Trajectory {
    let mut rows = Vec::new();
    let mut integrals = Vec::new();
    let mut snapshots = Vec::new();
    let mut k = 0usize;
    let status = run(setup, |s| {
        rows.push(s.row.clone());
        integrals.push(s.integrals.clone());
        if snapshot_every > 0 && k % snapshot_every == 0 {
            snapshots.push(s.state.clone());
        }
        k += 1;
    });
    Trajectory {
        status,
        rows,
        integrals,
        snapshots,
    }
}
