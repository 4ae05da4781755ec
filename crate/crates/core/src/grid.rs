//! Polar discretization of the annulus `r_inner < |x| < r_outer`.
//!
//! Unknowns live on the interior rings `r_i = r_inner + (i+1) dr`,
//! `i = 0..nr`, and the angles `theta_j = j dtheta`, `j = 0..ntheta`. Both
//! radial boundaries carry homogeneous Dirichlet data and are not stored.
//! The angular direction is periodic.
//!
//! The Laplacian is the conservative five-point stencil
//!
//! ```text
//! (r_{i+1/2} (f_{i+1} - f_i) - r_{i-1/2} (f_i - f_{i-1})) / (r_i dr^2)
//!     + (f_{j+1} - 2 f_j + f_{j-1}) / (r_i dtheta)^2
//! ```
//!
//! which is symmetric with respect to the midpoint quadrature
//! `w_i = r_i dr dtheta`. The nodewise `|grad f|^2` splits every face
//! difference between its two nodes, so that its quadrature sum equals
//! `<-lap f, f>` exactly.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    r_inner: f64,
    r_outer: f64,
    nr: usize,
    ntheta: usize,
    dr: f64,
    dtheta: f64,
    b_const: f64,
    radii: Vec<f64>,
}

impl PolarGrid {
    pub fn r_inner(&self) -> f64 {
        self.r_inner
    }
    pub fn r_outer(&self) -> f64 {
        self.r_outer
    }
    pub fn nr(&self) -> usize {
        self.nr
    }
    pub fn ntheta(&self) -> usize {
        self.ntheta
    }
    pub fn dr(&self) -> f64 {
        self.dr
    }
    pub fn dtheta(&self) -> f64 {
        self.dtheta
    }
    /// Constant `B` of the log weight `d(x) = |x| log(B |x|)`.
    pub fn b_const(&self) -> f64 {
        self.b_const
    }
    /// Radii of the interior rings.
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
    pub fn len(&self) -> usize {
        self.nr * self.ntheta
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.dtheta
    }
    /// Quadrature weight of every node on ring `i`.
    pub fn ring_weight(&self, i: usize) -> f64 {
        self.radii[i] * self.dr * self.dtheta
    }
    pub fn total_weight(&self) -> f64 {
        (0..self.nr).map(|i| self.ring_weight(i)).sum::<f64>() * self.ntheta as f64
    }

    pub fn zeros(&self) -> Field {
        Field {
            nr: self.nr,
            ntheta: self.ntheta,
            values: vec![0.0; self.len()],
        }
    }

    /// Samples `f(r, theta)` at every interior node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        let mut out = self.zeros();
        for i in 0..self.nr {
            let r = self.radii[i];
            for j in 0..self.ntheta {
                out.values[i * self.ntheta + j] = f(r, self.theta(j));
            }
        }
        out
    }

    /// Samples a radial profile `f(r)`.
    pub fn sample_radial(&self, f: impl Fn(f64) -> f64) -> Field {
        let mut out = self.zeros();
        for i in 0..self.nr {
            let v = f(self.radii[i]);
            out.ring_mut(i).fill(v);
        }
        out
    }

    fn check(&self, f: &Field) {
        assert!(
            f.nr == self.nr && f.ntheta == self.ntheta,
            "field shape {}x{} does not match grid {}x{}",
            f.nr,
            f.ntheta,
            self.nr,
            self.ntheta
        );
    }
}

pub fn build_annulus(
    r_inner: f64,
    r_outer: f64,
    nr: usize,
    ntheta: usize,
    b_const: Option<f64>,
) -> Result<PolarGrid> {
    if !(r_inner > 0.0) || !r_inner.is_finite() {
        return Err(Error::config("domain.r_inner", "must be positive"));
    }
    if !(r_outer > r_inner) || !r_outer.is_finite() {
        return Err(Error::config("domain.r_outer", "must exceed r_inner"));
    }
    if nr < 4 {
        return Err(Error::config("domain.nr", "must be at least 4"));
    }
    if ntheta < 8 || ntheta % 2 != 0 {
        return Err(Error::config(
            "domain.ntheta",
            "must be even and at least 8",
        ));
    }
    let b_const = match b_const {
        None => 2.0 / r_inner,
        Some(b) if b * r_inner >= 2.0 && b.is_finite() => b,
        Some(_) => return Err(Error::config("domain.B", "must satisfy B * r_inner >= 2")),
    };
    let dr = (r_outer - r_inner) / (nr + 1) as f64;
    let radii = (0..nr).map(|i| r_inner + (i + 1) as f64 * dr).collect();
    Ok(PolarGrid {
        r_inner,
        r_outer,
        nr,
        ntheta,
        dr,
        dtheta: 2.0 * PI / ntheta as f64,
        b_const,
        radii,
    })
}

/// Grid function on the interior nodes, stored ring by ring.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    nr: usize,
    ntheta: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn ring(&self, i: usize) -> &[f64] {
        &self.values[i * self.ntheta..(i + 1) * self.ntheta]
    }
    pub fn ring_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.ntheta..(i + 1) * self.ntheta]
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ntheta + j]
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.nr, self.ntheta)
    }
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            nr: self.nr,
            ntheta: self.ntheta,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &Field) -> Field {
        assert_eq!(self.shape(), other.shape());
        Field {
            nr: self.nr,
            ntheta: self.ntheta,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        }
    }
    /// Largest magnitude on the outermost interior ring.
    pub fn outer_ring_amp(&self) -> f64 {
        self.ring(self.nr - 1)
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Quadrature inner product `sum w_ij f_ij g_ij`.
pub fn inner(grid: &PolarGrid, f: &Field, g: &Field) -> f64 {
    grid.check(f);
    grid.check(g);
    let mut total = 0.0;
    for i in 0..grid.nr {
        let s: f64 = f.ring(i).iter().zip(g.ring(i)).map(|(a, b)| a * b).sum();
        total += grid.ring_weight(i) * s;
    }
    total
}

/// `sum w_ij f_ij^2`.
pub fn sq_sum(grid: &PolarGrid, f: &Field) -> f64 {
    inner(grid, f, f)
}

/// `sum_i w_i exp(log_weight_i) sum_j f_ij` for a nonnegative radial weight
/// given by its logarithm. The exponent is combined with the ring sum in log
/// space so that large weights multiplying zero rings never overflow.
pub fn radial_weighted_sum(grid: &PolarGrid, f: &Field, log_weight: &[f64]) -> f64 {
    grid.check(f);
    assert_eq!(log_weight.len(), grid.nr);
    let mut total = 0.0;
    for i in 0..grid.nr {
        let s: f64 = f.ring(i).iter().sum();
        if s != 0.0 {
            total += grid.ring_weight(i) * s.signum() * (log_weight[i] + s.abs().ln()).exp();
        }
    }
    total
}

/// Discrete `L^2` norm, optionally with a positive nodewise weight factor.
pub fn l2_norm(grid: &PolarGrid, f: &Field, weight: Option<&Field>) -> Result<f64> {
    grid.check(f);
    if !f.is_finite() {
        return Err(Error::NonFinite("l2_norm argument".into()));
    }
    let s = match weight {
        None => sq_sum(grid, f),
        Some(wf) => {
            grid.check(wf);
            let mut total = 0.0;
            for i in 0..grid.nr {
                let s: f64 = f
                    .ring(i)
                    .iter()
                    .zip(wf.ring(i))
                    .map(|(a, w)| if *a == 0.0 { 0.0 } else { w * a * a })
                    .sum();
                total += grid.ring_weight(i) * s;
            }
            total
        }
    };
    Ok(s.sqrt())
}

/// Discrete `L^m` norm `(sum w |f|^m)^(1/m)`.
pub fn lm_norm(grid: &PolarGrid, f: &Field, m: f64) -> f64 {
    grid.check(f);
    // Scale by the sup norm first so that large m does not underflow.
    let sup = f.sup_norm();
    if sup == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..grid.nr {
        let s: f64 = f.ring(i).iter().map(|v| (v.abs() / sup).powf(m)).sum();
        total += grid.ring_weight(i) * s;
    }
    sup * total.powf(1.0 / m)
}

#[inline]
fn neighbours(f: &Field, i: usize, j: usize, nr: usize, nt: usize) -> (f64, f64, f64, f64, f64) {
    let c = f.values[i * nt + j];
    let out = if i + 1 < nr {
        f.values[(i + 1) * nt + j]
    } else {
        0.0
    };
    let inn = if i > 0 {
        f.values[(i - 1) * nt + j]
    } else {
        0.0
    };
    let jp = if j + 1 < nt { j + 1 } else { 0 };
    let jm = if j > 0 { j - 1 } else { nt - 1 };
    (c, out, inn, f.values[i * nt + jp], f.values[i * nt + jm])
}

/// Writes `lap f` into `out`.
pub fn laplacian_into(grid: &PolarGrid, f: &Field, out: &mut Field) {
    grid.check(f);
    grid.check(out);
    let (nr, nt) = (grid.nr, grid.ntheta);
    let dr2 = grid.dr * grid.dr;
    for i in 0..nr {
        let r = grid.radii[i];
        let rp = r + 0.5 * grid.dr;
        let rm = r - 0.5 * grid.dr;
        let cr = 1.0 / (r * dr2);
        let ct = 1.0 / (r * r * grid.dtheta * grid.dtheta);
        for j in 0..nt {
            let (c, o, n, jp, jm) = neighbours(f, i, j, nr, nt);
            out.values[i * nt + j] = cr * (rp * (o - c) - rm * (c - n)) + ct * (jp - 2.0 * c + jm);
        }
    }
}

pub fn laplacian(grid: &PolarGrid, f: &Field) -> Field {
    let mut out = grid.zeros();
    laplacian_into(grid, f, &mut out);
    out
}

/// Diagonal of the Laplacian stencil, ring by ring.
pub fn laplacian_diagonal(grid: &PolarGrid) -> Vec<f64> {
    grid.radii
        .iter()
        .map(|&r| -2.0 / (grid.dr * grid.dr) - 2.0 / (r * r * grid.dtheta * grid.dtheta))
        .collect()
}

/// Nodewise `|grad f|^2 = f_r^2 + f_theta^2 / r^2`.
pub fn gradient_sq(grid: &PolarGrid, f: &Field) -> Field {
    grid.check(f);
    let (nr, nt) = (grid.nr, grid.ntheta);
    let mut out = grid.zeros();
    for i in 0..nr {
        let r = grid.radii[i];
        let rp = r + 0.5 * grid.dr;
        let rm = r - 0.5 * grid.dr;
        // A boundary face has no stored node on its far side, so the adjacent
        // ring carries all of it.
        let wp = if i + 1 == nr { 1.0 } else { 0.5 };
        let wm = if i == 0 { 1.0 } else { 0.5 };
        let inv_dr = 1.0 / grid.dr;
        let inv_rt = 1.0 / (r * grid.dtheta);
        for j in 0..nt {
            let (c, o, n, jp, jm) = neighbours(f, i, j, nr, nt);
            let dp = (o - c) * inv_dr;
            let dm = (c - n) * inv_dr;
            let tp = (jp - c) * inv_rt;
            let tm = (c - jm) * inv_rt;
            out.values[i * nt + j] =
                (wp * rp * dp * dp + wm * rm * dm * dm) / r + 0.5 * (tp * tp + tm * tm);
        }
    }
    out
}

/// `||grad f||^2`, equal to `<-lap f, f>`.
pub fn dirichlet_form(grid: &PolarGrid, f: &Field) -> f64 {
    let g = gradient_sq(grid, f);
    (0..grid.nr)
        .map(|i| grid.ring_weight(i) * g.ring(i).iter().sum::<f64>())
        .sum()
}

/// `d(r) = r log(B r)`.
pub fn d_function(r: f64, grid: &PolarGrid) -> Result<f64> {
    if r < grid.r_inner {
        return Err(Error::Domain(format!(
            "d(x) needs |x| >= r_inner = {}, got {r}",
            grid.r_inner
        )));
    }
    Ok(r * (grid.b_const * r).ln())
}

/// CSV dump with columns `i,j,r,theta,value`.
pub fn write_field_csv<W: Write>(mut out: W, grid: &PolarGrid, f: &Field) -> Result<()> {
    grid.check(f);
    writeln!(out, "i,j,r,theta,value")?;
    for i in 0..grid.nr {
        for j in 0..grid.ntheta {
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e}",
                i,
                j,
                grid.radii[i],
                grid.theta(j),
                f.get(i, j)
            )?;
        }
    }
    Ok(())
}
