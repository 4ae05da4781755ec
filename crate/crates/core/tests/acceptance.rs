//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::fs;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdwave::cli::{gn_table, mms_convergence, parse_config, MmsKind};
use sdwave::energetics::{data_functionals, fit_decay_exponent};
use sdwave::grid::build_annulus;
use sdwave::inequality_lab::{
    budget_monitor, convolution_decay, convolution_integral, exponent_report, utt_bound_residual,
    Budget,
};
use sdwave::solver::{
    initial_bump, run_collect, NonlinearityParams, RunStatus, SimSetup, TimeScheme, Trajectory,
};
use sdwave::weight::{check_pointwise, epsilon_window, rho0_constant, WeightParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------------------

fn c1_weight_suite() -> Outcome {
    let start = Instant::now();
    let rho0 = rho0_constant();
    let mut rng = ChaCha8Rng::seed_from_u64(20241);
    let mut bad = 0usize;
    let mut worst = f64::INFINITY;
    for _ in 0..100_000 {
        let rho = rho0 + (5.0 - rho0) * (1.0 - rng.random::<f64>());
        let lo = epsilon_window(rho).unwrap().lower().unwrap();
        let eps = lo + (1.0 - lo) * rng.random::<f64>();
        let t = 100.0 * rng.random::<f64>();
        let r = 1.0 + 49.0 * rng.random::<f64>();
        let rep = check_pointwise(t, r, &WeightParams::with_eps(rho, eps).unwrap());
        worst = worst.min(rep.worst_margin);
        if !(rep.mixed_ok && rep.eps_ok && rep.grad_ratio_ok && rep.ratio_bound_ok) {
            bad += 1;
        }
    }
    let mut bad_low = 0usize;
    for _ in 0..100_000 {
        let rho = rho0 * (1.0 - rng.random::<f64>());
        let t = 100.0 * rng.random::<f64>();
        let r = 1.0 + 49.0 * rng.random::<f64>();
        let rep = check_pointwise(t, r, &WeightParams::new(rho).unwrap());
        if !(rep.mixed_ok && rep.grad_ratio_ok) {
            bad_low += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        bad == 0 && bad_low == 0 && secs < 10.0,
        format!("violations {bad} (rho > rho0), {bad_low} (rho <= rho0); worst margin {worst:.3e}; {secs:.2} s"),
    )
}

fn c2_eps_window() -> Outcome {
    let rho0 = rho0_constant();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut samples: Vec<f64> = (0..10_000)
        .map(|_| 10.0 * (1.0 - rng.random::<f64>()))
        .collect();
    samples.extend([rho0, rho0.next_up(), rho0.next_down(), 10.0]);
    let mismatches = samples
        .iter()
        .filter(|&&rho| !epsilon_window(rho).unwrap().is_empty() != (rho > rho0))
        .count();
    let residual = (2.0 * rho0 * rho0 + 3.0 * rho0 - 8.0).abs();
    outcome(
        mismatches == 0 && residual < 1e-12,
        format!(
            "{mismatches} mismatches over {} samples; residual at rho0 {residual:.2e}",
            samples.len()
        ),
    )
}

fn c3_mms() -> Outcome {
    let start = Instant::now();
    let cfg = parse_config(
        "[domain]\nr_inner = 1\nr_outer = 2\nnr = 32\nntheta = 64\n\
         [time]\ndt = 0.030303030303030304\nt_end = 0.5\ntheta = 0.5\n\
         [weight]\nrho = 2\n[mms]\nlevels = 3\n",
    )
    .unwrap();
    let rows = match mms_convergence(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("mms failed: {e}")),
    };
    let min_order = |kind: MmsKind| {
        rows.iter()
            .filter(|r| r.kind == kind && r.order.is_finite())
            .map(|r| r.order)
            .fold(f64::INFINITY, f64::min)
    };
    let (space, time) = (min_order(MmsKind::Space), min_order(MmsKind::Time));
    let secs = start.elapsed().as_secs_f64();
    outcome(
        space >= 1.9 && time >= 1.9 && secs < 120.0,
        format!("min spatial order {space:.4}, min temporal order {time:.4}; {secs:.1} s"),
    )
}

// ---------------------------------------------------------------------------
// long runs shared by criteria 4 to 7

const SNAPSHOT_EVERY: usize = 50;

fn linear_run() -> (SimSetup, Trajectory) {
    let g = build_annulus(1.0, 8.0, 96, 96, None).unwrap();
    let u0 = initial_bump(&g, 1.0, 1.5, 3.0).unwrap();
    let setup = SimSetup {
        scheme: TimeScheme::new(0.02, 1.0).unwrap(),
        nonlinearity: NonlinearityParams::linear(),
        weight: WeightParams::with_midpoint_eps(2.0).unwrap(),
        t_end: 200.0,
        stride: 10,
        u1: g.zeros(),
        u0,
        mms: None,
        blowup_threshold: 1e6,
        grid: g,
    };
    let tr = run_collect(&setup, SNAPSHOT_EVERY);
    (setup, tr)
}

fn global_run() -> (SimSetup, Trajectory, f64) {
    let g = build_annulus(1.0, 8.0, 96, 96, None).unwrap();
    let w = WeightParams::with_midpoint_eps(1.5).unwrap();
    let bump = initial_bump(&g, 1.0, 1.5, 3.0).unwrap();
    // J is quadratic in the data, so one evaluation fixes the amplitude
    let j_unit = data_functionals(&g, &bump, &bump, &w, 1.0).unwrap().j;
    let amp = 0.9 * (1e-2 / j_unit).sqrt();
    let u0 = bump.scaled(amp);
    let j = data_functionals(&g, &u0, &u0, &w, 1.0).unwrap().j;
    let setup = SimSetup {
        scheme: TimeScheme::new(0.02, 1.0).unwrap(),
        nonlinearity: NonlinearityParams::new(1.0, 1.0, 9.0, 9.0).unwrap(),
        weight: w,
        t_end: 100.0,
        stride: 10,
        u1: u0.clone(),
        u0,
        mms: None,
        blowup_threshold: 1e6,
        grid: g,
    };
    let tr = run_collect(&setup, 5 * SNAPSHOT_EVERY / 10);
    (setup, tr, j)
}

fn c4_dissipation(tr: &Trajectory) -> Outcome {
    if tr.status != RunStatus::Completed {
        return outcome(false, format!("run status {}", tr.status.label()));
    }
    let rows: Vec<_> = tr.rows.iter().filter(|r| r.t <= 50.0 + 1e-9).collect();
    let (e0, h0) = (rows[0].e_classical, rows[0].higher_part());
    let mut worst_e = f64::NEG_INFINITY;
    let mut worst_h = f64::NEG_INFINITY;
    for w in rows.windows(2) {
        worst_e = worst_e.max((w[1].e_classical - w[0].e_classical) / e0);
        worst_h = worst_h.max((w[1].higher_part() - w[0].higher_part()) / h0);
    }
    outcome(
        worst_e <= 1e-9 && worst_h <= 1e-9,
        format!(
            "{} output steps on [0, 50]; max relative increase E_classical {worst_e:.2e}, higher part {worst_h:.2e}",
            rows.len()
        ),
    )
}

fn c5_linear_decay(tr: &Trajectory) -> Outcome {
    let series: Vec<(f64, f64)> = tr.rows.iter().map(|r| (r.t, r.e_higher)).collect();
    let fit = fit_decay_exponent(&series, 20.0, 200.0);
    let alpha = fit.as_ref().map(|f| f.alpha).unwrap_or(f64::NAN);

    let scaled: Vec<f64> = tr
        .rows
        .iter()
        .filter(|r| r.t >= 5.0 - 1e-9)
        .map(|r| (1.0 + r.t) * r.e_higher)
        .collect();
    let growth = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / scaled[0] - 1.0;

    let truncation = tr
        .rows
        .iter()
        .filter(|r| r.sup_u > 0.0)
        .map(|r| r.outer_ring_amp / r.sup_u)
        .fold(0.0, f64::max);
    let ok = [alpha >= 0.9, growth < 0.05, truncation < 1e-8];
    outcome(
        ok.iter().all(|&b| b),
        format!(
            "alpha {alpha:.3} [{}], running-max growth {:.2}% [{}], max outer_ring_amp/sup_u {truncation:.3e} [{}]",
            tag(ok[0]),
            100.0 * growth,
            tag(ok[1]),
            tag(ok[2])
        ),
    )
}

fn c6_global(tr: &Trajectory, j: f64, t_end: f64) -> Outcome {
    if tr.status != RunStatus::Completed {
        return outcome(false, format!("run status {}", tr.status.label()));
    }
    let at = |t: f64| tr.rows.iter().find(|r| r.t >= t - 1e-9).unwrap();
    let w1 = at(1.0).w;
    let max_w = tr
        .rows
        .iter()
        .filter(|r| r.t >= 1.0 - 1e-9)
        .map(|r| r.w)
        .fold(0.0, f64::max);
    let t_a = 0.1 * t_end;
    let base = at(t_a);
    let after: Vec<_> = tr.rows.iter().filter(|r| r.t >= t_a - 1e-9).collect();
    let first = after.iter().map(|r| r.w_first).fold(0.0, f64::max) / base.w_first;
    let second = after.iter().map(|r| r.w_second).fold(0.0, f64::max) / base.w_second;
    let finite = tr
        .rows
        .iter()
        .all(|r| r.values().iter().all(|v| v.is_finite()));
    outcome(
        j <= 1e-2 && finite && max_w <= 2.0 * w1 && first <= 2.0 && second <= 2.0,
        format!(
            "J {j:.3e}; max_(t>=1) W / W(1) {:.3}; Wfirst, Wsecond max after t = {t_a} over value there: {first:.3}, {second:.3}",
            max_w / w1
        ),
    )
}

fn c7_budgets(runs: &[(&str, &SimSetup, &Trajectory)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, setup, tr) in runs {
        let p1 = budget_monitor(&tr.rows, &tr.integrals, &setup.weight, Budget::Higher)
            .map(|r| r.max_violation)
            .unwrap_or(f64::NAN);
        let p2 = budget_monitor(&tr.rows, &tr.integrals, &setup.weight, Budget::Lower)
            .map(|r| r.max_violation)
            .unwrap_or(f64::NAN);
        let snaps = &tr.snapshots[..tr.snapshots.len().min(20)];
        let slack = snaps
            .iter()
            .map(|s| {
                utt_bound_residual(&setup.grid, s, &setup.nonlinearity, &setup.weight)
                    .map(|r| r.min_relative_slack)
                    .unwrap_or(f64::NAN)
            })
            .fold(f64::INFINITY, f64::min);
        ok &= p1 <= 5e-2 && p2 <= 5e-2 && slack >= -1e-8 && snaps.len() == 20;
        parts.push(format!(
            "{name}: higher budget {p1:.2e}, lower budget {p2:.2e}, u_tt bound min slack {slack:.2e} on {} snapshots",
            snaps.len()
        ));
    }
    outcome(ok, parts.join("; "))
}

fn c8_blowup() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("blowup.ini");
    let out = dir.path().join("blowup.csv");
    fs::write(
        &cfg,
        format!(
            "[domain]\nr_inner = 1\nr_outer = 8\nnr = 96\nntheta = 96\n\
             [time]\ndt = 0.02\nt_end = 50\ntheta = 1\nstride = 5\n\
             [weight]\nrho = 2\n\
             [nonlinearity]\na = 1\nb = 0\np = 2\nq = 2\n\
             [init]\nu0_amplitude = 50\nu0_support = 1.5, 3\nu1_amplitude = 0\nu1_support = 1.5, 3\n\
             [output]\npath = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_sdwave"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    let code = res.status.code().unwrap_or(-1);
    let stderr = String::from_utf8_lossy(&res.stderr);
    let t_blow = stderr
        .lines()
        .find_map(|l| l.strip_prefix("blow-up detected at t = "))
        .and_then(|s| s.trim().parse::<f64>().ok())
        .unwrap_or(f64::NAN);
    let rows = fs::read_to_string(&out)
        .map(|s| s.lines().count().saturating_sub(1))
        .unwrap_or(0);
    outcome(
        code == 2 && t_blow < 50.0 && rows > 0,
        format!("exit code {code}, blow-up at t = {t_blow}, {rows} rows written"),
    )
}

fn c9_gn() -> Outcome {
    let cfg = parse_config(
        "[domain]\nr_inner = 1\nr_outer = 4\nnr = 31\nntheta = 64\n\
         [time]\ndt = 0.1\nt_end = 1\n[weight]\nrho = 2\n\
         [gn]\nm = 2, 4, 6, 10\nsamples = 100\nseed = 2024\nrefinements = 2\n",
    )
    .unwrap();
    let rows = match gn_table(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("sampler failed: {e}")),
    };
    let finite = rows.iter().all(|r| r.ratio.is_finite() && r.ratio > 0.0);
    let m2 = rows
        .iter()
        .filter(|r| r.m == 2.0)
        .map(|r| (r.ratio - 1.0).abs())
        .fold(0.0, f64::max);
    let mut spread = Vec::new();
    for m in [4.0, 6.0, 10.0] {
        let mut maxima: Vec<(usize, f64)> = Vec::new();
        for r in rows.iter().filter(|r| r.m == m) {
            match maxima.iter_mut().find(|(n, _)| *n == r.nr) {
                Some((_, v)) => *v = v.max(r.ratio),
                None => maxima.push((r.nr, r.ratio)),
            }
        }
        let hi = maxima.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let lo = maxima.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        spread.push((m, hi / lo - 1.0));
    }
    let worst = spread.iter().map(|s| s.1).fold(0.0, f64::max);
    outcome(
        finite && m2 <= 1e-12 && worst < 0.2,
        format!(
            "{} ratios finite: {finite}; max |ratio - 1| at m = 2: {m2:.1e}; max-ratio spread across meshes {}",
            rows.len(),
            spread
                .iter()
                .map(|(m, s)| format!("m={m}: {:.2}%", 100.0 * s))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn c10_convolution() -> Outcome {
    let (a, b) = (0.5, 2.0);
    let table = convolution_decay(a, b, 1e4, 81).unwrap();
    let in_range: Vec<_> = table.iter().filter(|s| s.t >= 1.0).collect();
    let n3 = (1.0f64 + 1e3).powf(a) * convolution_integral(a, b, 1e3);
    let n4 = (1.0f64 + 1e4).powf(a) * convolution_integral(a, b, 1e4);
    let change = (n4 / n3 - 1.0).abs();
    // brute force midpoint rule at t = 1
    let n = 1_000_000;
    let h = 1.0 / n as f64;
    let riemann: f64 = (0..n)
        .map(|k| {
            let s = (k as f64 + 0.5) * h;
            (2.0 - s).powf(-a) * (1.0 + s).powf(-b)
        })
        .sum::<f64>()
        * h;
    let gap = (convolution_integral(a, b, 1.0) - riemann).abs();
    let finite = in_range
        .iter()
        .all(|s| s.normalized.is_finite() && s.normalized > 0.0);
    outcome(
        change < 0.01 && gap < 1e-8 && finite,
        format!(
            "(1+t)^(1/2) I: {n3:.6} at t = 1e3, {n4:.6} at t = 1e4, change {:.3}%; quadrature vs Riemann at t = 1: {gap:.2e}",
            100.0 * change
        ),
    )
}

fn bisect(mut lo: f64, mut hi: f64, pred: impl Fn(f64) -> bool) -> f64 {
    // pred(lo) false, pred(hi) true
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn c11_exponents() -> Outcome {
    let r = exponent_report(7.0, 7.0, 2.0, 0.1, 0.1, 0.1).unwrap();
    let beta_err = (r.beta[0] + 0.9 / 7.0).abs();
    let rho = 2.0;
    let big = 100.0;
    let gate = |p: f64, q: f64| exponent_report(p, q, rho, 0.1, 0.1, 0.1).unwrap().gates;
    let th = r.thresholds;
    let flips = [
        (
            "4+rho",
            bisect(1.5, 50.0, |p| gate(p, big).square_ok),
            th.square,
        ),
        (
            "5+rho",
            bisect(1.5, 50.0, |p| gate(p, big).cross_ok),
            th.cross,
        ),
        (
            "6+2rho",
            bisect(1.5, 50.0, |q| gate(big, q).derivative_ok),
            th.derivative,
        ),
        (
            "6+2rho0",
            bisect(1.5, 50.0, |p| gate(p, big).global_ok),
            th.global,
        ),
    ];
    let worst = flips
        .iter()
        .map(|(_, f, t)| (f - t).abs())
        .fold(0.0, f64::max);
    let strict = !gate(th.square, big).square_ok
        && !gate(th.cross, big).cross_ok
        && !gate(big, th.derivative).derivative_ok
        && !gate(th.global, big).global_ok;
    outcome(
        beta_err < 1e-14 && worst < 1e-9 && strict,
        format!(
            "beta1 = {:.15} (error {beta_err:.1e}); gate flips {}",
            r.beta[0],
            flips
                .iter()
                .map(|(n, f, t)| format!("{n}: {f:.10} vs {t:.10}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn tag(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!(
            "criterion {n:>2} [{name}]: {} | {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o));
    };
    report(1, "weight inequalities", c1_weight_suite());
    report(2, "eps window", c2_eps_window());
    report(3, "MMS convergence", c3_mms());

    let (lin_setup, lin) = linear_run();
    let (glob_setup, glob, j) = global_run();
    report(4, "discrete dissipativity", c4_dissipation(&lin));
    report(5, "linear decay rate", c5_linear_decay(&lin));
    report(
        6,
        "global-regime boundedness",
        c6_global(&glob, j, glob_setup.t_end),
    );
    report(
        7,
        "budget propositions",
        c7_budgets(&[
            ("linear run", &lin_setup, &lin),
            ("global run", &glob_setup, &glob),
        ]),
    );
    report(8, "blow-up smoke test", c8_blowup());
    report(9, "GN sampler stability", c9_gn());
    report(10, "convolution decay", c10_convolution());
    report(11, "exponent calculus", c11_exponents());

    let failed: Vec<_> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
