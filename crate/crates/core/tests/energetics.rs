use std::f64::consts::PI;

use proptest::prelude::*;
use sdwave::energetics::{data_functionals, diagnostics, fit_decay_exponent, w_functional};
use sdwave::grid::build_annulus;
use sdwave::inequality_lab::{gn_ratio, random_fields, theta_exponent, weighted_gn_ratio};
use sdwave::solver::{bump_profile, State};
use sdwave::weight::{check_pointwise, rho0_constant, WeightParams};

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn i0_for_pure_velocity_data_matches_radial_quadrature() {
    let (r_in, r_out, c0) = (1.0, 5.0, 0.7);
    let g = build_annulus(r_in, r_out, 199, 32, None).unwrap();
    let bump = |r: f64| 0.3 * bump_profile(r, 1.5, 3.5);
    let u1 = g.sample_radial(bump);
    let w = WeightParams::new(2.0).unwrap();
    let df = data_functionals(&g, &g.zeros(), &u1, &w, c0).unwrap();
    let b = 2.0 / r_in;
    let d = |r: f64| r * (b * r).ln();
    let exact = simpson(
        |r| 2.0 * PI * r * (1.0 + 3.0 * c0 * d(r) * d(r)) * bump(r) * bump(r),
        1.5,
        3.5,
        20_000,
    );
    assert!((df.i0 / exact - 1.0).abs() < 1e-6, "{} vs {exact}", df.i0);
}

#[test]
fn zero_state_diagnostics_vanish() {
    let g = build_annulus(1.0, 4.0, 10, 16, None).unwrap();
    let row = diagnostics(&g, &State::zero(&g), &WeightParams::new(1.0).unwrap());
    assert!(row.values()[1..].iter().all(|&v| v == 0.0));
}

#[test]
fn decay_fit_recovers_exponent() {
    let series: Vec<(f64, f64)> = (0..200)
        .map(|k| {
            let t = k as f64;
            (t, 4.0 * (1.0 + t).powf(-1.25))
        })
        .collect();
    let fit = fit_decay_exponent(&series, 10.0, 199.0).unwrap();
    assert!((fit.alpha - 1.25).abs() < 1e-12 && (fit.c - 4.0).abs() < 1e-10);
    assert!(fit_decay_exponent(&series, 10.0, 15.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn theta_is_increasing_and_below_one(m in 2.0f64..1e6, dm in 1e-3f64..10.0) {
        let a = theta_exponent(m).unwrap();
        let b = theta_exponent(m + dm).unwrap();
        prop_assert!(a >= 0.0 && a < b && b < 1.0);
    }

    #[test]
    fn gn_ratio_is_scale_invariant(seed in 0u64..10_000, c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0], m in 2.5f64..12.0) {
        let g = build_annulus(1.0, 3.0, 16, 32, None).unwrap();
        let v = random_fields(seed, 1, 1.0, 3.0)[0].sample(&g);
        let r1 = gn_ratio(&g, &v, m).unwrap();
        let r2 = gn_ratio(&g, &v.scaled(c), m).unwrap();
        prop_assert!((r1 / r2 - 1.0).abs() < 1e-10);
        let w = WeightParams::new(2.0).unwrap();
        let a = weighted_gn_ratio(&g, &v, 3.0, m, 0.5, &w).unwrap();
        let b = weighted_gn_ratio(&g, &v.scaled(c), 3.0, m, 0.5, &w).unwrap();
        prop_assert!((a / b - 1.0).abs() < 1e-10);
    }

    #[test]
    fn w_is_quadratic(seed in 0u64..10_000, c in 0.1f64..10.0) {
        let g = build_annulus(1.0, 3.0, 12, 16, None).unwrap();
        let f = random_fields(seed, 2, 1.0, 3.0);
        let s = State { u: f[0].sample(&g), v: f[1].sample(&g), t: 2.0 };
        let sc = State { u: s.u.scaled(c), v: s.v.scaled(c), t: 2.0 };
        let w = WeightParams::with_midpoint_eps(2.0).unwrap();
        let (a, b) = (w_functional(&g, &s, &w), w_functional(&g, &sc, &w));
        prop_assert!((b / (c * c * a) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn weight_inequalities_hold(t in 0.0f64..1e3, r in 1.0f64..100.0, u in 0.0f64..1.0) {
        let rho = rho0_constant() + 1e-6 + 8.0 * u;
        let w = WeightParams::with_midpoint_eps(rho).unwrap();
        prop_assert!(check_pointwise(t, r, &w).all_evaluated_ok());
        let low = WeightParams::new(rho0_constant() * (1.0 - u) + 1e-9).unwrap();
        let rep = check_pointwise(t, r, &low);
        prop_assert!(rep.mixed_ok && rep.grad_ratio_ok && rep.eps_gate_failed);
    }
}
