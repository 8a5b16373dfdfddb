//! Property tests for the invariants the kit relies on.

use crackbal::charts::{Chart, Stage, Windows};
use crackbal::dual::jacobian_of;
use crackbal::fields::{s_eval, SingularField};
use crackbal::geom::{CrackPath, Domain, GrowthLaw};
use crackbal::material::TensorField;
use crackbal::quad::{fondlem_table, TubeRegion};
use crackbal::sif::{extract_sif_jump, extract_sif_projection};
use proptest::prelude::*;
use std::f64::consts::PI;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

fn polar(r: f64, th: f64) -> [f64; 2] {
    [r * th.cos(), r * th.sin()]
}

fn straight() -> (CrackPath, GrowthLaw, Domain) {
    (
        CrackPath::segment([-1.0, 0.0], 0.0, 2.0),
        GrowthLaw::linear(0.8, 0.5, 0.8, 1.0, 0.5),
        Domain::rectangle([-1.0, -1.0], [1.0, 1.0]),
    )
}

fn arc() -> (CrackPath, GrowthLaw, Domain) {
    (
        CrackPath::arc([-2.0, 0.0], 0.0, 2.0, 3.0, true),
        GrowthLaw::linear(1.0, 0.5, 1.0, 1.0, 0.5),
        Domain::rectangle([-2.0, -2.0], [2.0, 2.0]),
    )
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn s_gradient_norm_and_harmonic(r in 1e-3f64..10.0, th in -3.1f64..3.1) {
        let e = s_eval(polar(r, th)).unwrap();
        let g2 = e.grad[0] * e.grad[0] + e.grad[1] * e.grad[1];
        prop_assert!((g2 * 4.0 * r - 1.0).abs() < 1e-12);
        prop_assert!((e.hess[0][0] + e.hess[1][1]).abs() < 1e-10 / r.powf(1.5));
        prop_assert!((e.value - r.sqrt() * (0.5 * th).sin()).abs() < 1e-12 * (1.0 + r.sqrt()));
    }

    #[test]
    fn s_odd_and_half_homogeneous(r in 1e-3f64..10.0, th in 0.01f64..3.1, lam in 0.1f64..10.0) {
        let y = polar(r, th);
        let s = s_eval(y).unwrap().value;
        prop_assert!((s_eval([y[0], -y[1]]).unwrap().value + s).abs() < 1e-13);
        prop_assert!((s_eval([lam * y[0], lam * y[1]]).unwrap().value - lam.sqrt() * s).abs() < 1e-12 * (1.0 + s.abs()));
    }
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn chart_jacobian_matches_differences(
        use_arc in any::<bool>(),
        tf in 0.0f64..1.0,
        r in 0.02f64..0.4,
        th in -3.1f64..3.1,
    ) {
        let (path, law, dom) = if use_arc { arc() } else { straight() };
        let eta = if use_arc { 0.22 } else { 0.3 };
        let w = Windows::cover(&path, &law, &TensorField::Identity, &dom, eta, 0.0, law.t_end).unwrap();
        let t = tf * law.t_end;
        let p = w.at(t);
        let tip = p.tip(t);
        let x = [tip[0] + r * th.cos(), tip[1] + r * th.sin()];
        let (_, d, dt) = jacobian_of(|tt, xx| p.phi(tt, xx), t, x);
        let h = 1e-6;
        let phi = |t: f64, x: [f64; 2]| p.stage(Stage::Phi).value(t, x);
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let (a, b) = (phi(t, xp), phi(t, xm));
            for i in 0..2 {
                prop_assert!((d[i][j] - (a[i] - b[i]) / (2.0 * h)).abs() < 1e-6, "∂Φ{}/∂x{}", i, j);
            }
        }
        let (a, b) = (phi(t + h, x), phi(t - h, x));
        for i in 0..2 {
            prop_assert!((dt[i] - (a[i] - b[i]) / (2.0 * h)).abs() < 1e-6, "∂Φ{}/∂t", i);
        }
    }

    #[test]
    fn sif_scales_linearly(lam in -3.0f64..3.0, c0 in -1.0f64..1.0, tf in 0.0f64..1.0) {
        let (path, law, _) = straight();
        let field = SingularField::new(&path, &law, &TensorField::Identity);
        let t = tf * law.t_end;
        let u = |x: [f64; 2]| lam * field.value(t, x).unwrap() + c0;
        let p = extract_sif_projection(u, &field, t, [0.01, 0.04]).unwrap();
        prop_assert!((p.k - lam).abs() < 1e-9);
        let j = extract_sif_jump(u, &field, t, [1e-3, 1e-2], 12).unwrap();
        prop_assert!((j.k - lam).abs() < 1e-6);
    }

    #[test]
    fn tube_area_and_linearity(
        len in 0.1f64..2.0,
        eps in 1e-3f64..0.2,
        side in prop_oneof![Just(1.0), Just(-1.0)],
        alpha in -2.0f64..2.0,
    ) {
        let tube = TubeRegion { start: [0.0, 0.0], end: [len, 0.0], side, eps };
        prop_assert!((tube.area_numeric() - tube.area()).abs() < 1e-10 * (1.0 + tube.area()));
        let f = |x: [f64; 2]| (alpha * x[0]).sin();
        let g = |x: [f64; 2]| 1.0 + x[1] * x[1];
        let sum = tube.integrate(|x| f(x) + 2.0 * g(x)).total();
        let parts = tube.integrate(f).total() + 2.0 * tube.integrate(g).total();
        prop_assert!((sum - parts).abs() < 1e-9 * (1.0 + sum.abs()));
    }

    #[test]
    fn tube_integral_tends_to_trace(len in 0.2f64..2.0, alpha in -2.0f64..2.0) {
        // ∫_tube f |∇φε| → ∫_0^L f(s, 0) ds with an O(ε) error for smooth f.
        let f = |x: [f64; 2]| (alpha * x[0]).cos() + x[1];
        let trace = if alpha.abs() < 1e-12 { len } else { (alpha * len).sin() / alpha };
        let mut prev = f64::INFINITY;
        for eps in [1e-1, 1e-2, 1e-3] {
            let tube = TubeRegion { start: [0.0, 0.0], end: [len, 0.0], side: 1.0, eps };
            let err = (tube.integrate(f).total() - trace).abs();
            prop_assert!(err < 4.0 * eps);
            prop_assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn layer_integral_within_bound(a1 in -2.0f64..2.0, a2 in -2.0f64..2.0, lo in -2.0f64..-0.5, hi in 0.5f64..2.0) {
        let g = |x1: f64, x2: f64| (a1 * x1 + a2 * x2).cos();
        let lip = (a1 * a1 + a2 * a2).sqrt();
        let omega = |d: f64| (lip * d * std::f64::consts::SQRT_2).min(2.0);
        let rows = fondlem_table(g, 1.0, omega, lo, hi, &[1e-2, 1e-3, 1e-4]).unwrap();
        for row in rows {
            prop_assert!(row.within_bound, "eps {}: deviation {} > bound {}", row.eps, row.deviation, row.bound);
            prop_assert!((row.limit - PI).abs() < 1e-15);
        }
    }
}
