use std::f64::consts::PI;
use std::sync::Arc;

use super::*;
use crate::driver::{canonical_lift, ChannelPath};
use crate::operators::{apply_first, EllipticOp, FirstOrderOp};
use crate::solver::{solve, Scheme};

fn periodic(n: usize) -> SpatialGrid {
    SpatialGrid::periodic_1d(n, 1.0).unwrap()
}

fn lift(
    g: SpatialGrid,
    time: &TimeGrid,
    z: impl Fn(f64) -> f64 + Send + Sync + 'static,
    sigma: impl Fn(f64) -> f64,
    c: f64,
    alpha: f64,
) -> DifferentialRoughDriver {
    let op = FirstOrderOp::new(vec![ScalarField::from_fn(g, |x| sigma(x[0]))], ScalarField::constant(g, c)).unwrap();
    canonical_lift(Arc::new(ChannelPath { z, op }), time.clone(), 8, alpha).unwrap()
}

fn half_implicit(time: TimeGrid, kappa: f64, u0: ScalarField, d: DifferentialRoughDriver) -> Scenario {
    let g = u0.grid;
    Scenario::new(time, EllipticOp::isotropic(g, kappa).unwrap(), u0, d)
        .unwrap()
        .with_scheme(Scheme {
            theta: 0.5,
            ..Scheme::default()
        })
        .unwrap()
}

/// Smooth transport run. With constant σ the continuum defect against φ = 1
/// vanishes and only discretization error is left, so σ varies in space.
fn smooth_run(steps: usize) -> (Scenario, ControlledSolution) {
    let g = periodic(64);
    let time = TimeGrid::uniform(steps, 1.0).unwrap();
    let d = lift(g, &time, |t| 0.5 * (2.0 * PI * t).sin(), |x| 0.3 + 0.2 * (2.0 * PI * x).sin(), 0.0, 0.45);
    let u0 = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin() + 0.5);
    let sc = half_implicit(time, 0.05, u0, d);
    let sol = solve(&sc).unwrap();
    (sc, sol)
}

fn simpson_panel(f: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// Composite Simpson split at the cutoff knots `r`, `2r`.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize, r: f64) -> f64 {
    let mut knots = vec![a];
    knots.extend([r, 2.0 * r].into_iter().filter(|&k| k > a && k < b));
    knots.push(b);
    knots.windows(2).map(|w| simpson_panel(&f, w[0], w[1], n)).sum()
}

#[test]
fn truncated_power_matches_the_double_integral() {
    let (p, r) = (3.0, 0.7);
    let f = truncate_power(p, r).unwrap();
    let inner = |y: f64| simpson(|t| cutoff(t / r) * p * (p - 1.0) * t.powf(p - 2.0), 0.0, y, 400, r);
    for &z in &[0.0, 0.3, -0.69, 0.9, 1.2, -1.5, 2.5] {
        let quad = simpson(inner, 0.0, f64::abs(z), 400, r);
        assert!((f.f(z) - quad).abs() < 1e-8 * (1.0 + quad), "z = {z}: {} vs {quad}", f.f(z));
        let slope = inner(f64::abs(z)) * f64::signum(z);
        if z != 0.0 {
            assert!((f.df(z) - slope).abs() < 1e-8 * (1.0 + slope.abs()));
        }
    }
    for &z in &[0.0, 0.2, -0.5, 0.7] {
        assert!((f.f(z) - f64::abs(z).powf(p)).abs() <= 1e-10);
    }
    // F'' bounded by p(p-1)(2R)^{p-2}, vanishes beyond 2R
    let cap = p * (p - 1.0) * (2.0 * r).powf(p - 2.0);
    for k in 0..400 {
        let z = -3.0 + 6.0 * k as f64 / 399.0;
        assert!(f.d2f(z) <= cap + 1e-12);
        if z.abs() > 2.0 * r {
            assert_eq!(f.d2f(z), 0.0);
        }
    }
}

#[test]
fn truncation_increases_to_the_power() {
    let p = 3.0;
    let fs: Vec<AdmissibleF> = [1.0, 2.0, 4.0, 8.0].iter().map(|&r| truncate_power(p, r).unwrap()).collect();
    for k in 0..401 {
        let z = -2.0 + 4.0 * k as f64 / 400.0;
        let exact = z.abs().powf(p);
        for w in fs.windows(2) {
            assert!(w[0].f(z) <= w[1].f(z) + 1e-12);
        }
        assert!(fs[3].f(z) <= exact + 1e-12);
        assert!((fs[1].f(z) - exact).abs() < 1e-12);
    }
    let gap = |f: &AdmissibleF| (0..401).map(|k| -2.0 + 0.01 * k as f64).map(|z| z.abs().powf(p) - f.f(z)).fold(0.0, f64::max);
    assert!(gap(&fs[0]) > 0.0);
    assert_eq!(fs[0].f(0.0), 0.0);
    assert_eq!(fs[0].df(0.0), 0.0);
    assert!(matches!(truncate_power(1.5, 1.0), Err(Error::Parameter(_))));
}

#[test]
fn leibniz_rule_for_first_order_operators() {
    let mut errs = Vec::new();
    for n in [64, 128] {
        let g = periodic(n);
        let op = FirstOrderOp::new(
            vec![ScalarField::from_fn(g, |x| 0.4 + 0.3 * (2.0 * PI * x[0]).cos())],
            ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin()),
        )
        .unwrap();
        let a = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin() + 0.2);
        let b = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).cos().exp());
        let lhs = apply_first(&op, &a.mul(&b)).unwrap();
        let rhs = apply_first(&op, &a)
            .unwrap()
            .mul(&b)
            .zip(&a.mul(&apply_first(&op, &b).unwrap()), |x, y| x + y)
            .zip(&op.c.mul(&a).mul(&b), |x, y| x - y);
        errs.push(lhs.zip(&rhs, |x, y| x - y).sup() / g.spacing[0].powi(2));
    }
    // second order: the scaled error settles
    assert!(errs[1] < 400.0 && (errs[0] / errs[1] - 1.0).abs() < 0.1, "{errs:?}");
}

#[test]
fn compact_support_relaxes_admissibility() {
    let g = SpatialGrid::dirichlet_1d(48, 1.0).unwrap();
    let time = TimeGrid::uniform(64, 0.05).unwrap();
    let bump = |x: f64| {
        let y = (x - 0.5) / 0.3;
        if y.abs() < 1.0 {
            0.3 * (1.0 - y * y).powi(3)
        } else {
            0.0
        }
    };
    let d = lift(g, &time, |t| (10.0 * t).sin(), bump, 0.0, 0.45);
    let mut u0 = ScalarField::from_fn(g, |x| (PI * x[0]).sin());
    u0.values[0] = 0.0;
    u0.values[47] = 0.0;
    let sc = half_implicit(time, 1.0, u0, d);
    let sol = solve(&sc).unwrap();
    let shifted = AdmissibleF::new("1 + z^2", |z| 1.0 + z * z, |z| 2.0 * z, |_| 2.0);
    let probes = weak_probes(&g);
    let t = chain_defect(&sol, &sc, &shifted, &probes).unwrap();
    assert!(t.max_abs.iter().all(|v| v.is_finite()));
    // periodic runs have no boundary to vanish on
    let (psc, psol) = smooth_run(64);
    assert!(matches!(
        chain_defect(&psol, &psc, &shifted, &weak_probes(&psc.spatial)),
        Err(Error::Admissibility(_))
    ));
}

#[test]
fn admissibility_gate() {
    let mut sq = AdmissibleF::square();
    sq.check_admissible(2.0, false).unwrap();
    assert!(sq.admissible_check);
    let mut shifted = AdmissibleF::new("1 + z^2", |z| 1.0 + z * z, |z| 2.0 * z, |_| 2.0);
    assert!(matches!(shifted.check_admissible(1.0, false), Err(Error::Admissibility(_))));
    shifted.check_admissible(1.0, true).unwrap();
    let mut linear = AdmissibleF::new("z", |z| z, |_| 1.0, |_| 0.0);
    assert!(linear.check_admissible(1.0, false).is_err());
    let mut kink = AdmissibleF::new("|z|^1.5", |z: f64| z.abs().powf(1.5), |z: f64| 1.5 * z.signum() * z.abs().sqrt(), |z: f64| {
        0.75 / z.abs().sqrt()
    });
    assert!(kink.check_admissible(1.0, false).is_err());
    assert!(AdmissibleF::power(1.5).is_err());
}

#[test]
fn chain_rule_defect_is_a_remainder() {
    let (sc, sol) = smooth_run(256);
    let probes = weak_probes(&sc.spatial);
    for f in [AdmissibleF::square(), AdmissibleF::cube()] {
        let t = chain_defect(&sol, &sc, &f, &probes).unwrap();
        assert!(t.passes(), "{}: slope {} threshold {}", f.name, t.slope(), t.threshold);
    }
}

#[test]
fn square_chain_rule_reproduces_the_energy() {
    let (sc, sol) = smooth_run(128);
    let one = weak_probes(&sc.spatial);
    let t = chain_defect(&sol, &sc, &AdmissibleF::square(), &one[..1]).unwrap();
    let e = &sol.energy.energy;
    for (n, &(i, j)) in t.pairs.iter().enumerate() {
        let lhs = t.residuals[0][n] + t.driver_terms[0][n];
        assert!((lhs - (e[j] - e[i])).abs() < 1e-10, "pair ({i},{j})");
    }
}

#[test]
fn truncation_above_the_range_does_not_change_the_defect() {
    let (sc, sol) = smooth_run(64);
    let probes = weak_probes(&sc.spatial);
    let r = sol.u.iter().map(|u| u.sup()).fold(0.0, f64::max);
    let a = chain_defect(&sol, &sc, &truncate_power(3.0, 1.1 * r).unwrap(), &probes).unwrap();
    let b = chain_defect(&sol, &sc, &truncate_power(3.0, 2.2 * r).unwrap(), &probes).unwrap();
    for (x, y) in a.residuals.iter().flatten().zip(b.residuals.iter().flatten()) {
        assert!((x - y).abs() <= 1e-10);
    }
}

#[test]
fn product_rule_is_symmetric_and_reduces_to_the_square() {
    let g = periodic(48);
    let time = TimeGrid::uniform(128, 1.0).unwrap();
    let d = lift(g, &time, |t| 0.4 * (2.0 * PI * t).cos(), |_| 0.25, 0.0, 0.45);
    let u0 = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin() + 0.5);
    let v0 = ScalarField::from_fn(g, |x| (4.0 * PI * x[0]).cos() - 0.2);
    let su = half_implicit(time.clone(), 0.05, u0, d.clone());
    let sv = half_implicit(time, 0.05, v0, d.clone());
    let (u, v) = (solve(&su).unwrap(), solve(&sv).unwrap());
    let probes = weak_probes(&g);
    let uv = product_defect(&u, &v, &su, &sv, &d, &probes).unwrap();
    let vu = product_defect(&v, &u, &sv, &su, &d, &probes).unwrap();
    assert_eq!(uv, vu);
    assert!(uv.passes(), "slope {}", uv.slope());
    let uu = product_defect(&u, &u, &su, &su, &d, &probes).unwrap();
    let sq = chain_defect(&u, &su, &AdmissibleF::square(), &probes).unwrap();
    for (x, y) in uu.residuals.iter().flatten().zip(sq.residuals.iter().flatten()) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn lp_two_is_the_energy() {
    let (sc, sol) = smooth_run(64);
    let r = lp_evolution(&sol, &sc, 2.0).unwrap();
    assert_eq!(r.lp, sol.energy.norm_sq);
    assert_eq!(r.dissipation, sol.energy.dissipation);
    assert_eq!(r.energy, sol.energy.energy);
    assert!(matches!(lp_evolution(&sol, &sc, 1.5), Err(Error::Parameter(_))));
}

#[test]
fn lp_under_a_zero_order_driver() {
    let g = periodic(64);
    let time = TimeGrid::uniform(512, 0.01).unwrap();
    let (c, z) = (0.8, |t: f64| 0.5 * (300.0 * t).sin());
    let d = lift(g, &time, z, |_| 0.0, c, 0.45);
    let u0 = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
    let sc = half_implicit(time.clone(), 1.0, u0.clone(), d);
    let sol = solve(&sc).unwrap();
    let p = 3.0;
    let r = lp_evolution(&sol, &sc, p).unwrap();
    let base = lp_integral(&u0, p);
    for (k, &t) in time.times().iter().enumerate() {
        let exact = (p * (c * z(t) - 4.0 * PI * PI * t)).exp() * base;
        assert!((r.lp[k] - exact).abs() < 5.0 * (time.max_dt() + g.spacing[0].powi(2)) * exact, "t = {t}");
    }
    assert!(r.identity_residual.is_finite());
}

#[test]
fn lp_norms_decay_without_noise_or_forcing() {
    let (sc, sol) = smooth_run(128);
    for p in [2.0, 3.0, 4.0] {
        let r = lp_evolution(&sol, &sc, p).unwrap();
        assert!(r.monotone, "p = {p}: growth {}", r.worst_growth);
    }
}
