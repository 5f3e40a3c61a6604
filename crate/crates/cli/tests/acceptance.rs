//! Acceptance suite: one line per criterion, exit status 1 if any criterion
//! outside `EXPECTED_FAILURES` fails.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use rpde_cli::commands::wz_medians;
use rpde_cli::config::Config;
use rpde_core::driver::{bracket, canonical_lift, chen_defect, from_rough_path, ChannelPath, FnCoefficientPath, ScalarRoughPath};
use rpde_core::ito::{chain_defect, lp_evolution, truncate_power, weak_probes, AdmissibleF};
use rpde_core::operators::compose_first;
use rpde_core::paths::{sample, PathKind, PathRecipe};
use rpde_core::sewing::{gronwall_bound, gronwall_verify, sew, Germ, GronwallProblem};
use rpde_core::solver::{
    integrate, lp_integral, max_principle_check, moser_bound, moser_formula_ln, solve, wong_zakai_sweep, Scheme,
};
use rpde_core::temporal::{holder_fit, Payload};
use rpde_core::{
    ControlFn, ControlledSolution, DifferentialRoughDriver, DriverRecipe, EllipticOp, FirstOrderOp, Scenario,
    ScalarField, SpatialGrid, TimeGrid,
};

/// Criteria that fail with a faithful implementation (see README).
const EXPECTED_FAILURES: &[usize] = &[1];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn periodic(n: usize) -> SpatialGrid {
    SpatialGrid::periodic_1d(n, 1.0).unwrap()
}

fn field(g: SpatialGrid, f: impl Fn(f64) -> f64) -> ScalarField {
    ScalarField::from_fn(g, |x| f(x[0]))
}

fn channel_lift(
    g: SpatialGrid,
    time: &TimeGrid,
    z: impl Fn(f64) -> f64 + Send + Sync + 'static,
    sigma: impl Fn(f64) -> f64,
    c: f64,
    alpha: f64,
) -> DifferentialRoughDriver {
    let op = FirstOrderOp::new(vec![field(g, sigma)], ScalarField::constant(g, c)).unwrap();
    canonical_lift(Arc::new(ChannelPath { z, op }), time.clone(), 8, alpha).unwrap()
}

fn crank_nicolson(sc: Scenario) -> Scenario {
    sc.with_scheme(Scheme {
        theta: 0.5,
        ..Scheme::default()
    })
    .unwrap()
}

fn chen() -> Verdict {
    let g = periodic(32);
    let s1 = field(g, |x| 0.3 + 0.2 * (2.0 * PI * x).sin());
    let s2 = field(g, |x| 0.2 * (2.0 * PI * x).cos());
    let r2 = field(g, |x| 0.1 * (4.0 * PI * x).sin());
    // two non-commuting channels, unit frequency on the unit horizon
    let path = move |t: f64| {
        let a = FirstOrderOp::new(vec![s1.scale(t.sin())], ScalarField::zeros(g)).unwrap();
        let b = FirstOrderOp::new(vec![s2.scale(1.0 - t.cos())], r2.scale(1.0 - t.cos())).unwrap();
        a.combine(&b, 1.0, 1.0)
    };
    let p = Arc::new(FnCoefficientPath { spatial: g, f: path });
    let mut defects = Vec::new();
    for q in [8, 16, 32, 64] {
        let d = canonical_lift(p.clone(), TimeGrid::uniform(8, 1.0).unwrap(), q, 0.5).unwrap();
        defects.push(chen_defect(&d));
    }
    let rate = |k: usize| {
        let c = (defects[k - 1].coeff_defect / defects[k].coeff_defect).log2();
        let o = (defects[k - 1].op_defect / defects[k].op_defect).log2();
        c.min(o)
    };
    let min_rate = (1..defects.len()).map(rate).fold(f64::INFINITY, f64::min);
    let last = defects[defects.len() - 1];
    let small = last.coeff_defect <= 1e-8 && last.op_defect <= 1e-8;
    verdict(
        small && min_rate >= 1.9,
        format!(
            "q=64 coeff {:.2e} op {:.2e} (tol 1e-8), min rate {min_rate:.3} (>= 1.9)",
            last.coeff_defect, last.op_defect
        ),
    )
}

fn bracket_check() -> Verdict {
    let g = periodic(32);
    let time = TimeGrid::uniform(8, 1.0).unwrap();
    let op = FirstOrderOp::new(
        vec![field(g, |x| 1.0 + 0.3 * (2.0 * PI * x).sin())],
        field(g, |x| 0.2 * (2.0 * PI * x).cos()),
    )
    .unwrap();
    let d = canonical_lift(Arc::new(ChannelPath { z: |t: f64| (3.0 * t).sin(), op }), time.clone(), 16, 0.5).unwrap();
    let scale = d
        .grid
        .dyadic_pairs(d.grid.full_window())
        .iter()
        .map(|&(i, j)| d.level2_op(i, j).second_order_size())
        .fold(1.0, f64::max);
    let smooth = bracket(&d).order_defect;
    let smooth_ok = smooth <= 1e-8 * scale;

    let time = TimeGrid::uniform(32, 1.0).unwrap();
    let recipe = PathRecipe {
        kind: PathKind::Bm,
        channels: 1,
        seed: 7,
        samples_per_interval: 1,
    };
    let w = sample(&recipe, &time).unwrap();
    let z = ScalarRoughPath::ito(time, &w.values).unwrap();
    let sigma = field(g, |x| 1.0 + 0.2 * (2.0 * PI * x).cos());
    let rho = field(g, |x| 0.1 * (2.0 * PI * x).sin());
    let ito = from_rough_path(&z, vec![vec![sigma.clone()]], vec![rho.clone()], 0.45).unwrap();
    let v = FirstOrderOp::new(vec![sigma], rho).unwrap();
    let v2 = compose_first(&v, &v).unwrap();
    let br = bracket(&ito);
    let mut worst = 0.0f64;
    for (&(i, j), b) in br.pairs.iter().zip(&br.brackets) {
        let expect = v2.scale(-0.5 * (ito.grid.t(j) - ito.grid.t(i)));
        let size = expect.second_order_size();
        let diff = b.combine(&expect, 1.0, -1.0);
        let err = diff.second_order_size().max(diff.y[0].sup()).max(diff.z.sup());
        worst = worst.max(err / size);
    }
    verdict(
        smooth_ok && worst <= 1e-10 && !ito.geometric,
        format!("smooth order defect {smooth:.2e} (tol {:.2e}), Ito bracket rel err {worst:.2e} (tol 1e-10)", 1e-8 * scale),
    )
}

fn sewing() -> Verdict {
    let g = TimeGrid::uniform(16, 1.0).unwrap();
    let germ = Germ::new(g.clone(), |s, t| s * (t - s), 2.0, ControlFn::linear(1.0));
    let r = sew(&germ, 10).unwrap();
    let err = (r.integral[16] - 0.5).abs();
    let fit = holder_fit(&r.remainder, g.full_window()).unwrap();
    verdict(
        r.converged && r.levels_used <= 10 && err <= 1e-9 && (fit.exponent - 2.0).abs() <= 0.05,
        format!(
            "|I_1 - 0.5| = {err:.2e} after {} levels, remainder exponent {:.4}",
            r.levels_used, fit.exponent
        ),
    )
}

/// Largest `G_j` allowed by the increment premise on every pair `(i, j)`
/// with `ω <= L`, given `G_0..G_{j-1}`.
fn saturate(grid: &TimeGrid, g0: f64, omega: &ControlFn, kappa: f64, l: f64, phi: &ControlFn) -> Vec<f64> {
    let mut g = vec![g0];
    for j in 1..grid.len() {
        let mut cap = f64::INFINITY;
        let mut sup = 0.0f64;
        for i in (0..j).rev() {
            sup = sup.max(g[i]);
            let w = omega.on(grid, i, j);
            if w > l {
                continue;
            }
            let wk = w.powf(kappa);
            let f = phi.on(grid, i, j);
            let above = if wk < 1.0 { (g[i] + f) / (1.0 - wk) } else { f64::INFINITY };
            let x = if above > sup { above } else { g[i] + sup * wk + f };
            cap = cap.min(x);
        }
        g.push(cap * (1.0 - 1e-12));
    }
    g
}

fn gronwall() -> (Verdict, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let grid = TimeGrid::uniform(150, 1.0).unwrap();
    let mut failures = 0;
    let mut premise_failures = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..100 {
        let kappa = rng.random_range(1.0..3.0);
        let l = rng.random_range(0.05..1.5);
        let c = rng.random_range(0.5..6.0);
        let gamma = rng.random_range(1.0..1.5);
        let a = rng.random_range(0.0..1.0);
        let omega = ControlFn::new(move |s, t| c * (t - s).powf(gamma));
        let phi = ControlFn::linear(a);
        let g = saturate(&grid, rng.random_range(0.1..5.0), &omega, kappa, l, &phi);
        let p = GronwallProblem::new(grid.clone(), g, omega, kappa, l, phi).unwrap();
        let r = gronwall_verify(&p, 1e-9);
        premise_failures += usize::from(!r.premise_holds);
        failures += usize::from(r.premise_holds && !r.conclusion_holds);
        tightest = tightest.min(r.bound / r.sup_g);
    }
    let main = verdict(
        failures == 0 && premise_failures == 0,
        format!("100 saturated instances with kappa >= 1: {failures} false failures, smallest bound/sup {tightest:.3}"),
    );
    // κ < 1 lies outside the Gronwall bound: a saturated path beats every τ as ω(0,T) -> 0
    let (kappa, eps) = (0.5, 1e-4);
    let g: Vec<f64> = grid.times().iter().map(|t| 1.0 / (1.0 - (eps * t).sqrt())).collect();
    let p = GronwallProblem::new(grid.clone(), g, ControlFn::linear(eps), kappa, 1.0, ControlFn::zero()).unwrap();
    let r = gronwall_verify(&p, 1e-12);
    let info = format!(
        "kappa = 0.5, omega = 1e-4 (t - s): premise {} conclusion {} (sup {:.6} vs bound {:.6})",
        r.premise_holds, r.conclusion_holds, r.sup_g, gronwall_bound(&p)
    );
    (main, info)
}

fn solver_consistency() -> Verdict {
    let g = periodic(64);
    let time = TimeGrid::uniform(256, 0.1).unwrap();
    let tol = 5.0 * (time.max_dt() + g.spacing[0] * g.spacing[0]);
    let decay = (-4.0 * PI * PI * 0.1f64).exp();
    let u0 = field(g, |x| (2.0 * PI * x).sin());
    let heat = Scenario::new(
        time.clone(),
        EllipticOp::isotropic(g, 1.0).unwrap(),
        u0.clone(),
        DifferentialRoughDriver::zero(time.clone(), g, 0.5).unwrap(),
    )
    .unwrap();
    let exact = field(g, |x| decay * (2.0 * PI * x).sin());
    let e_heat = solve(&heat).unwrap().final_state().zip(&exact, |a, b| a - b).sup();

    let (sigma, z) = (0.5, |t: f64| (30.0 * t).sin());
    let d = channel_lift(g, &time, z, move |_| sigma, 0.0, 0.5);
    let tr = Scenario::new(time, EllipticOp::isotropic(g, 1.0).unwrap(), u0, d).unwrap();
    let shift = sigma * z(0.1);
    let exact = field(g, |x| decay * (2.0 * PI * (x + shift)).sin());
    let e_tr = solve(&tr).unwrap().final_state().zip(&exact, |a, b| a - b).sup();
    verdict(
        e_heat <= tol && e_tr <= tol,
        format!("heat error {e_heat:.2e}, shifted-heat error {e_tr:.2e} (tol {tol:.2e})"),
    )
}

fn remainder_scaling() -> Verdict {
    let g = periodic(64);
    let time = TimeGrid::uniform(256, 1.0).unwrap();
    let d = channel_lift(g, &time, |t| 0.5 * (2.0 * PI * t).sin(), |x| 0.3 + 0.2 * (2.0 * PI * x).sin(), 0.0, 0.45);
    let sc = Scenario::new(time, EllipticOp::isotropic(g, 0.05).unwrap(), field(g, |x| (2.0 * PI * x).sin()), d).unwrap();
    let r = solve(&sc).unwrap().remainder;
    let (a, b) = (3.0 * 0.45 - 0.2, 2.0 * 0.45 - 0.2);
    verdict(
        r.slope_sharp >= a && r.slope_ru >= b,
        format!(
            "u# exponent {:.3} (>= {a:.2}), R^u exponent {:.3} (>= {b:.2}), window gap {}",
            r.slope_sharp, r.slope_ru, r.control.window_gap
        ),
    )
}

/// Smooth transport run with spatially varying σ.
fn smooth_run(steps: usize) -> (Scenario, ControlledSolution) {
    let g = periodic(64);
    let time = TimeGrid::uniform(steps, 1.0).unwrap();
    let d = channel_lift(g, &time, |t| 0.5 * (2.0 * PI * t).sin(), |x| 0.3 + 0.2 * (2.0 * PI * x).sin(), 0.0, 0.45);
    let u0 = field(g, |x| (2.0 * PI * x).sin() + 0.5);
    let sc = crank_nicolson(Scenario::new(time, EllipticOp::isotropic(g, 0.05).unwrap(), u0, d).unwrap());
    let sol = solve(&sc).unwrap();
    (sc, sol)
}

fn ito_formula() -> Verdict {
    let (sc, sol) = smooth_run(256);
    let probes = weak_probes(&sc.spatial);
    let sq = chain_defect(&sol, &sc, &AdmissibleF::square(), &probes[..1]).unwrap();
    let e = &sol.energy.energy;
    let energy_err = sq
        .pairs
        .iter()
        .enumerate()
        .map(|(n, &(i, j))| (sq.residuals[0][n] + sq.driver_terms[0][n] - (e[j] - e[i])).abs())
        .fold(0.0, f64::max);
    let cube = chain_defect(&sol, &sc, &AdmissibleF::cube(), &probes).unwrap();
    let cube_slope = cube.slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    let r = sol.u.iter().map(|u| u.sup()).fold(0.0, f64::max);
    let a = chain_defect(&sol, &sc, &truncate_power(3.0, 1.1 * r).unwrap(), &probes).unwrap();
    let b = chain_defect(&sol, &sc, &truncate_power(3.0, 2.2 * r).unwrap(), &probes).unwrap();
    let trunc = a
        .residuals
        .iter()
        .flatten()
        .zip(b.residuals.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let need = 3.0 * 0.45 - 0.2;
    verdict(
        energy_err <= 1e-8 && cube_slope >= need && trunc <= 1e-10,
        format!("z^2 vs energy {energy_err:.2e}, z^3 min exponent {cube_slope:.3} (>= {need:.2}), F_R vs F_2R {trunc:.2e}"),
    )
}

fn lp() -> Verdict {
    let (sc, sol) = smooth_run(128);
    let two = lp_evolution(&sol, &sc, 2.0).unwrap();
    let reduction = two
        .lp
        .iter()
        .zip(&sol.energy.norm_sq)
        .chain(two.dissipation.iter().zip(&sol.energy.dissipation))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let monotone = [2.0, 3.0, 4.0].iter().all(|&p| lp_evolution(&sol, &sc, p).unwrap().monotone);

    let g = periodic(64);
    let time = TimeGrid::uniform(512, 0.01).unwrap();
    let (c, z) = (0.8, |t: f64| 0.5 * (300.0 * t).sin());
    let d = channel_lift(g, &time, z, |_| 0.0, c, 0.45);
    let u0 = field(g, |x| (2.0 * PI * x).sin());
    let sc = crank_nicolson(Scenario::new(time.clone(), EllipticOp::isotropic(g, 1.0).unwrap(), u0.clone(), d).unwrap());
    let sol = solve(&sc).unwrap();
    let p = 3.0;
    let r = lp_evolution(&sol, &sc, p).unwrap();
    let base = lp_integral(&u0, p);
    let tol = 5.0 * (time.max_dt() + g.spacing[0] * g.spacing[0]);
    let closed = time
        .times()
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let exact = (p * (c * z(t) - 4.0 * PI * PI * t)).exp() * base;
            (r.lp[k] - exact).abs() / exact
        })
        .fold(0.0, f64::max);
    verdict(
        reduction <= 1e-10 && monotone && closed <= tol,
        format!("p=2 reduction {reduction:.2e}, monotone p=2,3,4 {monotone}, zero-order closed form rel {closed:.2e} (tol {tol:.2e})"),
    )
}

fn dirichlet_run(seed: u64) -> (usize, f64) {
    let n = 64;
    let g = SpatialGrid::dirichlet_1d(n, 1.0).unwrap();
    let time = TimeGrid::uniform(256, 0.05).unwrap();
    let path = sample(
        &PathRecipe {
            kind: PathKind::Bm,
            channels: 1,
            seed,
            samples_per_interval: 1,
        },
        &time,
    )
    .unwrap();
    let s = field(g, |x| {
        let y = (x - 0.5) / 0.35;
        0.3 * (1.0 - y * y).max(0.0).powi(3)
    });
    let recipe = DriverRecipe {
        path,
        sigma: vec![vec![s]],
        rho: vec![ScalarField::zeros(g)],
        ito: false,
    };
    let mut u0 = field(g, |x| (PI * x).sin().powi(2));
    u0.values[0] = 0.0;
    u0.values[n - 1] = 0.0;
    let sc = Scenario::from_recipe(time, EllipticOp::isotropic(g, 1.0).unwrap(), u0, recipe, 0.45).unwrap();
    let u = integrate(&sc).unwrap();
    let rep = max_principle_check(&u, &sc.u0, sc.time.max_dt(), 10.0);
    let excess = (rep.max_seen - 1.0).max(-rep.min_seen).max(0.0);
    (rep.violations.len(), excess)
}

fn max_principle() -> Verdict {
    let runs: Vec<(usize, f64)> = (0..50u64).into_par_iter().map(dirichlet_run).collect();
    let bad: usize = runs.iter().map(|r| r.0).sum();
    let excess = runs.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let tol = 10.0 * (0.05 / 256.0 + (1.0f64 / 63.0).powi(2));
    verdict(
        bad == 0,
        format!("50 seeds: {bad} nodes outside [-tol, 1 + tol], largest excursion {excess:.2e} (tol {tol:.2e})"),
    )
}

fn moser() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut exact_err = 0.0f64;
    let mut above = 0;
    for _ in 0..100 {
        let gamma: f64 = rng.random_range(1.0..4.0);
        let tau: f64 = rng.random_range(1.0..4.0);
        let eps = rng.random_range(0.1..1.0);
        let ln_phi0: f64 = rng.random_range(0.0..2.0);
        let mut sat = vec![ln_phi0];
        let mut sub = vec![ln_phi0];
        for n in 1..8 {
            let step = |prev: f64| gamma.ln() + (n as f64 - 1.0) * tau.ln() + (1.0 + eps) * prev;
            sat.push(step(sat[n - 1]));
            let slack: f64 = rng.random_range(0.0..1.0);
            sub.push(step(sub[n - 1]) - slack);
        }
        for n in 0..8 {
            let b = moser_formula_ln(gamma.ln(), tau.ln(), eps, ln_phi0, n);
            exact_err = exact_err.max((sat[n] - b).abs() / b.abs().max(1.0));
            above += usize::from(sub[n] > b + 1e-12 * b.abs().max(1.0));
        }
    }
    let g = periodic(32);
    let mut worst = 0.0f64;
    for u0 in [ScalarField::constant(g, 1.6), field(g, |x| 1.0 + 0.5 * (2.0 * PI * x).sin())] {
        let time = TimeGrid::uniform(32, 0.01).unwrap();
        let d = DifferentialRoughDriver::zero(time.clone(), g, 0.5).unwrap();
        let sc = Scenario::new(time, EllipticOp::isotropic(g, 1.0).unwrap(), u0, d).unwrap();
        let rep = moser_bound(&solve(&sc).unwrap(), &sc, 1.0).unwrap();
        worst = worst.max((rep.sup_estimate[6] - rep.true_sup).abs() / rep.true_sup);
    }
    verdict(
        exact_err <= 1e-12 && above == 0 && worst <= 0.05,
        format!("formula rel err {exact_err:.2e}, {above} sequences above the bound, sup estimate at n=6 off by {:.2}%", 100.0 * worst),
    )
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn wong_zakai() -> Verdict {
    let text = "\
grid.dim = 1
grid.nodes = 128
grid.boundary = periodic
time.steps = 64
time.horizon = 0.05
elliptic.a = 1
elliptic.lambda = 0.5
initial.u0 = sin(2*pi*x)
driver.kind = bm
driver.channels = 2
driver.samples = 8
driver.alpha = 0.45
channel1.sigma_x = 0.15 + 0.05*sin(2*pi*x)
channel2.sigma_x = 0.1*cos(2*pi*x)
";
    let cfg = Config::parse(text, "<wz>", Path::new(".")).unwrap();
    let runs: Vec<_> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let mut c = cfg.clone();
            c.set("driver.seed", seed.to_string());
            let setup = rpde_cli::scenario::build(&c).unwrap();
            wong_zakai_sweep(&setup.scenario, &[0, 1, 2, 3]).unwrap()
        })
        .collect();
    let med = wz_medians(&runs);
    let dec = |f: fn(&(u32, f64, f64)) -> f64| med.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    let (sup_dec, rho_dec) = (dec(|m| m.1), dec(|m| m.2));
    let show = |f: fn(&(u32, f64, f64)) -> f64| med.iter().map(|m| format!("{:.2e}", f(m))).collect::<Vec<_>>().join(" > ");
    verdict(
        sup_dec && rho_dec,
        format!("median sup diff {}; median rho {}", show(|m| m.1), show(|m| m.2)),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenarios();
    let runs: &[(&str, &[&str])] = &[
        ("lift", &["transport.cfg"]),
        ("solve", &["dirichlet.cfg"]),
        ("ito", &["chain.cfg"]),
        ("lp", &["lp.cfg"]),
        ("moser", &["moser.cfg"]),
        ("wz", &["wz.cfg"]),
        ("dist", &["transport.cfg", "heat.cfg"]),
    ];
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for (k, (cmd, files)) in runs.iter().enumerate() {
        let files: Vec<PathBuf> = files.iter().map(|f| sc.join(f)).collect();
        let first = dir.path().join(format!("{k}-a"));
        let opts = rpde_cli::Options::default();
        rpde_cli::run_files(cmd, &files, &opts, &first).unwrap();
        let again = dir.path().join(format!("{k}-b"));
        let r = rpde_cli::rerun(&first.join(rpde_cli::MANIFEST), &again).unwrap();
        compared += r.compared;
        mismatches.extend(r.mismatches.iter().map(|m| format!("{cmd}/{m}")));
        for entry in std::fs::read_dir(&first).unwrap() {
            let name = entry.unwrap().file_name();
            if name.to_string_lossy().ends_with(".csv") {
                let a = std::fs::read(first.join(&name)).unwrap();
                let b = std::fs::read(again.join(&name)).unwrap();
                if a != b {
                    mismatches.push(format!("{cmd}/{} (bytes)", name.to_string_lossy()));
                }
            }
        }
    }
    verdict(
        mismatches.is_empty() && compared > 0,
        format!("{} commands, {compared} files re-run, mismatches {:?}", runs.len(), mismatches),
    )
}

fn main() -> ExitCode {
    let (gron, gron_info) = gronwall();
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("Chen relations", Box::new(chen)),
        ("geometric bracket", Box::new(bracket_check)),
        ("sewing", Box::new(sewing)),
        ("rough Gronwall", Box::new(move || verdict(gron.pass, gron.detail.clone()))),
        ("solver consistency", Box::new(solver_consistency)),
        ("remainder scaling", Box::new(remainder_scaling)),
        ("Ito formula", Box::new(ito_formula)),
        ("L^p evolution", Box::new(lp)),
        ("maximum principle", Box::new(max_principle)),
        ("Moser iteration", Box::new(moser)),
        ("Wong-Zakai stability", Box::new(wong_zakai)),
        ("determinism", Box::new(determinism)),
    ];
    let mut unexpected = Vec::new();
    for (k, (name, run)) in criteria.iter().enumerate() {
        let n = k + 1;
        let start = Instant::now();
        let v = run();
        let secs = start.elapsed().as_secs_f64();
        let tag = match (v.pass, EXPECTED_FAILURES.contains(&n)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
        };
        println!("criterion {n:>2} {name:<22} {tag}: {} [{secs:.1}s]", v.detail);
        if n == 4 {
            println!("   note: {gron_info}");
        }
        if v.pass == EXPECTED_FAILURES.contains(&n) {
            unexpected.push(n);
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: all criteria as expected");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected outcome for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
