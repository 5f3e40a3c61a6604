//! Subcommands: each builds its scenario, runs one library operation and writes
//! tables, a plot script and a check list.

use log::info;
use rayon::prelude::*;
use rpde_core::driver::{bracket, chen_defect, rho_alpha, SobolevProbes};
use rpde_core::ito::{chain_defect, lp_evolution, product_defect, truncate_power, weak_probes, ResidualTable};
use rpde_core::solver::{max_principle_check, moser_bound, solve, wong_zakai_sweep, SweepRow};
use rpde_core::{AdmissibleF, ControlledSolution, Error, Result, Scenario};

use crate::config::Config;
use crate::output::{num, RunDir};
use crate::scenario::{build, Setup};

const T: &str = "t [time]";
const S: &str = "s [time]";

/// Named pass/fail checks of one run.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub checks: Vec<(String, bool)>,
}

impl Outcome {
    fn check(&mut self, name: &str, ok: bool) {
        self.checks.push((name.to_string(), ok));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }
}

fn gate(sc: &Scenario) -> Result<()> {
    if !sc.driver.geometric && !sc.scheme.allow_nongeometric {
        return Err(Error::Geometricity);
    }
    Ok(())
}

fn pair_times(sc: &Scenario, i: usize, j: usize) -> Vec<String> {
    vec![num(sc.time.t(i)), num(sc.time.t(j))]
}

pub fn lift(cfg: &Config, out: &mut RunDir) -> Result<Outcome> {
    let setup = build(cfg)?;
    let sc = &setup.scenario;
    gate(sc)?;
    let d = &sc.driver;
    let probes = SobolevProbes::new(&d.spatial);
    let br = bracket(d);
    let rows = br.pairs.iter().zip(&br.brackets).map(|(&(i, j), b)| {
        let (n1, n2) = probes.levels(&d.pair(i, j));
        let mut r = pair_times(sc, i, j);
        r.push(num(n1));
        r.push(num(n2));
        r.push(num(b.second_order_size()));
        r
    });
    out.csv(
        "lift_pairs.csv",
        &[
            S,
            T,
            "level1_norm (probe H1 norm of B^1_st) [1/time^0]",
            "level2_norm (probe H2 norm of B^2_st) [1/time^0]",
            "bracket_order (sup of second-order part of [B]_st) [length^2]",
        ],
        rows,
    )?;
    let chen = chen_defect(d);
    out.summary(
        "lift_summary.csv",
        &[
            ("chen_op_defect (max |δB^2 - B^1∘B^1| on probes)", num(chen.op_defect)),
            ("chen_coeff_defect (max coefficient Chen defect)", num(chen.coeff_defect)),
            ("bracket_order_defect (max second-order part of [B])", num(br.order_defect)),
            ("geometric (1 if the lift is geometric)", num(if d.geometric { 1.0 } else { 0.0 })),
            ("alpha (declared Hölder exponent)", num(d.alpha)),
        ],
    )?;
    out.plot(
        "lift.gp",
        "driver level norms",
        true,
        &[("lift_pairs.csv", 2, 3, "level 1"), ("lift_pairs.csv", 2, 4, "level 2")],
    )?;
    Ok(Outcome::default())
}

fn solve_setup(setup: &Setup) -> Result<ControlledSolution> {
    gate(&setup.scenario)?;
    info!(
        "solving {} steps on {} nodes",
        setup.scenario.time.intervals(),
        setup.scenario.spatial.len()
    );
    solve(&setup.scenario)
}

fn snapshot_rows(cfg: &Config, sol: &ControlledSolution) -> Result<Vec<Vec<String>>> {
    let n = sol.time.len();
    let count = cfg.usize("output.snapshots", 5)?.clamp(1, n);
    let mut idx: Vec<usize> = if count == 1 {
        vec![n - 1]
    } else {
        (0..count).map(|k| k * (n - 1) / (count - 1)).collect()
    };
    idx.dedup();
    let mut rows = Vec::new();
    for k in idx {
        let f = &sol.u[k];
        let g = f.grid;
        for node in 0..g.len() {
            let c = g.coords(node);
            let mut r = vec![num(sol.time.t(k)), num(c[0])];
            if g.dim == 2 {
                r.push(num(c[1]));
            }
            r.push(num(f.values[node]));
            rows.push(r);
        }
    }
    Ok(rows)
}

pub fn solve_cmd(cfg: &Config, out: &mut RunDir) -> Result<Outcome> {
    let setup = build(cfg)?;
    let sc = &setup.scenario;
    let sol = solve_setup(&setup)?;
    let mut outcome = Outcome::default();
    let header: Vec<&str> = if sc.spatial.dim == 2 {
        vec![T, "x [length]", "y [length]", "u (solution value) [u]"]
    } else {
        vec![T, "x [length]", "u (solution value) [u]"]
    };
    out.csv("solution.csv", &header, snapshot_rows(cfg, &sol)?)?;
    out.trajectory("solution", &sol.time, &sol.u)?;
    let e = &sol.energy;
    out.csv(
        "energy.csv",
        &[
            T,
            "norm_sq (|u_t|_L2^2) [u^2 vol]",
            "dissipation (2∫_0^t <a∇u,∇u> dr) [u^2 vol]",
            "energy (|u_t|^2 + dissipation) [u^2 vol]",
            "forcing_norm (∫_0^t |f_r|_L2 dr) [u vol^1/2]",
        ],
        (0..e.times.len()).map(|k| {
            vec![
                num(e.times[k]),
                num(e.norm_sq[k]),
                num(e.dissipation[k]),
                num(e.energy[k]),
                num(sol.forcing_l2[k]),
            ]
        }),
    )?;
    let rows = sol.ru.pairs().map(|(i, j, ru)| {
        let mut r = pair_times(sc, i, j);
        r.push(num(ru.l2()));
        r.push(num(sol.u_sharp.get(i, j).map(|f| f.l2()).unwrap_or(f64::NAN)));
        r
    });
    out.csv(
        "remainder.csv",
        &[
            S,
            T,
            "ru_norm (|R^u_st|_L2, first-order remainder) [u vol^1/2]",
            "u_sharp_norm (|u^♮_st|_L2, remainder) [u vol^1/2]",
        ],
        rows,
    )?;
    let r = &sol.remainder;
    let mut summary = vec![
        ("slope_ru (fitted exponent of |R^u_st|)", num(r.slope_ru)),
        ("slope_sharp (fitted exponent of |u^♮_st|)", num(r.slope_sharp)),
        ("c_measured (remainder constant)", num(r.c_measured)),
        ("omega_rate (ω_B(s,t)/(t-s))", num(r.control.rate)),
        ("window_gap (steps in the ω_B-small window)", num(r.control.window_gap as f64)),
        ("omega_total (ω_B(0,T))", num(e.omega_total)),
        ("tau (Gronwall time scale)", num(e.tau)),
        ("energy_bound (bound on sup energy)", num(e.bound)),
        ("energy_satisfied (1 if the bound holds)", num(if e.satisfied { 1.0 } else { 0.0 })),
        ("l2_worst_growth (largest one-step growth of |u|^2)", num(e.worst_growth)),
    ];
    outcome.check("energy bound", e.satisfied);
    if !sc.spatial.is_periodic() && sc.forcing.is_zero() {
        let c = cfg.f64("maxp.c", 10.0)?;
        let rep = max_principle_check(&sol.u, &sc.u0, sc.time.max_dt(), c);
        out.csv(
            "maxp.csv",
            &[
                T,
                "min_u (min over nodes of u_t) [u]",
                "max_u (max over nodes of u_t) [u]",
                "lower (min(0, min u_0) - tol) [u]",
                "upper (max(0, max u_0) + tol) [u]",
            ],
            sol.u.iter().enumerate().map(|(k, f)| {
                let lo = f.values.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = f.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                vec![num(sol.time.t(k)), num(lo), num(hi), num(rep.lower - rep.tol), num(rep.upper + rep.tol)]
            }),
        )?;
        summary.push(("maxp_violations (nodes outside the bounds)", num(rep.violations.len() as f64)));
        outcome.check("maximum principle", rep.passed());
    }
    out.summary("solve_summary.csv", &summary)?;
    out.plot(
        "energy.gp",
        "energy",
        false,
        &[("energy.csv", 1, 2, "|u|^2"), ("energy.csv", 1, 4, "energy")],
    )?;
    out.plot(
        "remainder.gp",
        "remainders against t - s",
        true,
        &[("remainder.csv", 2, 3, "R^u"), ("remainder.csv", 2, 4, "u sharp")],
    )?;
    Ok(outcome)
}

fn admissible(cfg: &Config, sol: &ControlledSolution) -> Result<AdmissibleF> {
    let p = cfg.f64("ito.p", 3.0)?;
    match cfg.choice("ito.function", &["cube", "square", "power", "truncated"])?.as_str() {
        "square" => Ok(AdmissibleF::square()),
        "cube" => Ok(AdmissibleF::cube()),
        "power" => AdmissibleF::power(p).map_err(|e| cfg.error("ito.p", e)),
        _ => {
            let sup = sol.u.iter().map(|u| u.sup()).fold(0.0, f64::max);
            let r = cfg.f64("ito.radius", 2.0 * sup.max(1e-12))?;
            truncate_power(p, r).map_err(|e| cfg.error("ito.radius", e))
        }
    }
}

fn residual_tables(out: &mut RunDir, stem: &str, sc: &Scenario, t: &ResidualTable) -> Result<()> {
    let mut rows = Vec::new();
    for (n, &(i, j)) in t.pairs.iter().enumerate() {
        for p in 0..t.residuals.len() {
            let mut r = pair_times(sc, i, j);
            r.push(p.to_string());
            r.push(num(t.residuals[p][n]));
            r.push(num(t.driver_terms[p][n]));
            rows.push(r);
        }
    }
    out.csv(
        &format!("{stem}.csv"),
        &[
            S,
            T,
            "probe (0 is φ = 1) [-]",
            "residual (weak-form remainder against φ) [u^k vol]",
            "driver_term (<G(u_s), B*_st φ>) [u^k vol]",
        ],
        rows,
    )?;
    out.csv(
        &format!("{stem}_fit.csv"),
        &[
            "probe (0 is φ = 1) [-]",
            "slope (fitted exponent in t - s) [-]",
            "threshold (3(α - 0.05)) [-]",
            "max_abs (largest |residual|) [u^k vol]",
        ],
        (0..t.slopes.len()).map(|p| vec![p.to_string(), num(t.slopes[p]), num(t.threshold), num(t.max_abs[p])]),
    )?;
    Ok(())
}

pub fn ito(cfg: &Config, out: &mut RunDir) -> Result<Outcome> {
    let setup = build(cfg)?;
    let sc = &setup.scenario;
    let sol = solve_setup(&setup)?;
    let f = admissible(cfg, &sol)?;
    let probes = weak_probes(&sc.spatial);
    let chain = chain_defect(&sol, sc, &f, &probes)?;
    residual_tables(out, "chain", sc, &chain)?;
    let mut outcome = Outcome::default();
    outcome.check(&format!("chain rule remainder for {}", f.name), chain.passes());
    let mut plots = vec![("chain.csv", 2, 4, "chain residual")];
    if let Some(v0) = &setup.v0 {
        let sv = Scenario {
            u0: v0.clone(),
            ..sc.clone()
        };
        sv.validate()?;
        let vsol = solve(&sv)?;
        let prod = product_defect(&sol, &vsol, sc, &sv, &sc.driver, &probes)?;
        residual_tables(out, "product", sc, &prod)?;
        outcome.check("product rule remainder", prod.passes());
        plots.push(("product.csv", 2, 4, "product residual"));
    }
    out.plot("ito.gp", "weak-form residuals against t - s", true, &plots)?;
    Ok(outcome)
}

pub fn lp(cfg: &Config, out: &mut RunDir) -> Result<Outcome> {
    let setup = build(cfg)?;
    let sc = &setup.scenario;
    let sol = solve_setup(&setup)?;
    let p = cfg.f64("lp.p", 2.0)?;
    let r = lp_evolution(&sol, sc, p).map_err(|e| cfg.error("lp.p", e))?;
    out.csv(
        "lp.csv",
        &[
            T,
            "lp (|u_t|_Lp^p) [u^p vol]",
            "dissipation (p(p-1)∫_0^t <a∇u,|u|^(p-2)∇u> dr) [u^p vol]",
            "energy (lp + dissipation) [u^p vol]",
        ],
        (0..r.times.len()).map(|k| vec![num(r.times[k]), num(r.lp[k]), num(r.dissipation[k]), num(r.energy[k])]),
    )?;
    residual_tables(out, "lp_residuals", sc, &r.table)?;
    out.summary(
        "lp_summary.csv",
        &[
            ("p (exponent)", num(p)),
            ("identity_residual (largest weak-form residual)", num(r.identity_residual)),
            ("monotone (1 if |u|^p never grew by more than Δt)", num(if r.monotone { 1.0 } else { 0.0 })),
            ("worst_growth (largest one-step relative growth)", num(r.worst_growth)),
        ],
    )?;
    let mut outcome = Outcome::default();
    if sc.forcing.is_zero() && sc.driver.is_transport() {
        outcome.check("L^p norm non-increasing", r.monotone);
    }
    out.plot("lp.gp", "L^p evolution", false, &[("lp.csv", 1, 2, "|u|^p"), ("lp.csv", 1, 4, "energy")])?;
    Ok(outcome)
}

pub fn moser(cfg: &Config, out: &mut RunDir) -> Result<Outcome> {
    let setup = build(cfg)?;
    let sc = &setup.scenario;
    let sol = solve_setup(&setup)?;
    let eps = cfg.f64("moser.epsilon", 0.1)?;
    let m = moser_bound(&sol, sc, eps).map_err(|e| cfg.error("moser.epsilon", e))?;
    out.csv(
        "moser.csv",
        &[
            "n (moment level) [-]",
            "kappa ((1+ε)^n) [-]",
            "norm (|u|_L^{ρκ}(L^{σκ})) [u]",
            "ln_phi (ln(|u|^κ + 1)) [-]",
            "ln_bound (ln of the closed-form recursive bound) [-]",
            "sup_estimate (Φ_n - 1)^(1/κ_n) [u]",
        ],
        (0..m.norms.len()).map(|n| {
            vec![
                n.to_string(),
                num(m.kappa[n]),
                num(m.norms[n]),
                num(m.ln_phi[n]),
                num(m.ln_formula_bound[n]),
                num(m.sup_estimate[n]),
            ]
        }),
    )?;
    out.summary(
        "moser_summary.csv",
        &[
            ("epsilon", num(m.epsilon)),
            ("rho (time exponent)", num(m.rho)),
            ("sigma (space exponent)", num(m.sigma)),
            ("gamma (fitted recursion constant)", num(m.gamma)),
            ("tau (recursion base)", num(m.tau)),
            ("true_sup (max |u|)", num(m.true_sup)),
        ],
    )?;
    let mut outcome = Outcome::default();
    outcome.check("recursive bound", m.bound_holds);
    out.plot("moser.gp", "moment sequence", false, &[("moser.csv", 1, 6, "sup estimate")])?;
    Ok(outcome)
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let n = std::env::var("RPDE_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median sup-difference and driver distance per level, skipping the first level.
pub fn wz_medians(runs: &[Vec<SweepRow>]) -> Vec<(u32, f64, f64)> {
    let Some(first) = runs.first() else { return Vec::new() };
    (1..first.len())
        .map(|l| {
            let d = runs.iter().filter_map(|r| r[l].sup_diff).collect();
            let rho = runs.iter().filter_map(|r| r[l].rho).collect();
            (first[l].level, median(d), median(rho))
        })
        .collect()
}

pub fn wz(cfg: &Config, out: &mut RunDir) -> Result<Outcome> {
    let levels = cfg.list_u32("wz.levels", &[0, 1, 2, 3])?;
    let seeds = cfg.usize("wz.seeds", 1)?.max(1);
    let base = cfg.u64_opt("driver.seed")?.unwrap_or(0);
    let pool = worker_pool()?;
    let runs: Vec<Result<Vec<SweepRow>>> = pool.install(|| {
        (0..seeds as u64)
            .into_par_iter()
            .map(|s| {
                let mut c = cfg.clone();
                c.set("driver.seed", (base + s).to_string());
                let setup = build(&c)?;
                gate(&setup.scenario)?;
                wong_zakai_sweep(&setup.scenario, &levels)
            })
            .collect()
    });
    let runs: Vec<Vec<SweepRow>> = runs.into_iter().collect::<Result<_>>()?;
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    let mut rows = Vec::new();
    for (s, run) in runs.iter().enumerate() {
        for r in run {
            rows.push(vec![
                (base + s as u64).to_string(),
                r.level.to_string(),
                r.steps.to_string(),
                opt(r.sup_diff),
                opt(r.rho),
                num(r.final_l2),
            ]);
        }
    }
    out.csv(
        "wz.csv",
        &[
            "seed [-]",
            "level (dyadic refinement) [-]",
            "steps (time steps) [-]",
            "sup_diff (sup |u^n - u^(n-1)| on base nodes) [u]",
            "rho (ρ_α distance to the previous lift) [-]",
            "final_l2 (|u_T|_L2) [u vol^1/2]",
        ],
        rows,
    )?;
    let med = wz_medians(&runs);
    out.csv(
        "wz_median.csv",
        &[
            "level (dyadic refinement) [-]",
            "median_sup_diff (median over seeds) [u]",
            "median_rho (median over seeds) [-]",
        ],
        med.iter().map(|(l, d, r)| vec![l.to_string(), num(*d), num(*r)]),
    )?;
    let mut outcome = Outcome::default();
    outcome.check("median sup difference decreases", med.windows(2).all(|w| w[1].1 < w[0].1));
    outcome.check("median driver distance decreases", med.windows(2).all(|w| w[1].2 < w[0].2));
    out.plot(
        "wz.gp",
        "Wong-Zakai refinement",
        false,
        &[("wz_median.csv", 1, 2, "median sup diff"), ("wz_median.csv", 1, 3, "median rho")],
    )?;
    Ok(outcome)
}

pub fn dist(a: &Config, b: &Config, out: &mut RunDir) -> Result<Outcome> {
    let (sa, sb) = (build(a)?, build(b)?);
    let (da, db) = (&sa.scenario.driver, &sb.scenario.driver);
    let alpha = da.alpha.min(db.alpha);
    let rho = rho_alpha(da, db, alpha)?;
    out.summary(
        "dist.csv",
        &[("alpha (exponent used)", num(alpha)), ("rho_alpha (driver distance)", num(rho))],
    )?;
    Ok(Outcome::default())
}
