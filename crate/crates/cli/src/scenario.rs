//! Scenario construction from a [`Config`].

use rpde_core::operators::assemble_elliptic;
use rpde_core::paths::sample;
use rpde_core::{
    Boundary, DifferentialRoughDriver, DriverRecipe, Expr, Forcing, PathKind, PathRecipe, Result, ScalarField,
    Scenario, Scheme, SpatialGrid, TimeGrid,
};

use crate::config::Config;

const SECTIONS: &[(&str, &[&str])] = &[
    ("grid", &["dim", "nodes", "length", "boundary"]),
    ("time", &["steps", "horizon"]),
    ("elliptic", &["a", "a11", "a12", "a22", "lambda"]),
    ("initial", &["u0", "v0"]),
    ("forcing", &["f0", "f1", "f2", "r", "q"]),
    ("driver", &["kind", "calculus", "channels", "hurst", "seed", "samples", "alpha"]),
    ("scheme", &["theta", "guard", "allow_nongeometric"]),
    ("ito", &["function", "p", "radius"]),
    ("lp", &["p"]),
    ("moser", &["epsilon"]),
    ("maxp", &["c"]),
    ("wz", &["levels", "seeds"]),
    ("output", &["snapshots"]),
];

const CHANNEL_KEYS: &[&str] = &["z", "sigma_x", "sigma_y", "rho"];

/// True for every key a scenario file may contain.
pub fn known_key(key: &str) -> bool {
    let Some((section, name)) = key.split_once('.') else { return false };
    if let Some(idx) = section.strip_prefix("channel") {
        return idx.parse::<usize>().is_ok_and(|i| i >= 1) && CHANNEL_KEYS.contains(&name);
    }
    SECTIONS.iter().any(|(s, keys)| *s == section && keys.contains(&name))
}

/// A built scenario with the run options that live outside it.
#[derive(Clone, Debug)]
pub struct Setup {
    pub scenario: Scenario,
    /// Second initial datum for product-rule runs.
    pub v0: Option<ScalarField>,
    pub seed: u64,
}

pub fn spatial_grid(cfg: &Config) -> Result<SpatialGrid> {
    let dim = cfg.usize("grid.dim", 1)?;
    let n = cfg.usize("grid.nodes", 64)?;
    let length = cfg.f64("grid.length", 1.0)?;
    let boundary = match cfg.choice("grid.boundary", &["periodic", "dirichlet"])?.as_str() {
        "periodic" => Boundary::Periodic,
        _ => Boundary::Dirichlet,
    };
    SpatialGrid::new(dim, [n, n], [length, length], [0.0, 0.0], boundary).map_err(|e| cfg.error("grid.nodes", e))
}

pub fn time_grid(cfg: &Config) -> Result<TimeGrid> {
    let steps = cfg.usize("time.steps", 128)?;
    let horizon = cfg.f64("time.horizon", 0.1)?;
    TimeGrid::uniform(steps, horizon).map_err(|e| cfg.error("time.steps", e))
}

fn field(g: SpatialGrid, e: &Expr, t: f64) -> ScalarField {
    ScalarField::from_fn(g, |x| e.eval(t, x[0], x[1]))
}

fn initial(cfg: &Config, g: SpatialGrid, key: &str) -> Result<Option<ScalarField>> {
    let Some(e) = cfg.expr_opt(key)? else { return Ok(None) };
    let mut u = field(g, &e, 0.0);
    if !g.is_periodic() {
        for k in 0..g.len() {
            if g.is_boundary(k) && u.values[k].abs() <= 1e-12 {
                u.values[k] = 0.0;
            }
        }
    }
    Ok(Some(u))
}

fn elliptic(cfg: &Config, g: SpatialGrid, time: &TimeGrid) -> Result<rpde_core::EllipticOp> {
    let d = g.dim;
    let base = cfg.str("elliptic.a", "1").to_string();
    let exprs: Vec<Expr> = if d == 1 {
        vec![cfg.expr("elliptic.a", "1")?]
    } else {
        let a11 = cfg.expr("elliptic.a11", &base)?;
        let a12 = cfg.expr("elliptic.a12", "0")?;
        let a22 = cfg.expr("elliptic.a22", &base)?;
        vec![a11, a12.clone(), a12, a22]
    };
    let lambda = cfg.f64("elliptic.lambda", 0.1)?;
    let times: Vec<f64> = if exprs.iter().all(|e| e.is_free_of("t")) {
        vec![0.0]
    } else {
        time.times().to_vec()
    };
    let slices = times
        .iter()
        .map(|&t| exprs.iter().map(|e| field(g, e, t)).collect())
        .collect();
    assemble_elliptic(g, slices, lambda).map_err(|e| cfg.error("elliptic.a", e))
}

fn forcing(cfg: &Config, g: SpatialGrid, time: &TimeGrid) -> Result<Forcing> {
    let f0 = cfg.expr_opt("forcing.f0")?;
    let fi: Vec<Option<Expr>> = ["forcing.f1", "forcing.f2"][..g.dim]
        .iter()
        .map(|k| cfg.expr_opt(k))
        .collect::<Result<_>>()?;
    if f0.is_none() && fi.iter().all(Option::is_none) {
        return Ok(Forcing::Zero);
    }
    let zero = Expr::parse("0")?;
    let f0v = match &f0 {
        Some(e) => time.times().iter().map(|&t| field(g, e, t)).collect(),
        None => Vec::new(),
    };
    let fiv = if fi.iter().any(Option::is_some) {
        time.times()
            .iter()
            .map(|&t| fi.iter().map(|e| field(g, e.as_ref().unwrap_or(&zero), t)).collect())
            .collect()
    } else {
        Vec::new()
    };
    Forcing::divergence(f0v, fiv)
}

fn recipe(cfg: &Config, g: SpatialGrid, time: &TimeGrid, seed: u64) -> Result<Option<DriverRecipe>> {
    let kind = cfg.choice("driver.kind", &["zero", "deterministic", "bm", "fbm"])?;
    if kind == "zero" {
        return Ok(None);
    }
    let m = cfg.usize("driver.channels", 1)?;
    if m == 0 {
        return Err(cfg.error("driver.channels", "need at least one channel"));
    }
    let ito = cfg.choice("driver.calculus", &["stratonovich", "ito"])? == "ito";
    if ito && kind != "bm" {
        return Err(cfg.error("driver.calculus", "Ito lifts are defined for Brownian paths only"));
    }
    let path_kind = match kind.as_str() {
        "bm" => PathKind::Bm,
        "fbm" => PathKind::Fbm {
            hurst: cfg.f64("driver.hurst", 0.5)?,
        },
        _ => PathKind::Deterministic(
            (1..=m)
                .map(|mu| {
                    let key = format!("channel{mu}.z");
                    cfg.expr_opt(&key)?
                        .ok_or_else(|| cfg.error(&key, "a deterministic driver needs a path expression per channel"))
                })
                .collect::<Result<_>>()?,
        ),
    };
    let samples = cfg.usize("driver.samples", if kind == "deterministic" { 8 } else { 1 })?;
    let path = sample(
        &PathRecipe {
            kind: path_kind,
            channels: m,
            seed,
            samples_per_interval: samples,
        },
        time,
    )
    .map_err(|e| cfg.error("driver.kind", e))?;
    let axes = ["sigma_x", "sigma_y"];
    let mut sigma = Vec::with_capacity(m);
    let mut rho = Vec::with_capacity(m);
    for mu in 1..=m {
        let s = axes[..g.dim]
            .iter()
            .map(|a| Ok(field(g, &cfg.expr(&format!("channel{mu}.{a}"), "0")?, 0.0)))
            .collect::<Result<Vec<_>>>()?;
        sigma.push(s);
        rho.push(field(g, &cfg.expr(&format!("channel{mu}.rho"), "0")?, 0.0));
    }
    Ok(Some(DriverRecipe { path, sigma, rho, ito }))
}

/// Scheme options, with the command-line flag folded in by the caller.
pub fn scheme(cfg: &Config) -> Result<Scheme> {
    Ok(Scheme {
        theta: cfg.f64("scheme.theta", 1.0)?,
        guard: cfg.f64("scheme.guard", 0.5)?,
        allow_nongeometric: cfg.bool("scheme.allow_nongeometric", false)?,
    })
}

/// Builds the scenario described by `cfg`.
pub fn build(cfg: &Config) -> Result<Setup> {
    cfg.check_keys(known_key)?;
    let g = spatial_grid(cfg)?;
    let time = time_grid(cfg)?;
    let alpha = cfg.f64("driver.alpha", 0.45)?;
    let seed = cfg.u64_opt("driver.seed")?.unwrap_or(0);
    let u0 = initial(cfg, g, "initial.u0")?.ok_or_else(|| cfg.error("initial.u0", "initial data is required"))?;
    let v0 = initial(cfg, g, "initial.v0")?;
    let a = elliptic(cfg, g, &time)?;
    let mut sc = match recipe(cfg, g, &time, seed)? {
        Some(r) => Scenario::from_recipe(time.clone(), a, u0, r, alpha)?,
        None => Scenario::new(time.clone(), a, u0, DifferentialRoughDriver::zero(time.clone(), g, alpha)?)?,
    };
    sc = sc.with_forcing(forcing(cfg, g, &time)?)?.with_scheme(scheme(cfg)?)?;
    let r = cfg.f64_opt("forcing.r")?;
    let q = cfg.f64_opt("forcing.q")?;
    sc.exponents = match (r, q) {
        (Some(r), Some(q)) => Some((r, q)),
        (None, None) => None,
        _ => return Err(cfg.error("forcing.r", "give both forcing.r and forcing.q")),
    };
    sc.p = cfg.f64("lp.p", 2.0)?;
    sc.validate()?;
    Ok(Setup { scenario: sc, v0, seed })
}
