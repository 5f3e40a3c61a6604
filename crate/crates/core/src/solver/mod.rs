//! Davie-type time stepping for `du = (Au + f) dt + dB u` and the reports
//! built on top of the computed trajectory.

mod extension;
mod linear;
mod moser;
mod reports;
mod sweep;

use std::sync::Arc;

pub use extension::{dirichlet_extend, max_principle_check, Extension, MaxPrincipleReport, Violation};
pub use moser::{moser_bound, moser_formula, moser_formula_ln, MoserReport};
pub use reports::{
    driver_control, energy_report, lp_dissipation, lp_integral, remainder_report, DriverControl, EnergyReport,
    RemainderReport, ENERGY_CONSTANT, SMALLNESS,
};
pub use sweep::{wong_zakai_sweep, SweepRow};

use crate::driver::{from_rough_path, probe_norm_levels, probe_suite, DifferentialRoughDriver, ScalarRoughPath};
use crate::error::{Error, Result};
use crate::operators::{apply_first, apply_second, d1, EllipticOp, ScalarField, SpatialGrid};
use crate::paths::{pl_level2, MultiPath};
use crate::temporal::{TimeGrid, TwoParamField};

/// Scheme parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scheme {
    /// Implicitness on `A`: 1 is backward Euler, ½ Crank-Nicolson.
    pub theta: f64,
    pub allow_nongeometric: bool,
    /// Largest admitted probe amplification of `B¹ + B²` on one step.
    pub guard: f64,
}

impl Default for Scheme {
    fn default() -> Self {
        Self {
            theta: 1.0,
            allow_nongeometric: false,
            guard: 0.5,
        }
    }
}

/// Right-hand side `f`, sampled at time nodes.
#[derive(Clone, Debug, PartialEq)]
pub enum Forcing {
    Zero,
    Nodes(Vec<ScalarField>),
}

impl Forcing {
    /// `f⁰ + ∂_i f^i` at every node, differentiated with the grid stencils.
    /// `f0` may be empty; `fi[node][axis]`.
    pub fn divergence(f0: Vec<ScalarField>, fi: Vec<Vec<ScalarField>>) -> Result<Self> {
        let n = f0.len().max(fi.len());
        if (!f0.is_empty() && f0.len() != n) || (!fi.is_empty() && fi.len() != n) {
            return Err(Error::InputShape("forcing components have different node counts".into()));
        }
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let mut f = match f0.get(k) {
                Some(f) => f.clone(),
                None => ScalarField::zeros(fi[k][0].grid),
            };
            if let Some(comp) = fi.get(k) {
                if comp.len() != f.grid.dim {
                    return Err(Error::InputShape(format!(
                        "need {} divergence components, got {}",
                        f.grid.dim,
                        comp.len()
                    )));
                }
                for (axis, c) in comp.iter().enumerate() {
                    f.grid.same_as(&c.grid)?;
                    let dc = d1(&c.grid, &c.values, axis);
                    for (a, b) in f.values.iter_mut().zip(dc) {
                        *a += b;
                    }
                }
            }
            out.push(f);
        }
        Ok(Forcing::Nodes(out))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Forcing::Zero => true,
            Forcing::Nodes(v) => v.iter().all(|f| f.values.iter().all(|&x| x == 0.0)),
        }
    }

    pub fn at(&self, k: usize) -> Option<&ScalarField> {
        match self {
            Forcing::Zero => None,
            Forcing::Nodes(v) => Some(&v[k]),
        }
    }

    /// Trapezoid average over interval `k`.
    pub fn average(&self, k: usize) -> Option<ScalarField> {
        match self {
            Forcing::Zero => None,
            Forcing::Nodes(v) => Some(v[k].zip(&v[k + 1], |a, b| 0.5 * (a + b))),
        }
    }

    /// `∫_0^{t_k} |f|_{L²} dr` by the trapezoid rule.
    pub fn cumulative_l2(&self, time: &TimeGrid) -> Vec<f64> {
        let mut out = vec![0.0; time.len()];
        if let Forcing::Nodes(v) = self {
            for k in 0..time.intervals() {
                out[k + 1] = out[k] + 0.5 * time.dt(k) * (v[k].l2() + v[k + 1].l2());
            }
        }
        out
    }
}

/// A sampled path with the vector fields it drives; rebuilt on refined grids by
/// the Wong-Zakai sweep.
#[derive(Clone, Debug)]
pub struct DriverRecipe {
    pub path: MultiPath,
    /// `sigma[μ][axis]`.
    pub sigma: Vec<Vec<ScalarField>>,
    /// Zero-order coefficient per channel.
    pub rho: Vec<ScalarField>,
    /// Itô lift instead of the piecewise-linear one.
    pub ito: bool,
}

impl DriverRecipe {
    /// Level 1 and 2 of the path over the intervals of `grid`.
    pub fn rough_path(&self, grid: &TimeGrid) -> Result<ScalarRoughPath> {
        let mut z = pl_level2(&self.path, grid)?;
        if self.ito {
            let m = z.m;
            for (k, z2) in z.z2.iter_mut().enumerate() {
                let dt = grid.dt(k);
                for mu in 0..m {
                    z2[mu * m + mu] -= 0.5 * dt;
                }
            }
        }
        Ok(z)
    }

    pub fn build(&self, grid: &TimeGrid, alpha: f64) -> Result<DifferentialRoughDriver> {
        from_rough_path(&self.rough_path(grid)?, self.sigma.clone(), self.rho.clone(), alpha)
    }
}

/// Everything needed for one run.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub time: TimeGrid,
    pub spatial: SpatialGrid,
    pub elliptic: EllipticOp,
    pub forcing: Forcing,
    pub u0: ScalarField,
    pub driver: Arc<DifferentialRoughDriver>,
    pub recipe: Option<DriverRecipe>,
    pub scheme: Scheme,
    /// Integrability `(r, q)` of the forcing; `r` may be infinite.
    pub exponents: Option<(f64, f64)>,
    /// Exponent for `L^p` runs.
    pub p: f64,
}

impl Scenario {
    pub fn new(time: TimeGrid, elliptic: EllipticOp, u0: ScalarField, driver: DifferentialRoughDriver) -> Result<Self> {
        let sc = Self {
            spatial: u0.grid,
            time,
            elliptic,
            forcing: Forcing::Zero,
            u0,
            driver: Arc::new(driver),
            recipe: None,
            scheme: Scheme::default(),
            exponents: None,
            p: 2.0,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Builds the driver from `recipe` on `time`.
    pub fn from_recipe(
        time: TimeGrid,
        elliptic: EllipticOp,
        u0: ScalarField,
        recipe: DriverRecipe,
        alpha: f64,
    ) -> Result<Self> {
        let driver = recipe.build(&time, alpha)?;
        let mut sc = Self::new(time, elliptic, u0, driver)?;
        sc.recipe = Some(recipe);
        Ok(sc)
    }

    pub fn with_forcing(mut self, forcing: Forcing) -> Result<Self> {
        self.forcing = forcing;
        self.validate()?;
        Ok(self)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Result<Self> {
        self.scheme = scheme;
        self.validate()?;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.driver.alpha
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.spatial;
        g.same_as(&self.u0.grid)?;
        g.same_as(&self.elliptic.grid)?;
        g.same_as(&self.driver.spatial)?;
        if self.driver.grid != self.time {
            return Err(Error::GridMismatch("driver and scenario use different time grids".into()));
        }
        let slices = self.elliptic.a.len();
        if slices != 1 && slices != self.time.len() {
            return Err(Error::InputShape(format!(
                "elliptic coefficients need 1 or {} time slices, got {slices}",
                self.time.len()
            )));
        }
        if let Forcing::Nodes(v) = &self.forcing {
            if v.len() != self.time.len() {
                return Err(Error::InputShape(format!(
                    "forcing has {} time nodes, grid has {}",
                    v.len(),
                    self.time.len()
                )));
            }
            for f in v {
                g.same_as(&f.grid)?;
            }
        }
        let s = self.scheme;
        if !(0.0..=1.0).contains(&s.theta) {
            return Err(Error::Parameter(format!("theta must lie in [0, 1], got {}", s.theta)));
        }
        if !(s.guard > 0.0) {
            return Err(Error::Parameter("guard threshold must be positive".into()));
        }
        if !g.is_periodic() && !self.u0.vanishes_on_boundary(1e-12) {
            return Err(Error::Config("initial data must vanish on the Dirichlet boundary".into()));
        }
        if let Some((r, q)) = self.exponents {
            if !(r > 1.0 && q > 1.0) {
                return Err(Error::Config(format!("forcing exponents need r, q > 1, got ({r}, {q})")));
            }
        }
        if !(self.p >= 1.0) {
            return Err(Error::Parameter(format!("p must be at least 1, got {}", self.p)));
        }
        Ok(())
    }

    fn check_geometric(&self) -> Result<()> {
        if !self.driver.geometric && !self.scheme.allow_nongeometric {
            return Err(Error::Geometricity);
        }
        Ok(())
    }
}

struct Stepper<'a> {
    sc: &'a Scenario,
    driver: &'a DifferentialRoughDriver,
    probes: Vec<ScalarField>,
    zero: bool,
}

impl<'a> Stepper<'a> {
    fn new(sc: &'a Scenario, driver: &'a DifferentialRoughDriver) -> Self {
        Self {
            sc,
            driver,
            probes: probe_suite(&sc.spatial),
            zero: driver.is_zero(),
        }
    }

    fn guard(&self, k: usize) -> Result<()> {
        if self.zero {
            return Ok(());
        }
        let amp = probe_norm_levels(self.driver.interval(k), &self.probes);
        let threshold = self.sc.scheme.guard;
        if amp > threshold {
            let factor = (amp / threshold).powf(1.0 / self.driver.alpha).ceil();
            return Err(Error::StepSize {
                interval: k,
                amplification: amp,
                threshold,
                suggested_refinement: (factor as usize).max(2),
            });
        }
        Ok(())
    }

    fn advance(&self, k: usize, u: &ScalarField) -> Result<ScalarField> {
        self.guard(k)?;
        let sc = self.sc;
        let g = sc.spatial;
        let dt = sc.time.dt(k);
        let theta = sc.scheme.theta;
        let mut rhs = rough_term(self.driver, k, k + 1, u)?;
        rhs.axpy(1.0, u);
        if theta < 1.0 {
            let au = sc.elliptic.apply(k, &u.values);
            for (r, a) in rhs.values.iter_mut().zip(au) {
                *r += (1.0 - theta) * dt * a;
            }
        }
        if let Some(f) = sc.forcing.average(k) {
            rhs.axpy(dt, &f);
        }
        let values = linear::implicit_solve(&sc.elliptic, k + 1, theta * dt, &rhs.values, &u.values)?;
        let mut out = ScalarField::new(g, values)?;
        if !g.is_periodic() {
            for node in 0..g.len() {
                if g.is_boundary(node) {
                    out.values[node] = 0.0;
                }
            }
        }
        Ok(out)
    }
}

/// `(B¹ + B²)_{ij} u`.
pub fn rough_term(driver: &DifferentialRoughDriver, i: usize, j: usize, u: &ScalarField) -> Result<ScalarField> {
    let c = driver.pair(i, j);
    let mut out = apply_first(&c.level1(), u)?;
    out.axpy(1.0, &apply_second(&c.level2(), u)?);
    Ok(out)
}

/// One step over interval `interval`: solves
/// `(I - θΔt A) u_t = u_s + (1-θ)Δt A u_s + Δt f̄ + (B¹ + B²) u_s`.
pub fn step(u_s: &ScalarField, interval: usize, sc: &Scenario, driver: &DifferentialRoughDriver) -> Result<ScalarField> {
    if !driver.geometric && !sc.scheme.allow_nongeometric {
        return Err(Error::Geometricity);
    }
    if interval >= sc.time.intervals() {
        return Err(Error::Parameter(format!("interval {interval} out of range")));
    }
    Stepper::new(sc, driver).advance(interval, u_s)
}

/// The trajectory alone, without reports.
pub fn integrate(sc: &Scenario) -> Result<Vec<ScalarField>> {
    sc.validate()?;
    sc.check_geometric()?;
    let stepper = Stepper::new(sc, &sc.driver);
    let mut u = Vec::with_capacity(sc.time.len());
    u.push(sc.u0.clone());
    for k in 0..sc.time.intervals() {
        let next = stepper.advance(k, &u[k])?;
        if next.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solve(format!("non-finite values after interval {k}")));
        }
        u.push(next);
    }
    Ok(u)
}

/// θ-weighted state `v_k` and elliptic part `W_k` of interval `k`:
/// `v = θu_{k+1} + (1-θ)u_k`, `W = θA u_{k+1} + (1-θ)A u_k`.
pub fn theta_state(sc: &Scenario, u: &[ScalarField], k: usize) -> (ScalarField, ScalarField) {
    let th = sc.scheme.theta;
    let v = u[k + 1].zip(&u[k], |a, b| th * a + (1.0 - th) * b);
    let a1 = sc.elliptic.apply(k + 1, &u[k + 1].values);
    let a0 = sc.elliptic.apply(k, &u[k].values);
    let w = a1.iter().zip(&a0).map(|(x, y)| th * x + (1.0 - th) * y).collect();
    (v, ScalarField::new(sc.spatial, w).expect("grid"))
}

/// Trajectory with its controlled-path decomposition on dyadic pairs.
#[derive(Clone, Debug)]
pub struct ControlledSolution {
    pub time: TimeGrid,
    pub u: Vec<ScalarField>,
    /// Quadrature of `∫(Au + f) dr` on each interval, consistent with the scheme.
    pub drift: Vec<ScalarField>,
    /// `R^u_{st} = δu_{st} - B¹_{st} u_s`.
    pub ru: TwoParamField<ScalarField>,
    /// `u^♮_{st} = δu_{st} - ∫(Au + f) dr - (B¹ + B²)_{st} u_s`.
    pub u_sharp: TwoParamField<ScalarField>,
    /// `∫_0^{t_k} |f|_{L²} dr` at every node.
    pub forcing_l2: Vec<f64>,
    pub remainder: RemainderReport,
    pub energy: EnergyReport,
}

impl ControlledSolution {
    pub fn final_state(&self) -> &ScalarField {
        self.u.last().expect("non-empty trajectory")
    }

    /// `(R^u, u^♮)` on an arbitrary pair.
    pub fn decompose(&self, driver: &DifferentialRoughDriver, i: usize, j: usize) -> Result<(ScalarField, ScalarField)> {
        let c = driver.pair(i, j);
        let mut ru = self.u[j].zip(&self.u[i], |a, b| a - b);
        ru.axpy(-1.0, &apply_first(&c.level1(), &self.u[i])?);
        let mut sharp = ru.clone();
        for k in i..j {
            sharp.axpy(-1.0, &self.drift[k]);
        }
        sharp.axpy(-1.0, &apply_second(&c.level2(), &self.u[i])?);
        Ok((ru, sharp))
    }
}

/// Integrates the scenario and attaches remainder and energy reports.
pub fn solve(sc: &Scenario) -> Result<ControlledSolution> {
    let u = integrate(sc)?;
    controlled(sc, u)
}

/// Builds the controlled-path tables for a computed trajectory.
pub fn controlled(sc: &Scenario, u: Vec<ScalarField>) -> Result<ControlledSolution> {
    let g = sc.spatial;
    let time = sc.time.clone();
    let mut drift = Vec::with_capacity(time.intervals());
    for k in 0..time.intervals() {
        let (_, mut w) = theta_state(sc, &u, k);
        if let Some(f) = sc.forcing.average(k) {
            w.axpy(1.0, &f);
        }
        let mut d = w.map(|x| x * time.dt(k));
        if !g.is_periodic() {
            for node in 0..g.len() {
                if g.is_boundary(node) {
                    d.values[node] = 0.0;
                }
            }
        }
        drift.push(d);
    }
    let mut sol = ControlledSolution {
        ru: TwoParamField::empty(&time),
        u_sharp: TwoParamField::empty(&time),
        forcing_l2: sc.forcing.cumulative_l2(&time),
        time,
        u,
        drift,
        remainder: RemainderReport::default(),
        energy: EnergyReport::default(),
    };
    for (i, j) in sol.time.dyadic_pairs(sol.time.full_window()) {
        let (ru, sharp) = sol.decompose(&sc.driver, i, j)?;
        sol.ru.set(i, j, ru);
        sol.u_sharp.set(i, j, sharp);
    }
    sol.remainder = remainder_report(&sol, &sc.driver, sc.alpha());
    sol.energy = energy_report(&sol, sc);
    Ok(sol)
}
