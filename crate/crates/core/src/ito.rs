//! Chain rule, product rule and `L^p` evolution checked on computed solutions.
//!
//! All defects are weak-form residuals against probe fields: the increment of
//! the composed quantity, minus the scheme-consistent drift, minus the driver
//! term applied at the left endpoint. They must scale like remainders.

use std::fmt;
use std::sync::Arc;

use crate::driver::{probe_suite, shift, DifferentialRoughDriver};
use crate::error::{Error, Result};
use crate::operators::{ScalarField, SpatialGrid};
use crate::solver::{driver_control, lp_dissipation, lp_integral, rough_term, theta_state, ControlledSolution, Scenario};
use crate::temporal::{holder_fit_pairs, TimeGrid, TwoParamField};

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar function with its first two derivatives.
#[derive(Clone)]
pub struct AdmissibleF {
    pub name: String,
    f: Scalar,
    df: Scalar,
    d2f: Scalar,
    /// Set by [`AdmissibleF::check_admissible`].
    pub admissible_check: bool,
}

impl fmt::Debug for AdmissibleF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdmissibleF")
            .field("name", &self.name)
            .field("admissible_check", &self.admissible_check)
            .finish()
    }
}

impl AdmissibleF {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
            df: Arc::new(df),
            d2f: Arc::new(d2f),
            admissible_check: false,
        }
    }

    pub fn square() -> Self {
        Self::new("z^2", |z| z * z, |z| 2.0 * z, |_| 2.0)
    }

    pub fn cube() -> Self {
        Self::new("z^3", |z| z * z * z, |z| 3.0 * z * z, |z| 6.0 * z)
    }

    /// `|z|^p`, `p >= 2`.
    pub fn power(p: f64) -> Result<Self> {
        if !(p >= 2.0) {
            return Err(Error::Parameter(format!("power needs p >= 2, got {p}")));
        }
        Ok(Self::new(
            format!("|z|^{p}"),
            move |z| z.abs().powf(p),
            move |z| p * z * z.abs().powf(p - 2.0),
            move |z| p * (p - 1.0) * z.abs().powf(p - 2.0),
        ))
    }

    pub fn f(&self, z: f64) -> f64 {
        (self.f)(z)
    }

    pub fn df(&self, z: f64) -> f64 {
        (self.df)(z)
    }

    pub fn d2f(&self, z: f64) -> f64 {
        (self.d2f)(z)
    }

    /// Sweeps `[-range, range]`: `F(0) = F'(0) = 0` and `F''` finite. With
    /// `compact_support` only the second condition is required.
    pub fn check_admissible(&mut self, range: f64, compact_support: bool) -> Result<()> {
        let scale = 1.0 + self.f(range).abs() + self.f(-range).abs();
        if !compact_support {
            if self.f(0.0).abs() > 1e-12 * scale {
                return Err(Error::Admissibility(format!("{}: F(0) = {} is not zero", self.name, self.f(0.0))));
            }
            if self.df(0.0).abs() > 1e-12 * scale {
                return Err(Error::Admissibility(format!("{}: F'(0) = {} is not zero", self.name, self.df(0.0))));
            }
        }
        let n = 2001;
        for k in 0..n {
            let z = -range + 2.0 * range * k as f64 / (n - 1) as f64;
            let v = self.d2f(z);
            if !v.is_finite() {
                return Err(Error::Admissibility(format!("{}: F'' is not finite at {z}", self.name)));
            }
        }
        self.admissible_check = true;
        Ok(())
    }
}

/// Cutoff equal to 1 on `[0, 1]`, 0 beyond 2, `2s³ - 9s² + 12s - 4` between.
fn cutoff(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        ((2.0 * s - 9.0) * s + 12.0) * s - 4.0
    }
}

const CUT: [f64; 4] = [-4.0, 12.0, -9.0, 2.0];

/// `F_R(z) = ∫_0^{|z|} dy ∫_0^y θ(τ/R) p(p-1) τ^{p-2} dτ`, in closed form.
/// Equals `|z|^p` for `|z| <= R` and grows linearly beyond `2R`.
pub fn truncate_power(p: f64, r: f64) -> Result<AdmissibleF> {
    if !(p >= 2.0) {
        return Err(Error::Parameter(format!("truncation needs p >= 2, got {p}")));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Parameter(format!("truncation radius must be positive, got {r}")));
    }
    // G = F' on [R, 2R]
    let g = move |y: f64| {
        let mut acc = p * r.powf(p - 1.0);
        for (k, c) in CUT.iter().enumerate() {
            let e = p - 1.0 + k as f64;
            acc += p * (p - 1.0) * c * r.powi(-(k as i32)) * (y.powf(e) - r.powf(e)) / e;
        }
        acc
    };
    let big_f = move |y: f64| {
        let mut acc = r.powf(p) + p * r.powf(p - 1.0) * (y - r);
        for (k, c) in CUT.iter().enumerate() {
            let e = p - 1.0 + k as f64;
            let int = (y.powf(e + 1.0) - r.powf(e + 1.0)) / (e + 1.0) - r.powf(e) * (y - r);
            acc += p * (p - 1.0) * c * r.powi(-(k as i32)) * int / e;
        }
        acc
    };
    let (g2, f2) = (g(2.0 * r), big_f(2.0 * r));
    let f = move |z: f64| {
        let y = z.abs();
        if y <= r {
            y.powf(p)
        } else if y <= 2.0 * r {
            big_f(y)
        } else {
            f2 + g2 * (y - 2.0 * r)
        }
    };
    let df = move |z: f64| {
        let y = z.abs();
        let v = if y <= r {
            p * y.powf(p - 1.0)
        } else if y <= 2.0 * r {
            g(y)
        } else {
            g2
        };
        v * z.signum()
    };
    let d2f = move |z: f64| {
        let y = z.abs();
        cutoff(y / r) * p * (p - 1.0) * y.powf(p - 2.0)
    };
    Ok(AdmissibleF::new(format!("F_R(p={p}, R={r})"), f, df, d2f))
}

/// The constant probe `φ = 1` followed by the fixed probe suite.
/// On Dirichlet grids the constant probe is zero on the boundary.
pub fn weak_probes(g: &SpatialGrid) -> Vec<ScalarField> {
    let mut one = ScalarField::constant(*g, 1.0);
    if !g.is_periodic() {
        for k in 0..g.len() {
            if g.is_boundary(k) {
                one.values[k] = 0.0;
            }
        }
    }
    let mut out = vec![one];
    out.extend(probe_suite(g));
    out
}

/// Residual table of one weak-form test.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResidualTable {
    pub pairs: Vec<(usize, usize)>,
    /// `residuals[probe][pair]`.
    pub residuals: Vec<Vec<f64>>,
    /// `⟨G(u_s), B*_{st} φ⟩`, same layout.
    pub driver_terms: Vec<Vec<f64>>,
    /// Fitted exponent per probe over the `ω_B`-small window; `+∞` when the
    /// residual vanishes to rounding.
    pub slopes: Vec<f64>,
    /// `3(α - 0.05)`.
    pub threshold: f64,
    /// Largest residual magnitude per probe.
    pub max_abs: Vec<f64>,
}

impl ResidualTable {
    /// Slope for the constant probe.
    pub fn slope(&self) -> f64 {
        self.slopes[0]
    }

    pub fn passes(&self) -> bool {
        self.slopes[0] >= self.threshold
    }
}

/// `v_k` and `W_k + f̄_k` of interval `k`, masked on Dirichlet boundaries.
fn interval_parts(sc: &Scenario, u: &[ScalarField], k: usize) -> (ScalarField, ScalarField) {
    let (v, mut w) = theta_state(sc, u, k);
    if let Some(f) = sc.forcing.average(k) {
        w.axpy(1.0, &f);
    }
    let g = sc.spatial;
    if !g.is_periodic() {
        for n in 0..g.len() {
            if g.is_boundary(n) {
                w.values[n] = 0.0;
            }
        }
    }
    (v, w)
}

fn fit(values: &[f64], pairs: &[(usize, usize)], grid: &TimeGrid, window_gap: usize, scale: f64) -> f64 {
    let mut t = TwoParamField::empty(grid);
    let mut kept = Vec::new();
    let mut any = false;
    for (&(i, j), &v) in pairs.iter().zip(values) {
        if j - i > window_gap {
            continue;
        }
        any = true;
        if v.abs() > 1e-12 * scale * (j - i) as f64 {
            t.set(i, j, v.abs());
            kept.push((i, j));
        }
    }
    if !any {
        return f64::NAN;
    }
    if kept.is_empty() {
        return f64::INFINITY;
    }
    holder_fit_pairs(&t, &kept).map(|f| f.exponent).unwrap_or(f64::NAN)
}

/// Weak residuals of `δG_{st} - Σ drift - B_{st} G_s` over dyadic pairs.
fn weak_residuals(
    grid: &TimeGrid,
    values: &[ScalarField],
    drift: &[ScalarField],
    driver: &DifferentialRoughDriver,
    probes: &[ScalarField],
    alpha: f64,
) -> Result<ResidualTable> {
    let pairs = grid.dyadic_pairs(grid.full_window());
    let mut residuals = vec![Vec::with_capacity(pairs.len()); probes.len()];
    let mut driver_terms = vec![Vec::with_capacity(pairs.len()); probes.len()];
    for &(i, j) in &pairs {
        let bg = rough_term(driver, i, j, &values[i])?;
        let mut r = values[j].zip(&values[i], |a, b| a - b);
        for d in &drift[i..j] {
            r.axpy(-1.0, d);
        }
        r.axpy(-1.0, &bg);
        for (p, phi) in probes.iter().enumerate() {
            residuals[p].push(r.dot(phi));
            driver_terms[p].push(bg.dot(phi));
        }
    }
    let window = driver_control(driver, alpha).window_gap;
    let mut slopes = Vec::with_capacity(probes.len());
    let mut max_abs = Vec::with_capacity(probes.len());
    for (p, phi) in probes.iter().enumerate() {
        let aphi = phi.map(f64::abs);
        let scale = values
            .iter()
            .map(|g| g.map(f64::abs).dot(&aphi))
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        slopes.push(fit(&residuals[p], &pairs, grid, window, scale));
        max_abs.push(residuals[p].iter().map(|v| v.abs()).fold(0.0, f64::max));
    }
    Ok(ResidualTable {
        pairs,
        residuals,
        driver_terms,
        slopes,
        threshold: 3.0 * (alpha - 0.05),
        max_abs,
    })
}

/// Support strictly inside the domain: a Dirichlet run whose boundary nodes
/// vanish at every time, so its zero extension is compactly supported.
fn compactly_supported(sol: &ControlledSolution) -> bool {
    let g = sol.u[0].grid;
    if g.is_periodic() {
        return false;
    }
    sol.u
        .iter()
        .all(|f| (0..g.len()).all(|k| !g.is_boundary(k) || f.values[k] == 0.0))
}

/// `F^♮_{st}(φ) = ⟨δF(u)_{st}, φ⟩ - Σ Δt ⟨F'(v)(W + f̄), φ⟩ - ⟨F(u_s), (B¹ + B²)*_{st} φ⟩`.
pub fn chain_defect(
    sol: &ControlledSolution,
    sc: &Scenario,
    f: &AdmissibleF,
    probes: &[ScalarField],
) -> Result<ResidualTable> {
    let driver = &sc.driver;
    if !driver.is_transport() {
        return Err(Error::Unsupported(
            "the chain rule check needs a transport driver (no zero-order part)".into(),
        ));
    }
    let range = 1.25 * sol.u.iter().map(|u| u.sup()).fold(0.0, f64::max);
    let mut f = f.clone();
    f.check_admissible(range.max(1e-12), compactly_supported(sol))?;
    let values: Vec<ScalarField> = sol.u.iter().map(|u| u.map(|z| f.f(z))).collect();
    let drift: Vec<ScalarField> = (0..sol.time.intervals())
        .map(|k| {
            let (v, w) = interval_parts(sc, &sol.u, k);
            let dt = sol.time.dt(k);
            v.zip(&w, |a, b| dt * f.df(a) * b)
        })
        .collect();
    weak_residuals(&sol.time, &values, &drift, driver, probes, driver.alpha)
}

/// Weak residual of `d(uv) = (v(Au + f) + u(Av + g)) dt + dB^{(2)}(uv)` with
/// `B^{(2)} = shift(B, 2)`. Symmetric in the two solutions bit for bit.
pub fn product_defect(
    u_sol: &ControlledSolution,
    v_sol: &ControlledSolution,
    scenario_u: &Scenario,
    scenario_v: &Scenario,
    driver: &DifferentialRoughDriver,
    probes: &[ScalarField],
) -> Result<ResidualTable> {
    if u_sol.time != v_sol.time || u_sol.time != driver.grid {
        return Err(Error::GridMismatch("product check needs one time grid".into()));
    }
    scenario_u.spatial.same_as(&scenario_v.spatial)?;
    driver.spatial.same_as(&scenario_u.spatial)?;
    if scenario_u.scheme.theta != scenario_v.scheme.theta {
        return Err(Error::GridMismatch("both runs must use the same theta".into()));
    }
    let b2 = shift(driver, 2.0)?;
    let values: Vec<ScalarField> = u_sol.u.iter().zip(&v_sol.u).map(|(a, b)| a.mul(b)).collect();
    let drift: Vec<ScalarField> = (0..u_sol.time.intervals())
        .map(|k| {
            let (uu, wu) = interval_parts(scenario_u, &u_sol.u, k);
            let (vv, wv) = interval_parts(scenario_v, &v_sol.u, k);
            let dt = u_sol.time.dt(k);
            let a = vv.mul(&wu);
            let b = uu.mul(&wv);
            a.zip(&b, |x, y| dt * (x + y))
        })
        .collect();
    weak_residuals(&u_sol.time, &values, &drift, &b2, probes, driver.alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpReport {
    pub p: f64,
    pub times: Vec<f64>,
    /// `|u_t|^p_{L^p}`.
    pub lp: Vec<f64>,
    /// Cumulative `-∫⟨p u|u|^{p-2}, Au⟩`.
    pub dissipation: Vec<f64>,
    /// `lp + dissipation`.
    pub energy: Vec<f64>,
    /// Weak form of the power rule with `B^{(p)} = shift(B, p)`.
    pub table: ResidualTable,
    /// Largest residual magnitude over probes and pairs.
    pub identity_residual: f64,
    /// `|u|^p_{L^p}` did not grow by more than `Δt` (relative) over any step.
    pub monotone: bool,
    pub worst_growth: f64,
}

/// `|u|^p` evolution and the weak form of `d|u|^p = p u|u|^{p-2}(Au + f) dt + dB^{(p)}|u|^p`.
pub fn lp_evolution(sol: &ControlledSolution, sc: &Scenario, p: f64) -> Result<LpReport> {
    if !(p >= 2.0) {
        return Err(Error::Parameter(format!("L^p evolution needs p >= 2, got {p}")));
    }
    if !sc.driver.geometric {
        return Err(Error::Geometricity);
    }
    let g = &sol.time;
    let n = g.len();
    let lp: Vec<f64> = sol.u.iter().map(|u| lp_integral(u, p)).collect();
    let mut dissipation = vec![0.0; n];
    for k in 0..n - 1 {
        dissipation[k + 1] = dissipation[k] + lp_dissipation(sc, &sol.u, k, p);
    }
    let energy = lp.iter().zip(&dissipation).map(|(a, b)| a + b).collect();
    let bp = shift(&sc.driver, p)?;
    let values: Vec<ScalarField> = sol.u.iter().map(|u| u.map(|z| z.abs().powf(p))).collect();
    let drift: Vec<ScalarField> = (0..g.intervals())
        .map(|k| {
            let (v, w) = interval_parts(sc, &sol.u, k);
            let dt = g.dt(k);
            v.zip(&w, |a, b| dt * p * a * a.abs().powf(p - 2.0) * b)
        })
        .collect();
    let table = weak_residuals(g, &values, &drift, &bp, &weak_probes(&sc.spatial), sc.alpha())?;
    let identity_residual = table.max_abs.iter().cloned().fold(0.0, f64::max);
    let mut worst = 0.0f64;
    let mut monotone = true;
    for k in 0..n - 1 {
        if lp[k] > 0.0 {
            let growth = lp[k + 1] / lp[k] - 1.0;
            worst = worst.max(growth);
            if growth > g.dt(k) {
                monotone = false;
            }
        } else if lp[k + 1] > 0.0 {
            worst = f64::INFINITY;
            monotone = false;
        }
    }
    Ok(LpReport {
        p,
        times: g.times().to_vec(),
        lp,
        dissipation,
        energy,
        table,
        identity_residual,
        monotone,
        worst_growth: worst,
    })
}

#[cfg(test)]
mod tests;
