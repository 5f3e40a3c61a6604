//! Moser-type moment sequences and the recursive bound they satisfy.

use crate::error::{Error, Result};
use crate::operators::ScalarField;
use crate::temporal::TimeGrid;

use super::{ControlledSolution, Scenario};

/// Number of moment levels after `n = 0`.
pub const MOSER_LEVELS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct MoserReport {
    pub epsilon: f64,
    /// Base exponents `ρ = ρ₀(1+ε)` (time) and `σ = σ₀(1+ε)` (space).
    pub rho: f64,
    pub sigma: f64,
    /// `κ_n = (1+ε)^n`.
    pub kappa: Vec<f64>,
    /// `‖u‖_{L^{ρκ_n}(L^{σκ_n})}` on normalized measures.
    pub norms: Vec<f64>,
    /// `ln Φ_n` with `Φ_n = ‖u‖^{κ_n} + 1`.
    pub ln_phi: Vec<f64>,
    pub phi: Vec<f64>,
    /// `(Φ_n - 1)^{1/κ_n}`, i.e. the mixed norm itself.
    pub sup_estimate: Vec<f64>,
    /// `Φ_n^{1/κ_n}`.
    pub phi_root: Vec<f64>,
    /// Smallest `γ` with `Φ_n <= γ τ^{n-1} Φ_{n-1}^{1+ε}` for all `n >= 1`.
    pub ln_gamma: f64,
    pub gamma: f64,
    pub tau: f64,
    pub ln_formula_bound: Vec<f64>,
    pub formula_bound: Vec<f64>,
    pub bound_holds: bool,
    /// `max |u|` over the trajectory.
    pub true_sup: f64,
}

/// `γ^{((1+ε)^n-1)/ε} τ^{((1+ε)^n-1)/ε² - n/ε} Φ₀^{(1+ε)^n}`.
pub fn moser_formula(gamma: f64, tau: f64, epsilon: f64, phi0: f64, n: usize) -> f64 {
    moser_formula_ln(gamma.ln(), tau.ln(), epsilon, phi0.ln(), n).exp()
}

/// Logarithm of [`moser_formula`], from logarithms of `γ`, `τ`, `Φ₀`.
pub fn moser_formula_ln(ln_gamma: f64, ln_tau: f64, epsilon: f64, ln_phi0: f64, n: usize) -> f64 {
    let k = (1.0 + epsilon).powi(n as i32);
    let a = (k - 1.0) / epsilon;
    let b = (k - 1.0) / (epsilon * epsilon) - n as f64 / epsilon;
    let mut out = k * ln_phi0;
    if a != 0.0 {
        out += a * ln_gamma;
    }
    if b != 0.0 {
        out += b * ln_tau;
    }
    out
}

fn ln_one_plus_pow(norm: f64, kappa: f64) -> f64 {
    if norm == 0.0 {
        return 0.0;
    }
    let x = kappa * norm.ln();
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Time weights of the trapezoid rule divided by the horizon.
fn time_weights(g: &TimeGrid) -> Vec<f64> {
    let n = g.len();
    let span = g.t(n - 1) - g.t(0);
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let h = 0.5 * g.dt(k) / span;
        w[k] += h;
        w[k + 1] += h;
    }
    w
}

/// `‖u‖_{L^a(L^b)}` with normalized time and space measures, scaled by the
/// global maximum to stay in range.
pub fn mixed_norm(u: &[ScalarField], g: &TimeGrid, a: f64, b: f64) -> f64 {
    let m = u.iter().map(|f| f.sup()).fold(0.0, f64::max);
    if m == 0.0 {
        return 0.0;
    }
    let w = time_weights(g);
    let mut outer = 0.0;
    for (f, wk) in u.iter().zip(&w) {
        let n = f.values.len() as f64;
        let inner: f64 = f.values.iter().map(|x| (x.abs() / m).powf(b)).sum::<f64>() / n;
        outer += wk * inner.powf(a / b);
    }
    m * outer.powf(1.0 / a)
}

/// Moments `Φ_n`, the fitted recursion constant and the closed-form bound.
///
/// Requires `1/r + d/(2q) < 1`, `q > max(1, d/2)` and
/// `1/r + d(1 + εq)/(2q) <= 1`; `q = ∞` is read as the limit.
pub fn moser_bound(sol: &ControlledSolution, sc: &Scenario, epsilon: f64) -> Result<MoserReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let d = sc.spatial.dim as f64;
    let (r, q) = match sc.exponents {
        Some(e) => e,
        None if sc.forcing.is_zero() => (f64::INFINITY, f64::INFINITY),
        None => {
            return Err(Error::Config(
                "a boundedness run with forcing needs exponents (r, q)".into(),
            ))
        }
    };
    if !(r > 1.0 && q > 1.0f64.max(d / 2.0)) {
        return Err(Error::Config(format!(
            "forcing exponents need r > 1 and q > max(1, d/2), got r = {r}, q = {q}"
        )));
    }
    if 1.0 / r + d / (2.0 * q) >= 1.0 {
        return Err(Error::Config(format!(
            "forcing exponents violate 1/r + d/(2q) < 1: {} >= 1",
            1.0 / r + d / (2.0 * q)
        )));
    }
    let eps_term = if q.is_finite() { d * (1.0 + epsilon * q) / (2.0 * q) } else { d * epsilon / 2.0 };
    if 1.0 / r + eps_term > 1.0 {
        return Err(Error::Config(format!(
            "epsilon = {epsilon} too large: 1/r + d(1 + εq)/(2q) = {} > 1",
            1.0 / r + eps_term
        )));
    }
    let conj = |x: f64| if x.is_finite() { 2.0 * x / (x - 1.0) } else { 2.0 };
    let rho = conj(r) * (1.0 + epsilon);
    let sigma = conj(q) * (1.0 + epsilon);
    let tau = 1.0 + epsilon;
    let mut kappa = Vec::new();
    let mut norms = Vec::new();
    let mut ln_phi = Vec::new();
    for n in 0..=MOSER_LEVELS {
        let k = (1.0 + epsilon).powi(n as i32);
        let norm = mixed_norm(&sol.u, &sol.time, rho * k, sigma * k);
        kappa.push(k);
        norms.push(norm);
        ln_phi.push(ln_one_plus_pow(norm, k));
    }
    let ln_gamma = (1..=MOSER_LEVELS)
        .map(|n| ln_phi[n] - (n as f64 - 1.0) * tau.ln() - (1.0 + epsilon) * ln_phi[n - 1])
        .fold(f64::NEG_INFINITY, f64::max);
    let ln_formula_bound: Vec<f64> = (0..=MOSER_LEVELS)
        .map(|n| moser_formula_ln(ln_gamma, tau.ln(), epsilon, ln_phi[0], n))
        .collect();
    let bound_holds = ln_phi
        .iter()
        .zip(&ln_formula_bound)
        .all(|(p, b)| *p <= b + 1e-9 * b.abs().max(1.0));
    Ok(MoserReport {
        epsilon,
        rho,
        sigma,
        phi: ln_phi.iter().map(|x| x.exp()).collect(),
        sup_estimate: norms.clone(),
        phi_root: ln_phi.iter().zip(&kappa).map(|(l, k)| (l / k).exp()).collect(),
        kappa,
        norms,
        ln_phi,
        gamma: ln_gamma.exp(),
        ln_gamma,
        tau,
        formula_bound: ln_formula_bound.iter().map(|x| x.exp()).collect(),
        ln_formula_bound,
        bound_holds,
        true_sup: sol.u.iter().map(|f| f.sup()).fold(0.0, f64::max),
    })
}
