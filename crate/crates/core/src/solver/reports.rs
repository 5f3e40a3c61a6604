//! Remainder scaling and energy reports for a computed trajectory.

use crate::driver::{DifferentialRoughDriver, SobolevProbes};
use crate::operators::ScalarField;
use crate::sewing::{default_tau, gronwall_verify, GronwallProblem, GronwallReport};
use crate::temporal::{holder_fit_pairs, ControlFn, TimeGrid, TwoParamField};

use super::{theta_state, ControlledSolution, Scenario};

/// Level-1 size below which a pair counts as `ω_B`-small.
pub const SMALLNESS: f64 = 0.1;

/// Constant in front of the energy bound, fixed once.
pub const ENERGY_CONSTANT: f64 = 3.0;

/// Fitted control of a driver on its dyadic pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DriverControl {
    /// `ω_B(s,t) = rate (t - s)`, the smallest such control dominating
    /// `|B¹|^{1/α}` and `|B²|^{1/2α}` on every dyadic pair.
    pub rate: f64,
    /// Largest dyadic gap (in steps) below which every level-1 norm is small.
    pub window_gap: usize,
    /// `ω_B` over the longest window pair.
    pub l: f64,
    /// Fraction of dyadic pairs inside the window.
    pub coverage: f64,
}

pub fn driver_control(d: &DifferentialRoughDriver, alpha: f64) -> DriverControl {
    let g = &d.grid;
    if d.is_zero() {
        return DriverControl {
            rate: 0.0,
            window_gap: g.intervals(),
            l: 0.0,
            coverage: 1.0,
        };
    }
    let probes = SobolevProbes::new(&d.spatial);
    let pairs = g.dyadic_pairs(g.full_window());
    let mut rate = 0.0f64;
    // largest level-1 norm per gap exponent
    let mut per_gap: Vec<(usize, f64)> = Vec::new();
    for &(i, j) in &pairs {
        let (n1, n2) = probes.levels(&d.pair(i, j));
        let len = g.t(j) - g.t(i);
        rate = rate.max(n1.powf(1.0 / alpha) / len).max(n2.powf(0.5 / alpha) / len);
        let gap = j - i;
        match per_gap.iter_mut().find(|(k, _)| *k == gap) {
            Some(e) => e.1 = e.1.max(n1),
            None => per_gap.push((gap, n1)),
        }
    }
    per_gap.sort_by_key(|e| e.0);
    let mut window_gap = 0;
    for (gap, n1) in &per_gap {
        if *n1 > SMALLNESS {
            break;
        }
        window_gap = *gap;
    }
    let inside: Vec<&(usize, usize)> = pairs.iter().filter(|(i, j)| j - i <= window_gap).collect();
    let longest = inside.iter().map(|(i, j)| g.t(*j) - g.t(*i)).fold(0.0, f64::max);
    DriverControl {
        rate,
        window_gap,
        l: rate * longest,
        coverage: inside.len() as f64 / pairs.len().max(1) as f64,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RemainderReport {
    /// Fitted exponent of `‖R^u_{st}‖` against `t - s`; `+∞` when `R^u` vanishes.
    pub slope_ru: f64,
    /// Fitted exponent of `‖u^♮_{st}‖`; `+∞` when `u^♮` vanishes to rounding.
    pub slope_sharp: f64,
    /// Smallest `C` with `‖u^♮‖ <= C(ω^{3α} sup‖u‖ + ω^α ∫|f|)` on the window pairs.
    pub c_measured: f64,
    pub control: DriverControl,
    pub points: usize,
}

/// Slope over `pairs` ignoring values below a rounding floor that grows with the gap.
fn fit_above_floor(table: &TwoParamField<ScalarField>, pairs: &[(usize, usize)], scale: f64) -> (f64, usize) {
    let floor = |i: usize, j: usize| 1e-12 * scale * (j - i) as f64;
    let kept: Vec<(usize, usize)> = pairs
        .iter()
        .copied()
        .filter(|&(i, j)| table.norm_at(i, j).is_some_and(|v| v > floor(i, j)))
        .collect();
    if kept.is_empty() {
        return (f64::INFINITY, 0);
    }
    let mut filtered = TwoParamField::empty(table.grid());
    for &(i, j) in &kept {
        filtered.set(i, j, table.norm_at(i, j).unwrap());
    }
    match holder_fit_pairs(&filtered, &kept) {
        Ok(fit) => (fit.exponent, kept.len()),
        Err(_) => (f64::NAN, kept.len()),
    }
}

/// Fits `‖R^u‖ ~ (t-s)^{2α}` and `‖u^♮‖ ~ (t-s)^{3α}` over the `ω_B`-small dyadic window.
pub fn remainder_report(sol: &ControlledSolution, driver: &DifferentialRoughDriver, alpha: f64) -> RemainderReport {
    let g = &sol.time;
    let control = driver_control(driver, alpha);
    let pairs: Vec<(usize, usize)> = g
        .dyadic_pairs(g.full_window())
        .into_iter()
        .filter(|(i, j)| j - i <= control.window_gap && sol.u_sharp.is_defined(*i, *j))
        .collect();
    let scale = sol.u.iter().map(|u| u.l2()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let (slope_ru, _) = fit_above_floor(&sol.ru, &pairs, scale);
    let (slope_sharp, points) = fit_above_floor(&sol.u_sharp, &pairs, scale);
    let cum_f = &sol.forcing_l2;
    let mut c = 0.0f64;
    for &(i, j) in &pairs {
        let v = sol.u_sharp.norm_at(i, j).unwrap_or(0.0);
        if v <= 1e-12 * scale * (j - i) as f64 {
            continue;
        }
        let w = control.rate * (g.t(j) - g.t(i));
        let sup_u = sol.u[i..=j].iter().map(|u| u.l2()).fold(0.0, f64::max);
        let rhs = w.powf(3.0 * alpha) * sup_u + w.powf(alpha) * (cum_f[j] - cum_f[i]);
        c = c.max(if rhs > 0.0 { v / rhs } else { f64::INFINITY });
    }
    RemainderReport {
        slope_ru,
        slope_sharp,
        c_measured: c,
        control,
        points,
    }
}

/// `∫|u|^p` with cell weights.
pub fn lp_integral(u: &ScalarField, p: f64) -> f64 {
    u.values.iter().map(|x| x.abs().powf(p)).sum::<f64>() * u.grid.cell()
}

/// `-Δt ⟨p v|v|^{p-2}, W⟩` on interval `k`, with the θ-state of the scheme.
pub fn lp_dissipation(sc: &Scenario, u: &[ScalarField], k: usize, p: f64) -> f64 {
    let (v, w) = theta_state(sc, u, k);
    let dv = v.map(|x| p * x * x.abs().powf(p - 2.0));
    -sc.time.dt(k) * dv.dot(&w)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyReport {
    pub times: Vec<f64>,
    /// `|u_t|²`.
    pub norm_sq: Vec<f64>,
    /// Cumulative dissipation `-2∫⟨u, Au⟩`.
    pub dissipation: Vec<f64>,
    /// `E_t = |u_t|² + dissipation`.
    pub energy: Vec<f64>,
    /// `∫_0^T |f|_{L²} dr`.
    pub forcing_norm: f64,
    pub omega_total: f64,
    pub tau: f64,
    pub bound: f64,
    pub satisfied: bool,
    /// `|u|` never grew by more than rounding over one step.
    pub l2_nonincreasing: bool,
    /// Largest relative one-step growth of `|u|²`.
    pub worst_growth: f64,
    pub monitor: Option<GronwallReport>,
}

/// Energy path and the exponential bound `C exp(ω_B(0,T)/τ) (|u_0|² + (∫|f|)²)`.
pub fn energy_report(sol: &ControlledSolution, sc: &Scenario) -> EnergyReport {
    let g = &sol.time;
    let n = g.len();
    let alpha = sc.alpha();
    let mut norm_sq = Vec::with_capacity(n);
    let mut dissipation = vec![0.0; n];
    for k in 0..n {
        norm_sq.push(lp_integral(&sol.u[k], 2.0));
        if k + 1 < n {
            dissipation[k + 1] = dissipation[k] + lp_dissipation(sc, &sol.u, k, 2.0);
        }
    }
    let energy: Vec<f64> = norm_sq.iter().zip(&dissipation).map(|(a, b)| a + b).collect();
    let mut worst = 0.0f64;
    for k in 0..n - 1 {
        if norm_sq[k] > 0.0 {
            worst = worst.max(norm_sq[k + 1] / norm_sq[k] - 1.0);
        } else if norm_sq[k + 1] > 0.0 {
            worst = f64::INFINITY;
        }
    }
    let control = &sol.remainder.control;
    let omega_total = control.rate * g.horizon();
    let tau = if control.l > 0.0 { default_tau(alpha, control.l) } else { f64::INFINITY };
    let growth = if omega_total > 0.0 { (omega_total / tau).exp() } else { 1.0 };
    let cum_f = sc.forcing.cumulative_l2(g);
    let forcing_norm = cum_f[n - 1];
    let bound = ENERGY_CONSTANT * growth * (norm_sq[0] + forcing_norm * forcing_norm);
    let e_max = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let monitor = energy_monitor(g, &energy, &sol.u, &cum_f, control, alpha);
    EnergyReport {
        times: g.times().to_vec(),
        norm_sq,
        dissipation,
        satisfied: e_max <= bound * (1.0 + 1e-12),
        energy,
        forcing_norm,
        omega_total,
        tau,
        bound,
        l2_nonincreasing: worst <= 1e-12,
        worst_growth: worst,
        monitor,
    }
}

/// Rough Gronwall check of the energy path on at most 129 nodes.
fn energy_monitor(
    g: &TimeGrid,
    energy: &[f64],
    u: &[ScalarField],
    cum_f: &[f64],
    control: &DriverControl,
    alpha: f64,
) -> Option<GronwallReport> {
    let n = g.len();
    let stride = n.div_ceil(128).max(1);
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if *idx.last()? != n - 1 {
        idx.push(n - 1);
    }
    let sub = TimeGrid::new(idx.iter().map(|&k| g.t(k)).collect()).ok()?;
    let sup_u = u.iter().map(|v| v.l2()).fold(0.0, f64::max);
    let times: Vec<f64> = sub.times().to_vec();
    let cum: Vec<f64> = idx.iter().map(|&k| 2.0 * sup_u * cum_f[k]).collect();
    let phi = ControlFn::new(move |s, t| {
        let at = |x: f64| match times.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => cum[i],
            Err(i) if i == 0 => cum[0],
            Err(i) if i >= times.len() => cum[times.len() - 1],
            Err(i) => {
                let w = (x - times[i - 1]) / (times[i] - times[i - 1]);
                cum[i - 1] + w * (cum[i] - cum[i - 1])
            }
        };
        at(t) - at(s)
    });
    let l = if control.l > 0.0 { control.l } else { 1.0 };
    let p = GronwallProblem::new(
        sub,
        idx.iter().map(|&k| energy[k]).collect(),
        ControlFn::linear(control.rate),
        alpha,
        l,
        phi,
    )
    .ok()?;
    Some(gronwall_verify(&p, 1e-10 * energy[0].abs().max(1e-300)))
}
