//! Sewing of coherent germs into integrals, and the rough Gronwall bound.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::temporal::{control_check, linear_fit, ControlFn, Payload, TimeGrid, TwoParamField};

type GermEval<P> = dyn Fn(f64, f64) -> P + Send + Sync;

/// A two-parameter germ `H_{st}`, evaluable at arbitrary time pairs so that
/// Riemann sums can be taken over refinements of the ambient grid.
#[derive(Clone)]
pub struct Germ<P> {
    pub grid: TimeGrid,
    h: Arc<GermEval<P>>,
    /// Declared coherence exponent `a > 1`.
    pub declared_a: f64,
    pub declared_control: ControlFn,
}

impl<P: Payload> Germ<P> {
    pub fn new(
        grid: TimeGrid,
        h: impl Fn(f64, f64) -> P + Send + Sync + 'static,
        declared_a: f64,
        declared_control: ControlFn,
    ) -> Self {
        Self {
            grid,
            h: Arc::new(h),
            declared_a,
            declared_control,
        }
    }

    pub fn eval(&self, s: f64, t: f64) -> P {
        (self.h)(s, t)
    }

    /// The germ tabulated on grid pairs.
    pub fn on_grid(&self) -> TwoParamField<P> {
        let g = &self.grid;
        TwoParamField::from_fn(g, |i, j| self.eval(g.t(i), g.t(j)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coherence {
    /// Smallest `C` with `‖δ̃H_{sθt}‖ <= C ω(s,t)^a` at the declared `a`.
    pub c_fit: f64,
    /// Fitted exponent of `max_θ ‖δ̃H_{sθt}‖` against `ω(s,t)`; infinite when
    /// the germ is exactly additive.
    pub a_fit: f64,
}

/// Measures the coherence of a germ on all grid triples.
pub fn coherence_defect<P: Payload>(germ: &Germ<P>) -> Coherence {
    let g = &germ.grid;
    let n = g.len();
    let table = germ.on_grid();
    let a = germ.declared_a;
    let mut c_fit = 0.0f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut max_defect = 0.0f64;
    let mut scale = 0.0f64;
    for (_, _, p) in table.pairs() {
        scale = scale.max(p.norm());
    }
    for i in 0..n {
        for j in i + 2..n {
            let w = germ.declared_control.on(g, i, j);
            let st = table.get(i, j).unwrap();
            let mut worst = 0.0f64;
            for k in i + 1..j {
                let d = st.sub(table.get(i, k).unwrap()).sub(table.get(k, j).unwrap()).norm();
                worst = worst.max(d);
            }
            max_defect = max_defect.max(worst);
            if w > 0.0 {
                c_fit = c_fit.max(worst / w.powf(a));
                if worst > 0.0 {
                    xs.push(w.ln());
                    ys.push(worst.ln());
                }
            }
        }
    }
    let additive = max_defect <= 1e-14 * scale.max(f64::MIN_POSITIVE);
    let a_fit = if additive || xs.len() < 2 {
        f64::INFINITY
    } else {
        linear_fit(&xs, &ys).0
    };
    Coherence {
        c_fit: if additive { 0.0 } else { c_fit },
        a_fit,
    }
}

#[derive(Clone, Debug)]
pub struct SewResult<P> {
    /// `I_t` on the grid, with `I_0 = 0`.
    pub integral: Vec<P>,
    /// `I♮_{st} = δI_{st} - H_{st}` on all grid pairs.
    pub remainder: TwoParamField<P>,
    pub converged: bool,
    pub levels_used: usize,
}

const SEW_RTOL: f64 = 1e-10;

/// Riemann sums of the germ along the grid refined `2^level` times, as a path.
fn riemann_path<P: Payload>(germ: &Germ<P>, level: u32) -> Vec<P> {
    let g = &germ.grid;
    let m = 1usize << level;
    let zero = germ.eval(g.t(0), g.t(1)).zero_like();
    let mut out = Vec::with_capacity(g.len());
    let mut acc = zero.clone();
    out.push(zero);
    for k in 0..g.intervals() {
        let (a, b) = (g.t(k), g.t(k + 1));
        let mut local = acc.zero_like();
        for r in 0..m {
            let s = a + (r as f64 / m as f64) * (b - a);
            let t = if r + 1 == m { b } else { a + ((r + 1) as f64 / m as f64) * (b - a) };
            local = local.add(&germ.eval(s, t));
        }
        acc = acc.add(&local);
        out.push(acc.clone());
    }
    out
}

fn path_distance<P: Payload>(a: &[P], b: &[P]) -> (f64, f64) {
    let mut diff = 0.0f64;
    let mut size = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        diff = diff.max(x.sub(y).norm());
        size = size.max(x.norm());
    }
    (diff, size)
}

/// Sews a germ: Riemann sums over dyadic refinements of the grid, accelerated
/// by Richardson extrapolation in the mesh exponents `k (a - 1)`.
///
/// Convergence is declared when two successive estimates agree to a relative
/// tolerance of `1e-10`. Germs whose measured defect exponent is `<= 1` are
/// rejected.
pub fn sew<P: Payload>(germ: &Germ<P>, refinement_levels: usize) -> Result<SewResult<P>> {
    let coh = coherence_defect(germ);
    if coh.a_fit <= 1.0 {
        return Err(Error::Coherence { measured: coh.a_fit });
    }
    let a = germ.declared_a;
    if !(a > 1.0) {
        return Err(Error::Parameter(format!("declared coherence exponent must exceed 1, got {a}")));
    }
    // rows[l][k] is the k-th extrapolation from level l
    let mut rows: Vec<Vec<Vec<P>>> = Vec::new();
    let mut best = riemann_path(germ, 0);
    let mut converged = false;
    let mut levels_used = 0;
    for level in 0..=refinement_levels {
        let raw = riemann_path(germ, level as u32);
        let mut row = vec![raw.clone()];
        if let Some(prev) = rows.last() {
            for k in 1..=level {
                let factor = 2f64.powf(k as f64 * (a - 1.0));
                let hi = &row[k - 1];
                let lo = &prev[k - 1];
                let next: Vec<P> = hi
                    .iter()
                    .zip(lo)
                    .map(|(h, l)| h.scale(factor).sub(l).scale(1.0 / (factor - 1.0)))
                    .collect();
                row.push(next);
            }
        }
        levels_used = level;
        if let Some(prev) = rows.last() {
            let (raw_diff, raw_size) = path_distance(&raw, &prev[0]);
            if raw_diff <= SEW_RTOL * raw_size.max(1e-300) || raw_diff == 0.0 {
                best = raw;
                converged = true;
                break;
            }
            let cur = row.last().unwrap();
            let old = prev.last().unwrap();
            let (diff, size) = path_distance(cur, old);
            best = cur.clone();
            if diff <= SEW_RTOL * size.max(1e-300) {
                converged = true;
                break;
            }
        } else {
            best = raw;
        }
        rows.push(row);
    }
    let g = &germ.grid;
    let remainder = TwoParamField::from_fn(g, |i, j| {
        best[j].sub(&best[i]).sub(&germ.eval(g.t(i), g.t(j)))
    });
    Ok(SewResult {
        integral: best,
        remainder,
        converged,
        levels_used,
    })
}

/// Data of the rough Gronwall lemma.
#[derive(Clone, Debug)]
pub struct GronwallProblem {
    pub grid: TimeGrid,
    pub g: Vec<f64>,
    pub omega: ControlFn,
    pub kappa: f64,
    pub l: f64,
    pub phi: ControlFn,
    pub tau: f64,
}

/// `τ_{κ,L} = ℓ / ln(1/(1 - ℓ^κ))` with `ℓ = min(L, 2^{-1/κ})`.
///
/// Splitting `[0,T]` into runs with `ω <= ℓ`, each run multiplies the sup by at
/// most `1/(1 - ω^κ)`. For `κ >= 1` the map `w ↦ -ln(1 - w^κ)/w` increases, so
/// the product is at most `exp(ω(0,T)/τ)`; on a grid this needs every step to
/// have `ω <= ℓ`. For `κ < 1` no `τ` works in general and the value is only a
/// monitor scale.
pub fn default_tau(kappa: f64, l: f64) -> f64 {
    let ell = l.min(0.5f64.powf(1.0 / kappa));
    ell / -(-ell.powf(kappa)).ln_1p()
}

impl GronwallProblem {
    /// Builds a problem with the default `τ_{κ,L}`; `phi` must be superadditive.
    pub fn new(grid: TimeGrid, g: Vec<f64>, omega: ControlFn, kappa: f64, l: f64, phi: ControlFn) -> Result<Self> {
        if g.len() != grid.len() {
            return Err(Error::InputShape("G must be sampled on the grid".into()));
        }
        if !(kappa > 0.0 && l > 0.0) {
            return Err(Error::Parameter(format!("kappa and L must be positive (got {kappa}, {l})")));
        }
        if !control_check(&phi, &grid, 1e-12).is_control {
            return Err(Error::Parameter("phi is not superadditive on the grid".into()));
        }
        Ok(Self {
            tau: default_tau(kappa, l),
            grid,
            g,
            omega,
            kappa,
            l,
            phi,
        })
    }
}

/// `exp(ω(0,T)/τ) [G_0 + sup_t |φ(0,t)|]`.
pub fn gronwall_bound(p: &GronwallProblem) -> f64 {
    let n = p.grid.len();
    let w = p.omega.on(&p.grid, 0, n - 1);
    let phi_sup = (1..n).map(|j| p.phi.on(&p.grid, 0, j).abs()).fold(0.0, f64::max);
    (w / p.tau).exp() * (p.g[0] + phi_sup)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GronwallReport {
    pub premise_holds: bool,
    pub conclusion_holds: bool,
    /// Pair with the largest premise violation (or smallest slack).
    pub worst_pair: Option<(usize, usize)>,
    pub worst_premise_excess: f64,
    pub sup_g: f64,
    pub bound: f64,
}

/// Checks the increment premise on all pairs with `ω(s,t) <= L`, and the
/// conclusion against [`gronwall_bound`]. Never fails: violations are reported.
pub fn gronwall_verify(p: &GronwallProblem, tol: f64) -> GronwallReport {
    let n = p.grid.len();
    let mut worst = None;
    let mut excess = f64::NEG_INFINITY;
    for i in 0..n {
        let mut sup = p.g[i];
        for j in i + 1..n {
            sup = sup.max(p.g[j]);
            let w = p.omega.on(&p.grid, i, j);
            if w > p.l {
                continue;
            }
            let rhs = sup * w.powf(p.kappa) + p.phi.on(&p.grid, i, j);
            let e = (p.g[j] - p.g[i]) - rhs;
            if e > excess {
                excess = e;
                worst = Some((i, j));
            }
        }
    }
    let sup_g = p.g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bound = gronwall_bound(p);
    GronwallReport {
        premise_holds: excess <= tol,
        conclusion_holds: sup_g <= bound + tol,
        worst_pair: worst,
        worst_premise_excess: excess,
        sup_g,
        bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::holder_fit;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::uniform(n, 1.0).unwrap()
    }

    #[test]
    fn additive_germ_is_exact() {
        let g = grid(16);
        let z = |t: f64| (3.0 * t).sin() + t * t;
        let germ = Germ::new(g.clone(), move |s, t| z(t) - z(s), 2.0, ControlFn::linear(1.0));
        let c = coherence_defect(&germ);
        assert_eq!(c.c_fit, 0.0);
        let r = sew(&germ, 6).unwrap();
        assert!(r.converged);
        assert_eq!(r.levels_used, 1);
        for (k, v) in r.integral.iter().enumerate() {
            assert!((v - (z(g.t(k)) - z(0.0))).abs() < 1e-13);
        }
        assert!(r.remainder.pairs().all(|(_, _, v)| v.abs() < 1e-13));
    }

    #[test]
    fn telescoping_germ() {
        let g = grid(12);
        let z = |t: f64| (2.0 * t).cos();
        let germ = Germ::new(
            g.clone(),
            move |s, t| z(s) * (z(t) - z(s)) + 0.5 * (z(t) - z(s)).powi(2),
            2.0,
            ControlFn::linear(1.0),
        );
        let r = sew(&germ, 8).unwrap();
        for (k, v) in r.integral.iter().enumerate() {
            assert!((v - 0.5 * (z(g.t(k)).powi(2) - z(0.0).powi(2))).abs() < 1e-12);
        }
        assert!(r.remainder.pairs().all(|(_, _, v)| v.abs() < 1e-12));
    }

    #[test]
    fn left_point_germ_on_identity_path() {
        let g = grid(16);
        let germ = Germ::new(g.clone(), |s, t| s * (t - s), 2.0, ControlFn::linear(1.0));
        let c = coherence_defect(&germ);
        assert!((c.a_fit - 2.0).abs() < 0.05, "a_fit = {}", c.a_fit);
        let r = sew(&germ, 10).unwrap();
        // quadrature oracle: ∫_0^1 r dr by composite Simpson
        let n = 1000;
        let h = 1.0 / n as f64;
        let simpson: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                w * k as f64 * h
            })
            .sum::<f64>()
            * h
            / 3.0;
        assert!((r.integral[16] - simpson).abs() < 1e-9);
        let fit = holder_fit(&r.remainder, g.full_window()).unwrap();
        assert!((fit.exponent - 2.0).abs() < 0.05);
    }

    #[test]
    fn incoherent_germ_rejected() {
        let g = grid(16);
        let germ = Germ::new(g, |s: f64, t: f64| (t - s).powf(0.8), 2.0, ControlFn::linear(1.0));
        let c = coherence_defect(&germ);
        assert!((c.a_fit - 0.8).abs() < 0.05, "a_fit = {}", c.a_fit);
        match sew(&germ, 4) {
            Err(Error::Coherence { measured }) => assert!(measured < 1.0),
            other => panic!("expected coherence error, got {other:?}"),
        }
    }

    #[test]
    fn smooth_sampled_germ_exponent() {
        let g = grid(32);
        let z = |t: f64| (4.0 * t).sin();
        let germ = Germ::new(g, move |s, t| z(s) * (z(t) - z(s)), 2.0, ControlFn::linear(1.0));
        let c = coherence_defect(&germ);
        assert!((c.a_fit - 2.0).abs() < 0.15, "a_fit = {}", c.a_fit);
    }

    #[test]
    fn gronwall_examples() {
        let g = grid(20);
        let flat = GronwallProblem::new(g.clone(), vec![1.0; 21], ControlFn::zero(), 1.0, 1.0, ControlFn::zero()).unwrap();
        assert_eq!(gronwall_bound(&flat), 1.0);
        let r = gronwall_verify(&flat, 1e-12);
        assert!(r.premise_holds && r.conclusion_holds);

        let tau = default_tau(1.0, 1.0);
        let p = GronwallProblem::new(
            g.clone(),
            vec![1.0; 21],
            ControlFn::linear(tau),
            1.0,
            1.0,
            ControlFn::zero(),
        )
        .unwrap();
        assert!((gronwall_bound(&p) - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn gronwall_exponential_instance() {
        let g = TimeGrid::uniform(400, 1.0).unwrap();
        let gv: Vec<f64> = g.times().iter().map(|t| t.exp()).collect();
        let p = GronwallProblem::new(g, gv, ControlFn::linear(1.0), 1.0, 1.0, ControlFn::zero()).unwrap();
        let r = gronwall_verify(&p, 1e-12);
        assert!(r.premise_holds, "{r:?}");
        assert!(r.conclusion_holds, "{r:?}");
    }

    #[test]
    fn gronwall_jump_violates_premise() {
        let g = grid(10);
        let mut gv = vec![1.0; 11];
        for v in gv.iter_mut().skip(6) {
            *v = 11.0;
        }
        let p = GronwallProblem::new(g, gv, ControlFn::linear(1e-3), 1.0, 1.0, ControlFn::linear(1e-3)).unwrap();
        let r = gronwall_verify(&p, 1e-12);
        assert!(!r.premise_holds);
        let (i, j) = r.worst_pair.unwrap();
        assert!(i < 6 && j >= 6);
    }
}
