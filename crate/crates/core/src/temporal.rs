//! Time grids, one- and two-parameter maps, the increment operators,
//! controls, discrete p-variation and roughness diagnostics.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Strictly increasing time nodes `0 = t_0 < ... < t_n = T`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Arc<[f64]>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InputShape("a time grid needs at least 2 points".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InputShape(format!("time grid must start at 0, got {}", times[0])));
        }
        if let Some(w) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InputShape(format!(
                "time grid not strictly increasing at index {}",
                w + 1
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InputShape("time grid contains non-finite values".into()));
        }
        Ok(Self { times: times.into() })
    }

    /// `n` equal intervals on `[0, horizon]`.
    pub fn uniform(intervals: usize, horizon: f64) -> Result<Self> {
        if intervals == 0 || !(horizon > 0.0) {
            return Err(Error::Parameter(format!(
                "uniform grid needs intervals >= 1 and horizon > 0 (got {intervals}, {horizon})"
            )));
        }
        let dt = horizon / intervals as f64;
        let mut times: Vec<f64> = (0..=intervals).map(|k| k as f64 * dt).collect();
        times[intervals] = horizon;
        Self::new(times)
    }

    /// Halves every interval `level` times; nested refinements agree bitwise.
    pub fn refine(&self, level: u32) -> Self {
        let mut g = self.clone();
        for _ in 0..level {
            g = g.subdivide(2);
        }
        g
    }

    /// Inserts `m - 1` equally spaced nodes inside every interval.
    pub fn subdivide(&self, m: usize) -> Self {
        let m = m.max(1);
        let mut times = Vec::with_capacity((self.len() - 1) * m + 1);
        for w in self.times.windows(2) {
            for k in 0..m {
                times.push(w[0] + (k as f64 / m as f64) * (w[1] - w[0]));
            }
        }
        times.push(self.horizon());
        Self { times: times.into() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn t(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Index of a node equal to `t` (exact match), if any.
    /// Index of the node equal to `t` up to rounding (`1e-9` of the local step).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&x| x < t);
        let tol = 1e-9 * self.max_dt();
        [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&i| i < self.times.len())
            .find(|&i| (self.times[i] - t).abs() <= tol)
    }

    pub fn max_dt(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Pairs `(i, i + 2^k)` with `i` a multiple of `2^k`, inside `window`.
    pub fn dyadic_pairs(&self, window: (usize, usize)) -> Vec<(usize, usize)> {
        let (lo, hi) = window;
        let mut out = Vec::new();
        let mut gap = 1;
        while gap <= hi - lo {
            let mut i = lo;
            while i + gap <= hi {
                out.push((i, i + gap));
                i += gap;
            }
            gap *= 2;
        }
        out
    }

    pub fn full_window(&self) -> (usize, usize) {
        (0, self.len() - 1)
    }
}

/// Vector-space payloads carried by one- and two-parameter maps.
pub trait Payload: Clone {
    fn zero_like(&self) -> Self;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn scale(&self, c: f64) -> Self;
    fn norm(&self) -> f64;
}

impl Payload for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn norm(&self) -> f64 {
        self.abs()
    }
}

/// Euclidean vectors (channels of a multidimensional path).
impl Payload for Vec<f64> {
    fn zero_like(&self) -> Self {
        vec![0.0; self.len()]
    }
    fn add(&self, other: &Self) -> Self {
        self.iter().zip(other).map(|(a, b)| a + b).collect()
    }
    fn sub(&self, other: &Self) -> Self {
        self.iter().zip(other).map(|(a, b)| a - b).collect()
    }
    fn scale(&self, c: f64) -> Self {
        self.iter().map(|a| a * c).collect()
    }
    fn norm(&self) -> f64 {
        self.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

/// Two-index family `g_{st}` on grid pairs `i <= j`.
///
/// Diagonal entries are implicitly zero; only pairs `i < j` that were set are
/// stored, and the rest are reported as missing by [`TwoParamField::get`].
#[derive(Clone)]
pub struct TwoParamField<P> {
    grid: TimeGrid,
    values: BTreeMap<(usize, usize), P>,
}

impl<P: fmt::Debug> fmt::Debug for TwoParamField<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TwoParamField")
            .field("points", &self.grid.len())
            .field("defined", &self.values.len())
            .finish()
    }
}

impl<P: Payload> TwoParamField<P> {
    pub fn empty(grid: &TimeGrid) -> Self {
        Self {
            grid: grid.clone(),
            values: BTreeMap::new(),
        }
    }

    /// Fills every pair `i < j` from `f(i, j)`.
    pub fn from_fn(grid: &TimeGrid, mut f: impl FnMut(usize, usize) -> P) -> Self {
        let mut out = Self::empty(grid);
        let n = grid.len();
        for i in 0..n {
            for j in i + 1..n {
                out.set(i, j, f(i, j));
            }
        }
        out
    }

    /// Fills the listed pairs from `f(i, j)`.
    pub fn from_pairs(grid: &TimeGrid, pairs: &[(usize, usize)], mut f: impl FnMut(usize, usize) -> P) -> Self {
        let mut out = Self::empty(grid);
        for &(i, j) in pairs {
            out.set(i, j, f(i, j));
        }
        out
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn set(&mut self, i: usize, j: usize, value: P) {
        assert!(i < j && j < self.grid.len(), "pair ({i},{j}) outside grid");
        self.values.insert((i, j), value);
    }

    /// Value on `(i, j)`; `None` if `i == j` or the pair is undefined.
    pub fn get(&self, i: usize, j: usize) -> Option<&P> {
        self.values.get(&(i, j))
    }

    pub fn is_defined(&self, i: usize, j: usize) -> bool {
        i == j || self.values.contains_key(&(i, j))
    }

    pub fn norm_at(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(0.0);
        }
        self.get(i, j).map(Payload::norm)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Defined pairs in lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, &P)> + '_ {
        self.values.iter().map(|(&(i, j), p)| (i, j, p))
    }

    pub fn map<Q: Payload>(&self, mut f: impl FnMut(&P) -> Q) -> TwoParamField<Q> {
        TwoParamField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|(k, v)| (*k, f(v))).collect(),
        }
    }

    /// Scalar field of payload norms.
    pub fn norms(&self) -> TwoParamField<f64> {
        self.map(Payload::norm)
    }
}

/// `δg_{st} = g_t - g_s` on all grid pairs.
pub fn delta1<P: Payload>(grid: &TimeGrid, path: &[P]) -> Result<TwoParamField<P>> {
    if path.len() != grid.len() {
        return Err(Error::InputShape(format!(
            "path has {} samples but grid has {} points",
            path.len(),
            grid.len()
        )));
    }
    Ok(TwoParamField::from_fn(grid, |i, j| path[j].sub(&path[i])))
}

/// Three-index map on grid triples `i < k < j`.
#[derive(Clone, Debug)]
pub struct TripleField<P> {
    n: usize,
    values: Vec<(usize, usize, usize, P)>,
}

impl<P> TripleField<P> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize, usize, P)> {
        self.values.iter()
    }

    pub fn get(&self, i: usize, k: usize, j: usize) -> Option<&P> {
        if !(i < k && k < j && j < self.n) {
            return None;
        }
        self.values
            .binary_search_by(|(a, b, c, _)| (*a, *c, *b).cmp(&(i, j, k)))
            .ok()
            .map(|idx| &self.values[idx].3)
    }
}

/// `δ̃g_{sθt} = g_{st} - g_{sθ} - g_{θt}` on all strict triples.
///
/// Degenerate triples (`θ = s` or `θ = t`) vanish identically and are not stored.
pub fn delta2<P: Payload>(g: &TwoParamField<P>) -> Result<TripleField<P>> {
    let n = g.grid().len();
    let mut values = Vec::new();
    for i in 0..n {
        for j in i + 2..n {
            for k in i + 1..j {
                let (st, sk, kt) = match (g.get(i, j), g.get(i, k), g.get(k, j)) {
                    (Some(a), Some(b), Some(c)) => (a, b, c),
                    _ => {
                        return Err(Error::InputShape(format!(
                            "two-parameter field undefined on a pair of triple ({i},{k},{j})"
                        )))
                    }
                };
                values.push((i, k, j, st.sub(sk).sub(kt)));
            }
        }
    }
    Ok(TripleField { n, values })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

fn check_window(grid: &TimeGrid, window: (usize, usize)) -> Result<()> {
    if window.0 > window.1 || window.1 >= grid.len() {
        return Err(Error::Parameter(format!(
            "window {:?} not inside grid of {} points",
            window,
            grid.len()
        )));
    }
    Ok(())
}

/// Largest `Σ ‖g_{t_k t_{k+1}}‖^q` over grid partitions of `[s, t]`, for
/// every `t` in the window with `s` fixed at the window start.
fn partition_sup(norm: impl Fn(usize, usize) -> f64, lo: usize, hi: usize, q: f64) -> Vec<f64> {
    let mut best = vec![0.0f64; hi - lo + 1];
    for j in lo + 1..=hi {
        let mut b = 0.0f64;
        for i in lo..j {
            let v = best[i - lo] + norm(i, j).powf(q);
            if v > b {
                b = v;
            }
        }
        best[j - lo] = b;
    }
    best
}

fn pair_norm<P: Payload>(g: &TwoParamField<P>, i: usize, j: usize) -> f64 {
    // undefined pairs contribute nothing
    g.norm_at(i, j).unwrap_or(0.0)
}

/// Discrete `q`-variation norm (`q = 1/alpha`) of `g` over `window`,
/// maximised exactly over all grid partitions by dynamic programming.
pub fn pvar_norm<P: Payload>(g: &TwoParamField<P>, alpha: f64, window: (usize, usize)) -> Result<f64> {
    check_alpha(alpha)?;
    check_window(g.grid(), window)?;
    let (lo, hi) = window;
    if lo == hi {
        return Ok(0.0);
    }
    let q = 1.0 / alpha;
    let best = partition_sup(|i, j| pair_norm(g, i, j), lo, hi, q);
    Ok(best[hi - lo].powf(alpha))
}

/// The minimal control `ω(s,t) = ‖g‖_{q-var,[s,t]}^q` tabulated on every pair.
pub fn pvar_control<P: Payload>(g: &TwoParamField<P>, alpha: f64) -> Result<ControlFn> {
    check_alpha(alpha)?;
    let grid = g.grid().clone();
    let n = grid.len();
    let q = 1.0 / alpha;
    let norms: Vec<f64> = {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                v[i * n + j] = pair_norm(g, i, j);
            }
        }
        v
    };
    let mut table = vec![0.0; n * n];
    for lo in 0..n {
        let best = partition_sup(|i, j| norms[i * n + j], lo, n - 1, q);
        for (off, b) in best.into_iter().enumerate() {
            table[lo * n + lo + off] = b;
        }
    }
    Ok(ControlFn::from_table(&grid, table))
}

type ControlEval = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A nonnegative map `ω(s, t)` on ordered time pairs.
///
/// Analytic controls are closures over time; fitted controls are tables on
/// grid pairs (evaluation off the grid is not defined and returns NaN).
#[derive(Clone)]
pub struct ControlFn {
    eval: Arc<ControlEval>,
}

impl fmt::Debug for ControlFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ControlFn")
    }
}

impl ControlFn {
    pub fn new(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { eval: Arc::new(f) }
    }

    /// `ω(s,t) = c (t - s)`.
    pub fn linear(c: f64) -> Self {
        Self::new(move |s, t| c * (t - s))
    }

    pub fn zero() -> Self {
        Self::new(|_, _| 0.0)
    }

    /// Table indexed `i * n + j` over the nodes of `grid`.
    pub fn from_table(grid: &TimeGrid, table: Vec<f64>) -> Self {
        let grid = grid.clone();
        let n = grid.len();
        assert_eq!(table.len(), n * n);
        Self::new(move |s, t| match (grid.index_of(s), grid.index_of(t)) {
            (Some(i), Some(j)) if i <= j => {
                if i == j {
                    0.0
                } else {
                    table[i * n + j]
                }
            }
            _ => f64::NAN,
        })
    }

    pub fn eval(&self, s: f64, t: f64) -> f64 {
        if s == t {
            return 0.0;
        }
        (self.eval)(s, t)
    }

    pub fn on(&self, grid: &TimeGrid, i: usize, j: usize) -> f64 {
        self.eval(grid.t(i), grid.t(j))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlReport {
    pub is_control: bool,
    pub worst_triple: Option<(usize, usize, usize)>,
    /// Largest `ω(s,θ) + ω(θ,t) - ω(s,t)` over triples (positive means violated).
    pub defect: f64,
}

/// Checks superadditivity and nonnegativity of `omega` on all grid triples.
pub fn control_check(omega: &ControlFn, grid: &TimeGrid, tol: f64) -> ControlReport {
    let n = grid.len();
    let mut w = vec![0.0; n * n];
    let mut negative = false;
    for i in 0..n {
        for j in i + 1..n {
            let v = omega.on(grid, i, j);
            if !(v >= -tol) {
                negative = true;
            }
            w[i * n + j] = v;
        }
    }
    let mut worst = None;
    let mut defect = f64::NEG_INFINITY;
    for i in 0..n {
        for j in i + 2..n {
            for k in i + 1..j {
                let d = w[i * n + k] + w[k * n + j] - w[i * n + j];
                if d > defect {
                    defect = d;
                    worst = Some((i, k, j));
                }
            }
        }
    }
    if worst.is_none() {
        defect = 0.0;
    }
    ControlReport {
        is_control: !negative && defect <= tol,
        worst_triple: worst,
        defect,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HolderFit {
    pub exponent: f64,
    pub constant: f64,
    pub r2: f64,
    pub points: usize,
}

/// Ordinary least squares of `y` on `x`; returns (slope, intercept, r²).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}

/// Log-log fit of `‖g_{st}‖` against `t - s` over the dyadic pairs of `window`.
///
/// Pairs with zero (or undefined) payload are skipped.
pub fn holder_fit<P: Payload>(g: &TwoParamField<P>, window: (usize, usize)) -> Result<HolderFit> {
    check_window(g.grid(), window)?;
    let grid = g.grid();
    let pairs: Vec<(usize, usize)> = grid.dyadic_pairs(window);
    holder_fit_pairs(g, &pairs)
}

/// As [`holder_fit`] over an explicit pair list.
pub fn holder_fit_pairs<P: Payload>(g: &TwoParamField<P>, pairs: &[(usize, usize)]) -> Result<HolderFit> {
    let grid = g.grid();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut gaps: Vec<f64> = Vec::new();
    for &(i, j) in pairs {
        if let Some(v) = g.norm_at(i, j) {
            if v > 0.0 && v.is_finite() {
                let gap = grid.t(j) - grid.t(i);
                xs.push(gap.ln());
                ys.push(v.ln());
                if !gaps.iter().any(|g| ((g - gap) / gap).abs() < 1e-9) {
                    gaps.push(gap);
                }
            }
        }
    }
    if gaps.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "exponent fit needs at least 4 distinct gap sizes, found {}",
            gaps.len()
        )));
    }
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    Ok(HolderFit {
        exponent: slope,
        constant: intercept.exp(),
        r2,
        points: xs.len(),
    })
}

/// Ratios `|Z_{st}| / ω_Z(s,t)^{2α}` for `s = t - 2^k Δ`, shrinking towards `t`.
///
/// `ω_Z(s,t) = C (t - s)` with `C` the smallest constant such that
/// `|Z_{st}| <= ω_Z(s,t)^α` on every grid pair.
pub fn roughness_ratio(grid: &TimeGrid, path: &[f64], alpha: f64, t_index: usize) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if path.len() != grid.len() {
        return Err(Error::InputShape("path length differs from grid length".into()));
    }
    if t_index == 0 || t_index >= grid.len() {
        return Err(Error::InsufficientData(format!(
            "t index {t_index} has no left neighbours"
        )));
    }
    let n = grid.len();
    let mut c = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let v = (path[j] - path[i]).abs().powf(1.0 / alpha) / (grid.t(j) - grid.t(i));
            c = c.max(v);
        }
    }
    let mut out = Vec::new();
    let mut gap = 1usize;
    let mut offsets = Vec::new();
    while gap <= t_index {
        offsets.push(gap);
        gap *= 2;
    }
    for &g in offsets.iter().rev() {
        let s = t_index - g;
        let inc = (path[t_index] - path[s]).abs();
        let w = c * (grid.t(t_index) - grid.t(s));
        out.push(if inc == 0.0 { 0.0 } else { inc / w.powf(2.0 * alpha) });
    }
    Ok(out)
}
