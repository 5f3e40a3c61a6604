//! Differential rough drivers: two-level coefficient families, Chen
//! composition, canonical and rough-path lifts, brackets, shifted and
//! tensorized drivers, the probe suite and the driver distance.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Read;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::operators::{
    apply_first, apply_second, compose_first, d1, d2, FirstOrderOp, ScalarField, SecondOrderOp, SpatialGrid,
};
use crate::temporal::{pvar_norm, Payload, TimeGrid, TwoParamField};

/// An `m`-channel rough path stored on adjacent intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarRoughPath {
    pub grid: TimeGrid,
    pub m: usize,
    /// `z1[k][μ]` on interval `k`.
    pub z1: Vec<Vec<f64>>,
    /// `z2[k][μ m + ν]` on interval `k`.
    pub z2: Vec<Vec<f64>>,
}

impl ScalarRoughPath {
    pub fn new(grid: TimeGrid, z1: Vec<Vec<f64>>, z2: Vec<Vec<f64>>) -> Result<Self> {
        let n = grid.intervals();
        if z1.len() != n || z2.len() != n {
            return Err(Error::InputShape(format!("need {n} intervals of levels, got {} and {}", z1.len(), z2.len())));
        }
        let m = z1.first().map_or(0, |v| v.len());
        if m == 0 || z1.iter().any(|v| v.len() != m) || z2.iter().any(|v| v.len() != m * m) {
            return Err(Error::InputShape("inconsistent channel counts in rough path levels".into()));
        }
        Ok(Self { grid, m, z1, z2 })
    }

    /// The zero path with `m` channels.
    pub fn zero(grid: TimeGrid, m: usize) -> Self {
        let n = grid.intervals();
        Self {
            grid,
            m,
            z1: vec![vec![0.0; m]; n],
            z2: vec![vec![0.0; m * m]; n],
        }
    }

    /// Itô lift of a path sampled on the grid: `Z2 = ½ δW⊗δW - ½ Δt I` per interval.
    pub fn ito(grid: TimeGrid, values: &[Vec<f64>]) -> Result<Self> {
        let (z1, mut z2) = pl_increments(&grid, values)?;
        let m = z1[0].len();
        for (k, z) in z2.iter_mut().enumerate() {
            let dt = grid.dt(k);
            for mu in 0..m {
                z[mu * m + mu] -= 0.5 * dt;
            }
        }
        Self::new(grid, z1, z2)
    }

    /// Chen product of consecutive levels.
    pub fn chen(m: usize, a: (&[f64], &[f64]), b: (&[f64], &[f64])) -> (Vec<f64>, Vec<f64>) {
        let z1 = a.0.iter().zip(b.0).map(|(x, y)| x + y).collect();
        let mut z2 = vec![0.0; m * m];
        for mu in 0..m {
            for nu in 0..m {
                z2[mu * m + nu] = a.1[mu * m + nu] + b.1[mu * m + nu] + a.0[mu] * b.0[nu];
            }
        }
        (z1, z2)
    }

    /// Levels on `(i, j)` folded left to right over adjacent intervals.
    pub fn pair(&self, i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
        assert!(i < j && j < self.grid.len(), "pair ({i}, {j}) out of range");
        let mut acc = (self.z1[i].clone(), self.z2[i].clone());
        for k in i + 1..j {
            acc = Self::chen(self.m, (&acc.0, &acc.1), (&self.z1[k], &self.z2[k]));
        }
        acc
    }

    /// Levels on `(i, j)` composed through the split point `k`.
    pub fn pair_via(&self, i: usize, k: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
        let a = self.pair(i, k);
        let b = self.pair(k, j);
        Self::chen(self.m, (&a.0, &a.1), (&b.0, &b.1))
    }

    /// Largest discrepancy between reconstructions of `(i, j)` through different split points.
    pub fn chen_associativity_defect(&self) -> f64 {
        let n = self.grid.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 2..n {
                let direct = self.pair(i, j);
                let scale = 1.0 + direct.0.iter().chain(&direct.1).fold(0.0f64, |m, v| m.max(v.abs()));
                for k in i + 1..j {
                    let via = self.pair_via(i, k, j);
                    for (x, y) in direct.0.iter().chain(&direct.1).zip(via.0.iter().chain(&via.1)) {
                        worst = worst.max((x - y).abs() / scale);
                    }
                }
            }
        }
        worst
    }

    /// `sym(Z2) = ½ Z1⊗Z1` on every interval, to `tol` relative to `1 + |Z1|²`.
    pub fn is_geometric(&self, tol: f64) -> bool {
        let m = self.m;
        self.z1.iter().zip(&self.z2).all(|(a, b)| {
            let scale = 1.0 + a.iter().map(|v| v * v).sum::<f64>();
            (0..m).all(|mu| {
                (0..m).all(|nu| {
                    let sym = 0.5 * (b[mu * m + nu] + b[nu * m + mu]);
                    (sym - 0.5 * a[mu] * a[nu]).abs() <= tol * scale
                })
            })
        })
    }
}

/// Increments and piecewise-linear level 2 per interval of values sampled on the grid.
pub(crate) fn pl_increments(grid: &TimeGrid, values: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if values.len() != grid.len() {
        return Err(Error::InputShape(format!("{} samples for {} grid nodes", values.len(), grid.len())));
    }
    let m = values[0].len();
    let mut z1 = Vec::with_capacity(grid.intervals());
    let mut z2 = Vec::with_capacity(grid.intervals());
    for w in values.windows(2) {
        let d: Vec<f64> = (0..m).map(|mu| w[1][mu] - w[0][mu]).collect();
        let mut q = vec![0.0; m * m];
        for mu in 0..m {
            for nu in 0..m {
                q[mu * m + nu] = 0.5 * d[mu] * d[nu];
            }
        }
        z1.push(d);
        z2.push(q);
    }
    Ok((z1, z2))
}

/// Coefficients of one driver increment.
///
/// `B¹ = x^i ∂_i + x0`, and
/// `B² = xx^{ij} ∂_{ij} + (l^i + x0 x^i) ∂_i + l0 + ½ x0²`.
/// Geometric drivers have `xx = ½ x⊗x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelCoefficients {
    pub x: Vec<ScalarField>,
    pub x0: ScalarField,
    pub xx: Vec<ScalarField>,
    pub l: Vec<ScalarField>,
    pub l0: ScalarField,
}

fn directional(grid: &SpatialGrid, v: &[ScalarField], f: &ScalarField) -> ScalarField {
    let mut out = ScalarField::zeros(*grid);
    for (a, va) in v.iter().enumerate() {
        let df = d1(grid, &f.values, a);
        for k in 0..out.values.len() {
            out.values[k] += va.values[k] * df[k];
        }
    }
    out
}

fn outer_half(x: &[ScalarField]) -> Vec<ScalarField> {
    let d = x.len();
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            out.push(x[i].zip(&x[j], |a, b| 0.5 * a * b));
        }
    }
    out
}

impl LevelCoefficients {
    pub fn zero(grid: SpatialGrid) -> Self {
        let d = grid.dim;
        let z = ScalarField::zeros(grid);
        Self {
            x: vec![z.clone(); d],
            x0: z.clone(),
            xx: vec![z.clone(); d * d],
            l: vec![z.clone(); d],
            l0: z,
        }
    }

    pub fn grid(&self) -> SpatialGrid {
        self.x0.grid
    }

    /// Geometric increment: `xx = ½ x⊗x`.
    pub fn geometric(x: Vec<ScalarField>, x0: ScalarField, l: Vec<ScalarField>, l0: ScalarField) -> Self {
        let xx = outer_half(&x);
        Self { x, x0, xx, l, l0 }
    }

    pub fn level1(&self) -> FirstOrderOp {
        FirstOrderOp {
            sigma: self.x.clone(),
            c: self.x0.clone(),
        }
    }

    pub fn level2(&self) -> SecondOrderOp {
        let y = self
            .l
            .iter()
            .zip(&self.x)
            .map(|(l, x)| l.zip(&x.zip(&self.x0, |a, b| a * b), |p, q| p + q))
            .collect();
        let z = self.l0.zip(&self.x0, |l, x0| l + 0.5 * x0 * x0);
        SecondOrderOp {
            xx: self.xx.clone(),
            y,
            z,
        }
    }

    /// Coefficients whose levels are the given operators.
    pub fn from_levels(b1: &FirstOrderOp, b2: &SecondOrderOp) -> Self {
        let x = b1.sigma.clone();
        let x0 = b1.c.clone();
        let l = b2
            .y
            .iter()
            .zip(&x)
            .map(|(y, xi)| y.zip(&xi.zip(&x0, |a, b| a * b), |p, q| p - q))
            .collect();
        let l0 = b2.z.zip(&x0, |z, c| z - 0.5 * c * c);
        Self {
            x,
            x0,
            xx: b2.xx.clone(),
            l,
            l0,
        }
    }

    /// Chen composition: `self` on `(s, θ)`, `next` on `(θ, t)`.
    pub fn chen(&self, next: &LevelCoefficients) -> LevelCoefficients {
        let g = self.grid();
        let d = g.dim;
        let add = |a: &ScalarField, b: &ScalarField| a.zip(b, |p, q| p + q);
        let x: Vec<_> = self.x.iter().zip(&next.x).map(|(a, b)| add(a, b)).collect();
        let x0 = add(&self.x0, &next.x0);
        let mut xx = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let mut f = add(&self.xx[i * d + j], &next.xx[i * d + j]);
                for k in 0..f.values.len() {
                    f.values[k] += 0.5
                        * (next.x[i].values[k] * self.x[j].values[k] + next.x[j].values[k] * self.x[i].values[k]);
                }
                xx.push(f);
            }
        }
        let l = (0..d)
            .map(|i| add(&add(&self.l[i], &next.l[i]), &directional(&g, &next.x, &self.x[i])))
            .collect();
        let l0 = add(&add(&self.l0, &next.l0), &directional(&g, &next.x, &self.x0));
        LevelCoefficients { x, x0, xx, l, l0 }
    }

    pub fn sub(&self, other: &LevelCoefficients) -> LevelCoefficients {
        let sub = |a: &ScalarField, b: &ScalarField| a.zip(b, |p, q| p - q);
        let subv = |a: &[ScalarField], b: &[ScalarField]| a.iter().zip(b).map(|(p, q)| sub(p, q)).collect();
        LevelCoefficients {
            x: subv(&self.x, &other.x),
            x0: sub(&self.x0, &other.x0),
            xx: subv(&self.xx, &other.xx),
            l: subv(&self.l, &other.l),
            l0: sub(&self.l0, &other.l0),
        }
    }

    fn scale_zero_order(&self, p: f64) -> LevelCoefficients {
        let mut out = self.clone();
        out.x0 = self.x0.scale(p);
        out.l0 = self.l0.scale(p);
        out
    }

    /// Max node-wise size of the first-order coefficients `l, l0`.
    pub fn l_sup(&self) -> f64 {
        self.l.iter().map(|f| f.sup()).fold(self.l0.sup(), f64::max)
    }
}

type DirectLevels = dyn Fn(usize, usize) -> LevelCoefficients + Send + Sync;

/// A two-level differential driver on a time grid.
///
/// Increments are stored on adjacent intervals; other pairs are rebuilt by
/// Chen composition along aligned dyadic blocks and cached.
pub struct DifferentialRoughDriver {
    pub grid: TimeGrid,
    pub spatial: SpatialGrid,
    intervals: Vec<Arc<LevelCoefficients>>,
    pub alpha: f64,
    pub geometric: bool,
    cache: Mutex<HashMap<(usize, usize), Arc<LevelCoefficients>>>,
    /// Independent computation of the levels on a pair, when one exists.
    direct: Option<Arc<DirectLevels>>,
    /// Channel data for rough-path drivers, kept for the Itô-type diagnostics.
    pub channels: Option<Arc<RoughPathData>>,
}

/// Inputs of a rough-path-driven driver.
#[derive(Clone, Debug)]
pub struct RoughPathData {
    pub path: ScalarRoughPath,
    pub sigma: Vec<Vec<ScalarField>>,
    pub rho: Vec<ScalarField>,
}

impl std::fmt::Debug for DifferentialRoughDriver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DifferentialRoughDriver")
            .field("intervals", &self.intervals.len())
            .field("spatial", &self.spatial)
            .field("alpha", &self.alpha)
            .field("geometric", &self.geometric)
            .finish()
    }
}

impl Clone for DifferentialRoughDriver {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            spatial: self.spatial,
            intervals: self.intervals.clone(),
            alpha: self.alpha,
            geometric: self.geometric,
            cache: Mutex::new(HashMap::new()),
            direct: self.direct.clone(),
            channels: self.channels.clone(),
        }
    }
}

impl DifferentialRoughDriver {
    pub fn from_intervals(
        grid: TimeGrid,
        spatial: SpatialGrid,
        intervals: Vec<LevelCoefficients>,
        alpha: f64,
        geometric: bool,
    ) -> Result<Self> {
        if intervals.len() != grid.intervals() {
            return Err(Error::InputShape(format!(
                "driver needs {} interval increments, got {}",
                grid.intervals(),
                intervals.len()
            )));
        }
        for c in &intervals {
            c.grid().same_as(&spatial)?;
        }
        if !(alpha > 1.0 / 3.0 && alpha <= 1.0) {
            return Err(Error::Parameter(format!("driver regularity must lie in (1/3, 1], got {alpha}")));
        }
        Ok(Self {
            grid,
            spatial,
            intervals: intervals.into_iter().map(Arc::new).collect(),
            alpha,
            geometric,
            cache: Mutex::new(HashMap::new()),
            direct: None,
            channels: None,
        })
    }

    pub fn zero(grid: TimeGrid, spatial: SpatialGrid, alpha: f64) -> Result<Self> {
        let n = grid.intervals();
        Self::from_intervals(grid, spatial, vec![LevelCoefficients::zero(spatial); n], alpha, true)
    }

    /// Attaches an independent level computation used by [`chen_defect`].
    pub fn with_direct(mut self, f: impl Fn(usize, usize) -> LevelCoefficients + Send + Sync + 'static) -> Self {
        self.direct = Some(Arc::new(f));
        self
    }

    pub fn has_direct(&self) -> bool {
        self.direct.is_some()
    }

    /// Replaces the stored increment of one interval, keeping any direct source.
    pub fn with_interval(&self, k: usize, c: LevelCoefficients) -> Self {
        let mut out = self.clone();
        out.intervals[k] = Arc::new(c);
        out
    }

    pub fn interval(&self, k: usize) -> &LevelCoefficients {
        &self.intervals[k]
    }

    /// Levels on the grid pair `(i, j)`, `i < j`.
    pub fn pair(&self, i: usize, j: usize) -> Arc<LevelCoefficients> {
        assert!(i < j && j < self.grid.len(), "pair ({i}, {j}) out of range");
        if j == i + 1 {
            return self.intervals[i].clone();
        }
        if let Some(c) = self.cache.lock().get(&(i, j)) {
            return c.clone();
        }
        let gap = j - i;
        let dyadic = gap.is_power_of_two() && i % gap == 0;
        let value = if dyadic {
            let mid = i + gap / 2;
            Arc::new(self.pair(i, mid).chen(&self.pair(mid, j)))
        } else {
            let mut k = i;
            let mut acc: Option<LevelCoefficients> = None;
            while k < j {
                let mut g = 1usize;
                while k % (2 * g) == 0 && k + 2 * g <= j {
                    g *= 2;
                }
                let block = self.pair(k, k + g);
                acc = Some(match acc {
                    None => (*block).clone(),
                    Some(a) => a.chen(&block),
                });
                k += g;
            }
            Arc::new(acc.unwrap())
        };
        // only aligned dyadic blocks are kept, so memory stays linear in the grid
        if dyadic {
            self.cache.lock().insert((i, j), value.clone());
        }
        value
    }

    /// Left-to-right fold over adjacent intervals, bypassing the cache.
    pub fn pair_sequential(&self, i: usize, j: usize) -> LevelCoefficients {
        let mut acc = (*self.intervals[i]).clone();
        for k in i + 1..j {
            acc = acc.chen(&self.intervals[k]);
        }
        acc
    }

    /// Levels on `(i, j)` from the direct source on non-adjacent pairs, stored increments otherwise.
    pub fn pair_direct(&self, i: usize, j: usize) -> LevelCoefficients {
        match (&self.direct, j == i + 1) {
            (Some(f), false) => f(i, j),
            _ => (*self.pair(i, j)).clone(),
        }
    }

    pub fn level1_op(&self, i: usize, j: usize) -> FirstOrderOp {
        self.pair(i, j).level1()
    }

    pub fn level2_op(&self, i: usize, j: usize) -> SecondOrderOp {
        self.pair(i, j).level2()
    }

    pub fn is_zero(&self) -> bool {
        self.intervals.iter().all(|c| **c == LevelCoefficients::zero(self.spatial))
    }

    /// True when every zero-order coefficient vanishes (pure transport noise).
    pub fn is_transport(&self) -> bool {
        self.intervals
            .iter()
            .all(|c| c.x0.values.iter().all(|&v| v == 0.0) && c.l0.values.iter().all(|&v| v == 0.0))
    }
}

/// A time-dependent first-order operator `t ↦ X_t`.
pub trait CoefficientPath: Send + Sync {
    fn spatial(&self) -> SpatialGrid;
    fn eval(&self, t: f64) -> FirstOrderOp;
    /// Time nodes of the underlying samples, if the path is sampled.
    fn sample_times(&self) -> Option<&TimeGrid> {
        None
    }
}

/// Coefficient path given by a closure.
pub struct FnCoefficientPath<F> {
    pub spatial: SpatialGrid,
    pub f: F,
}

impl<F: Fn(f64) -> FirstOrderOp + Send + Sync> CoefficientPath for FnCoefficientPath<F> {
    fn spatial(&self) -> SpatialGrid {
        self.spatial
    }
    fn eval(&self, t: f64) -> FirstOrderOp {
        (self.f)(t)
    }
}

/// Single-channel path `t ↦ Z_t (σ·∇ + ρ)`.
pub struct ChannelPath<F> {
    pub z: F,
    pub op: FirstOrderOp,
}

impl<F: Fn(f64) -> f64 + Send + Sync> CoefficientPath for ChannelPath<F> {
    fn spatial(&self) -> SpatialGrid {
        self.op.grid()
    }
    fn eval(&self, t: f64) -> FirstOrderOp {
        self.op.scale((self.z)(t))
    }
}

/// Coefficients sampled at discrete times, linear in between.
#[derive(Clone, Debug)]
pub struct SampledCoefficientPath {
    pub times: TimeGrid,
    pub samples: Vec<FirstOrderOp>,
}

impl SampledCoefficientPath {
    pub fn new(times: TimeGrid, samples: Vec<FirstOrderOp>) -> Result<Self> {
        if samples.len() != times.len() {
            return Err(Error::InputShape(format!("{} samples for {} times", samples.len(), times.len())));
        }
        let g = samples[0].grid();
        for s in &samples {
            s.grid().same_as(&g)?;
        }
        Ok(Self { times, samples })
    }

    /// Reads rows `t, channel, v_0, ..., v_{N-1}`: channel 0 is the zero-order
    /// coefficient, channels `1..=d` the vector field components.
    pub fn from_csv(reader: impl Read, spatial: SpatialGrid) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let d = spatial.dim;
        let mut times: Vec<f64> = Vec::new();
        let mut samples: Vec<FirstOrderOp> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::InputShape(format!("row {}: bad number `{s}`", line + 2)))
            };
            if rec.len() != 2 + spatial.len() {
                return Err(Error::InputShape(format!(
                    "row {}: expected {} columns, got {}",
                    line + 2,
                    2 + spatial.len(),
                    rec.len()
                )));
            }
            let t = parse(&rec[0])?;
            let ch = parse(&rec[1])? as usize;
            if ch > d {
                return Err(Error::ChannelMismatch { expected: d, got: ch });
            }
            let values: Vec<f64> = rec.iter().skip(2).map(parse).collect::<Result<_>>()?;
            if times.last() != Some(&t) {
                times.push(t);
                samples.push(FirstOrderOp::zero(spatial));
            }
            let op = samples.last_mut().unwrap();
            let field = ScalarField::new(spatial, values)?;
            if ch == 0 {
                op.c = field;
            } else {
                op.sigma[ch - 1] = field;
            }
        }
        Self::new(TimeGrid::new(times)?, samples)
    }
}

impl CoefficientPath for SampledCoefficientPath {
    fn spatial(&self) -> SpatialGrid {
        self.samples[0].grid()
    }
    fn eval(&self, t: f64) -> FirstOrderOp {
        let ts = self.times.times();
        let k = match ts.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(k) => return self.samples[k].clone(),
            Err(0) => return self.samples[0].clone(),
            Err(k) if k >= ts.len() => return self.samples[ts.len() - 1].clone(),
            Err(k) => k - 1,
        };
        let w = (t - ts[k]) / (ts[k + 1] - ts[k]);
        self.samples[k].combine(&self.samples[k + 1], 1.0 - w, w)
    }
    fn sample_times(&self) -> Option<&TimeGrid> {
        Some(&self.times)
    }
}

/// Midpoint-rule lift of the piecewise-linear interpolant of `path` through
/// `q + 1` equally spaced samples on `[s, t]`.
pub fn lift_interval(path: &dyn CoefficientPath, s: f64, t: f64, q: usize) -> LevelCoefficients {
    let g = path.spatial();
    let d = g.dim;
    let xs = path.eval(s);
    let mut l = vec![ScalarField::zeros(g); d];
    let mut l0 = ScalarField::zeros(g);
    let mut prev = xs.clone();
    for r in 1..=q {
        let tr = if r == q { t } else { s + (r as f64 / q as f64) * (t - s) };
        let cur = path.eval(tr);
        let dx: Vec<ScalarField> = cur.sigma.iter().zip(&prev.sigma).map(|(a, b)| a.sub(b)).collect();
        // X_{s,mid} = average of endpoint increments
        let mid = prev.combine(&cur, 0.5, 0.5).combine(&xs, 1.0, -1.0);
        for i in 0..d {
            l[i] = l[i].add(&directional(&g, &dx, &mid.sigma[i]));
        }
        l0 = l0.add(&directional(&g, &dx, &mid.c));
        prev = cur;
    }
    let inc = prev.combine(&xs, 1.0, -1.0);
    LevelCoefficients::geometric(inc.sigma, inc.c, l, l0)
}

/// Canonical lift of a coefficient path over `grid`, with `quad_refine`
/// midpoint subintervals per pair. The direct source lifts every pair over its
/// own `quad_refine`-point mesh.
pub fn canonical_lift(
    path: Arc<dyn CoefficientPath>,
    grid: TimeGrid,
    quad_refine: usize,
    alpha: f64,
) -> Result<DifferentialRoughDriver> {
    if quad_refine == 0 {
        return Err(Error::Parameter("quad_refine must be at least 1".into()));
    }
    if let Some(st) = path.sample_times() {
        for k in 0..grid.intervals() {
            let (a, b) = (grid.t(k), grid.t(k + 1));
            let inside = st.times().iter().filter(|&&v| v > a && v < b).count();
            if inside + 1 < quad_refine {
                return Err(Error::Resolution(format!(
                    "interval {k} has {} sample subintervals, quad_refine = {quad_refine} requires that many",
                    inside + 1
                )));
            }
        }
    }
    let intervals = (0..grid.intervals())
        .map(|k| lift_interval(path.as_ref(), grid.t(k), grid.t(k + 1), quad_refine))
        .collect();
    let spatial = path.spatial();
    let g2 = grid.clone();
    let d = DifferentialRoughDriver::from_intervals(grid, spatial, intervals, alpha, true)?;
    Ok(d.with_direct(move |i, j| lift_interval(path.as_ref(), g2.t(i), g2.t(j), quad_refine)))
}

/// Levels `Z1^μ P_μ` and `Z2^{μν} P_ν∘P_μ` with `P_μ = σ^μ·∇ + ρ^μ`.
fn contract(
    p: &[FirstOrderOp],
    compositions: &[SecondOrderOp],
    z1: &[f64],
    z2: &[f64],
) -> LevelCoefficients {
    let m = p.len();
    let g = p[0].grid();
    let mut b1 = FirstOrderOp::zero(g);
    for mu in 0..m {
        b1 = b1.combine(&p[mu], 1.0, z1[mu]);
    }
    let mut b2 = SecondOrderOp::zero(g);
    for mu in 0..m {
        for nu in 0..m {
            let c = z2[mu * m + nu];
            if c != 0.0 {
                b2 = b2.combine(&compositions[nu * m + mu], 1.0, c);
            }
        }
    }
    LevelCoefficients::from_levels(&b1, &b2)
}

/// Driver generated by an `m`-channel rough path and first-order operators
/// `P_μ = σ^μ·∇ + ρ^μ`.
pub fn from_rough_path(
    z: &ScalarRoughPath,
    sigma: Vec<Vec<ScalarField>>,
    rho: Vec<ScalarField>,
    alpha: f64,
) -> Result<DifferentialRoughDriver> {
    if sigma.len() != z.m {
        return Err(Error::ChannelMismatch { expected: z.m, got: sigma.len() });
    }
    if rho.len() != z.m {
        return Err(Error::ChannelMismatch { expected: z.m, got: rho.len() });
    }
    let spatial = rho[0].grid;
    let p: Vec<FirstOrderOp> = sigma
        .iter()
        .zip(&rho)
        .map(|(s, r)| FirstOrderOp::new(s.clone(), r.clone()))
        .collect::<Result<_>>()?;
    let m = z.m;
    let mut comps = Vec::with_capacity(m * m);
    for nu in 0..m {
        for mu in 0..m {
            comps.push(compose_first(&p[nu], &p[mu])?);
        }
    }
    let intervals = (0..z.grid.intervals())
        .map(|k| contract(&p, &comps, &z.z1[k], &z.z2[k]))
        .collect();
    let geometric = z.is_geometric(1e-12);
    let mut d = DifferentialRoughDriver::from_intervals(z.grid.clone(), spatial, intervals, alpha, geometric)?;
    d.channels = Some(Arc::new(RoughPathData {
        path: z.clone(),
        sigma,
        rho,
    }));
    let zc = z.clone();
    Ok(d.with_direct(move |i, j| {
        let (a, b) = zc.pair(i, j);
        contract(&p, &comps, &a, &b)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChenDefect {
    pub op_defect: f64,
    pub coeff_defect: f64,
}

fn defect_triples(n: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    if n <= 65 {
        for i in 0..n {
            for j in i + 2..n {
                for k in i + 1..j {
                    out.push((i, k, j));
                }
            }
        }
    } else {
        let mut gap = 2;
        while gap < n {
            let mut i = 0;
            while i + gap < n {
                let j = i + gap;
                for k in [i + 1, i + gap / 2, j - 1] {
                    out.push((i, k, j));
                }
                i += gap;
            }
            gap *= 2;
        }
        out.sort_unstable();
        out.dedup();
    }
    out
}

/// Chen defects of the direct levels: operator defect on the probe suite and
/// node-wise coefficient defect of `l, l0`.
pub fn chen_defect(d: &DifferentialRoughDriver) -> ChenDefect {
    let n = d.grid.len();
    if n < 3 {
        return ChenDefect {
            op_defect: 0.0,
            coeff_defect: 0.0,
        };
    }
    let g = d.spatial;
    let probes = probe_suite(&g);
    let mut levels: HashMap<(usize, usize), LevelCoefficients> = HashMap::new();
    let mut get = |i: usize, j: usize| levels.entry((i, j)).or_insert_with(|| d.pair_direct(i, j)).clone();
    let mut op_defect = 0.0f64;
    let mut coeff_defect = 0.0f64;
    for (i, k, j) in defect_triples(n) {
        let st = get(i, j);
        let a = get(i, k);
        let b = get(k, j);
        // δL_{sθt} - X_{θt}·∇X_{sθ}
        let dim = g.dim;
        for c in 0..=dim {
            let (fst, fa, fb, target) = if c < dim {
                (&st.l[c], &a.l[c], &b.l[c], &a.x[c])
            } else {
                (&st.l0, &a.l0, &b.l0, &a.x0)
            };
            let corr = directional(&g, &b.x, target);
            for node in 0..g.len() {
                let r = fst.values[node] - fa.values[node] - fb.values[node] - corr.values[node];
                coeff_defect = coeff_defect.max(r.abs());
            }
        }
        let db2 = st.level2().combine(&a.level2(), 1.0, -1.0).combine(&b.level2(), 1.0, -1.0);
        let comp = compose_first(&b.level1(), &a.level1()).expect("shared grid");
        let resid = db2.combine(&comp, 1.0, -1.0);
        op_defect = op_defect.max(probe_norm_second(&resid, &probes));
    }
    ChenDefect { op_defect, coeff_defect }
}

/// `B² - ½ B¹∘B¹` on one pair.
pub fn bracket_op(c: &LevelCoefficients) -> SecondOrderOp {
    let b1 = c.level1();
    let half = compose_first(&b1, &b1).expect("shared grid");
    c.level2().combine(&half, 1.0, -0.5)
}

#[derive(Clone, Debug)]
pub struct BracketReport {
    pub pairs: Vec<(usize, usize)>,
    pub brackets: Vec<SecondOrderOp>,
    /// Largest node-wise second-order coefficient of the bracket.
    pub order_defect: f64,
}

/// Brackets on all dyadic pairs.
pub fn bracket(d: &DifferentialRoughDriver) -> BracketReport {
    let pairs = d.grid.dyadic_pairs(d.grid.full_window());
    let brackets: Vec<SecondOrderOp> = pairs.iter().map(|&(i, j)| bracket_op(&d.pair(i, j))).collect();
    let order_defect = brackets.iter().map(|b| b.second_order_size()).fold(0.0, f64::max);
    BracketReport {
        pairs,
        brackets,
        order_defect,
    }
}

/// Shifted driver `B^(p)`: zero-order coefficients `x0, l0` scaled by `p`.
pub fn shift(d: &DifferentialRoughDriver, p: f64) -> Result<DifferentialRoughDriver> {
    if !(p >= 1.0) {
        return Err(Error::Parameter(format!("shift exponent must be >= 1, got {p}")));
    }
    let intervals = d.intervals.iter().map(|c| c.scale_zero_order(p)).collect();
    let mut out = DifferentialRoughDriver::from_intervals(d.grid.clone(), d.spatial, intervals, d.alpha, d.geometric)?;
    out.channels = d.channels.clone();
    if let Some(f) = d.direct.clone() {
        out = out.with_direct(move |i, j| f(i, j).scale_zero_order(p));
    }
    Ok(out)
}

/// Product-grid node budget for [`tensorize`].
pub const TENSOR_NODE_LIMIT: usize = 1_000_000;

fn tensor_coefficients(c: &LevelCoefficients, g2: SpatialGrid) -> LevelCoefficients {
    let n = c.grid().extents[0];
    let lift = |f: &ScalarField, axis: usize| {
        let values = (0..n * n)
            .map(|k| {
                let m = [k / n, k % n];
                f.values[m[axis]]
            })
            .collect();
        ScalarField { grid: g2, values }
    };
    let sum = |f: &ScalarField| lift(f, 0).add(&lift(f, 1));
    let x = vec![lift(&c.x[0], 0), lift(&c.x[0], 1)];
    let cross = x[0].zip(&x[1], |a, b| 0.5 * a * b);
    LevelCoefficients {
        xx: vec![lift(&c.xx[0], 0), cross.clone(), cross, lift(&c.xx[0], 1)],
        x,
        x0: sum(&c.x0),
        l: vec![lift(&c.l[0], 0), lift(&c.l[0], 1)],
        l0: sum(&c.l0),
    }
}

/// The driver `Γ(B)` on the product grid: `Γ¹ = B¹⊗id + id⊗B¹`,
/// `Γ² = B²⊗id + B¹⊗B¹ + id⊗B²`. One-dimensional drivers only.
pub fn tensorize(d: &DifferentialRoughDriver) -> Result<DifferentialRoughDriver> {
    let s = d.spatial;
    if s.dim != 1 {
        return Err(Error::Unsupported("tensorization is implemented for one-dimensional drivers".into()));
    }
    let n = s.extents[0];
    if n.saturating_mul(n) > TENSOR_NODE_LIMIT {
        return Err(Error::MemoryGuard(format!(
            "product grid would have {} nodes, limit {TENSOR_NODE_LIMIT}",
            n.saturating_mul(n)
        )));
    }
    let g2 = SpatialGrid::new(2, [n, n], [s.lengths[0]; 2], [s.origin[0]; 2], s.boundary)?;
    let intervals = d.intervals.iter().map(|c| tensor_coefficients(c, g2)).collect();
    let mut out = DifferentialRoughDriver::from_intervals(d.grid.clone(), g2, intervals, d.alpha, d.geometric)?;
    if let Some(f) = d.direct.clone() {
        out = out.with_direct(move |i, j| tensor_coefficients(&f(i, j), g2));
    }
    Ok(out)
}

/// Version tag of the fixed probe suite.
pub const PROBE_SUITE_VERSION: u32 = 1;

fn probe_1d(k: usize, periodic: bool, x: f64) -> f64 {
    // k in 0..8; x normalized to [0, 1]
    let bump = |c: f64| {
        let mut dx = x - c;
        if periodic {
            dx -= dx.round();
        }
        (-(dx / 0.1).powi(2)).exp()
    };
    if periodic {
        match k {
            0..=5 => {
                let f = 2.0 * PI * (k / 2 + 1) as f64 * x;
                if k % 2 == 0 {
                    f.sin()
                } else {
                    f.cos()
                }
            }
            6 => bump(0.3),
            _ => bump(0.7),
        }
    } else {
        match k {
            0..=5 => ((k + 1) as f64 * PI * x).sin(),
            6 => bump(0.35) * (PI * x).sin(),
            _ => bump(0.65) * (PI * x).sin(),
        }
    }
}

/// Eight smooth probe fields: low-frequency modes and two Gaussian bumps.
/// Dirichlet probes vanish on the boundary.
pub fn probe_suite(g: &SpatialGrid) -> Vec<ScalarField> {
    let periodic = g.is_periodic();
    let unit = |x: [f64; 2], a: usize| (x[a] - g.origin[a]) / g.lengths[a];
    // second-axis partner of each first-axis probe in two dimensions
    const PARTNER: [usize; 8] = [1, 0, 1, 2, 3, 4, 6, 7];
    (0..8)
        .map(|k| {
            let mut f = ScalarField::from_fn(*g, |x| {
                let a = probe_1d(k, periodic, unit(x, 0));
                if g.dim == 1 {
                    a
                } else {
                    a * probe_1d(PARTNER[k], periodic, unit(x, 1))
                }
            });
            if !periodic {
                for node in 0..g.len() {
                    if g.is_boundary(node) {
                        f.values[node] = 0.0;
                    }
                }
            }
            f
        })
        .collect()
}

pub fn probe_norm_first(op: &FirstOrderOp, probes: &[ScalarField]) -> f64 {
    probes
        .iter()
        .map(|p| apply_first(op, p).expect("probe grid").l2() / p.l2())
        .fold(0.0, f64::max)
}

pub fn probe_norm_second(op: &SecondOrderOp, probes: &[ScalarField]) -> f64 {
    probes
        .iter()
        .map(|p| apply_second(op, p).expect("probe grid").l2() / p.l2())
        .fold(0.0, f64::max)
}

/// Probe norm of `B¹ + B²` on one pair.
pub fn probe_norm_levels(c: &LevelCoefficients, probes: &[ScalarField]) -> f64 {
    let b1 = SecondOrderOp::from_first(&c.level1());
    probe_norm_second(&b1.add(&c.level2()), probes)
}

/// Probe fields with their discrete `H¹` and `H²` norms. Level-1 operators
/// are measured as `max ‖Oφ‖ / ‖φ‖_{H¹}` and level-2 ones against `‖φ‖_{H²}`,
/// a grid stand-in for the Sobolev scale the operators act on.
#[derive(Clone, Debug)]
pub struct SobolevProbes {
    pub fields: Vec<ScalarField>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

impl SobolevProbes {
    pub fn new(g: &SpatialGrid) -> Self {
        let fields = probe_suite(g);
        let w = g.cell();
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() * w;
        let mut h1 = Vec::new();
        let mut h2 = Vec::new();
        for f in &fields {
            let l2 = sq(&f.values);
            let grad: f64 = (0..g.dim).map(|a| sq(&d1(g, &f.values, a))).sum();
            let mut hess = 0.0;
            for i in 0..g.dim {
                for j in 0..g.dim {
                    hess += sq(&d2(g, &f.values, i, j));
                }
            }
            h1.push((l2 + grad).sqrt());
            h2.push((l2 + grad + hess).sqrt());
        }
        Self { fields, h1, h2 }
    }

    pub fn first(&self, op: &FirstOrderOp) -> f64 {
        self.fields
            .iter()
            .zip(&self.h1)
            .map(|(p, n)| apply_first(op, p).expect("probe grid").l2() / n)
            .fold(0.0, f64::max)
    }

    pub fn second(&self, op: &SecondOrderOp) -> f64 {
        self.fields
            .iter()
            .zip(&self.h2)
            .map(|(p, n)| apply_second(op, p).expect("probe grid").l2() / n)
            .fold(0.0, f64::max)
    }

    /// Level-1 and level-2 norms of one pair.
    pub fn levels(&self, c: &LevelCoefficients) -> (f64, f64) {
        (self.first(&c.level1()), self.second(&c.level2()))
    }
}

/// Scaled probe norms of level 1 and level 2 on every grid pair.
pub fn level_norms(d: &DifferentialRoughDriver) -> (TwoParamField<f64>, TwoParamField<f64>) {
    let probes = SobolevProbes::new(&d.spatial);
    let n1 = TwoParamField::from_fn(&d.grid, |i, j| probes.first(&d.level1_op(i, j)));
    let n2 = TwoParamField::from_fn(&d.grid, |i, j| probes.second(&d.level2_op(i, j)));
    (n1, n2)
}

/// Probe-based surrogate of the driver distance `ρ_α`: sup over `t` of the
/// scaled probe norms of `B(n)_{0t} - B_{0t}`, plus the `α`-variation of the
/// level-1 difference and the `2α`-variation of the level-2 difference.
pub fn rho_alpha(d1: &DifferentialRoughDriver, d2: &DifferentialRoughDriver, alpha: f64) -> Result<f64> {
    if d1.grid != d2.grid {
        return Err(Error::GridMismatch("drivers live on different time grids".into()));
    }
    d1.spatial.same_as(&d2.spatial)?;
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::Parameter(format!("rho_alpha needs alpha in (0, 1/2], got {alpha}")));
    }
    let probes = SobolevProbes::new(&d1.spatial);
    let g = &d1.grid;
    let mut sup = 0.0f64;
    let mut n1 = TwoParamField::empty(g);
    let mut n2 = TwoParamField::empty(g);
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            let (a, b) = probes.levels(&d1.pair(i, j).sub(&d2.pair(i, j)));
            if i == 0 {
                sup = sup.max(a).max(b);
            }
            n1.set(i, j, a);
            n2.set(i, j, b);
        }
    }
    let w = g.full_window();
    Ok(sup + pvar_norm(&n1, alpha, w)? + pvar_norm(&n2, 2.0 * alpha, w)?)
}
