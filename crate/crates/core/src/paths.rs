//! Driving paths: Brownian motion, fractional Brownian motion, deterministic
//! expressions, refinement and piecewise-linear level 2.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::driver::{pl_increments, ScalarRoughPath};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::temporal::TimeGrid;

/// Largest refinement level accepted by [`refine`].
pub const MAX_REFINE_LEVEL: u32 = 12;

#[derive(Clone, Debug, PartialEq)]
pub enum PathKind {
    Bm,
    Fbm { hurst: f64 },
    /// One expression in `t` per channel.
    Deterministic(Vec<Expr>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathRecipe {
    pub kind: PathKind,
    pub channels: usize,
    pub seed: u64,
    /// Sample points per driver interval.
    pub samples_per_interval: usize,
}

impl PathRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Parameter("a path needs at least one channel".into()));
        }
        if self.samples_per_interval == 0 {
            return Err(Error::Parameter("samples per interval must be at least 1".into()));
        }
        match &self.kind {
            PathKind::Fbm { hurst } if !(*hurst > 1.0 / 3.0 && *hurst < 1.0) => Err(Error::Parameter(format!(
                "hurst index must lie in (1/3, 1), got {hurst}"
            ))),
            PathKind::Deterministic(e) if e.len() != self.channels => Err(Error::ChannelMismatch {
                expected: self.channels,
                got: e.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// How a sampled path extends to finer grids.
#[derive(Clone, Debug, PartialEq)]
pub enum Refinement {
    /// Linear interpolation.
    Linear,
    /// Brownian bridges.
    Bm,
    /// Conditional fractional Gaussian synthesis.
    Fbm { hurst: f64 },
}

/// A multichannel path sampled on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiPath {
    pub grid: TimeGrid,
    /// `values[k][μ]` at node `k`.
    pub values: Vec<Vec<f64>>,
    pub refinement: Refinement,
    pub seed: u64,
    /// Number of halvings already applied since sampling.
    pub halvings: u32,
}

impl MultiPath {
    pub fn channels(&self) -> usize {
        self.values[0].len()
    }

    pub fn channel(&self, mu: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[mu]).collect()
    }

    /// Values at the nodes of a coarser grid contained in this one.
    pub fn restrict(&self, coarse: &TimeGrid) -> Result<Vec<Vec<f64>>> {
        coarse
            .times()
            .iter()
            .map(|&t| {
                self.grid
                    .index_of(t)
                    .map(|k| self.values[k].clone())
                    .ok_or_else(|| Error::GridMismatch(format!("time {t} is not a node of the path grid")))
            })
            .collect()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.channels()).map(|mu| format!("channel_{mu}")));
        wr.write_record(&header)?;
        for (t, v) in self.grid.times().iter().zip(&self.values) {
            let mut row = vec![format!("{t:e}")];
            row.extend(v.iter().map(|x| format!("{x:e}")));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads `t, channel_0, ...`; imported paths refine linearly.
    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let nums: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::InputShape(format!("row {}: bad number `{s}`", line + 2)))
                })
                .collect::<Result<_>>()?;
            if nums.len() < 2 {
                return Err(Error::InputShape(format!("row {}: need t and at least one channel", line + 2)));
            }
            times.push(nums[0]);
            values.push(nums[1..].to_vec());
        }
        let m = values.first().map_or(0, |v: &Vec<f64>| v.len());
        if values.iter().any(|v| v.len() != m) {
            return Err(Error::InputShape("rows have different channel counts".into()));
        }
        Ok(Self {
            grid: TimeGrid::new(times)?,
            values,
            refinement: Refinement::Linear,
            seed: 0,
            halvings: 0,
        })
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Samples the recipe on `grid` subdivided `samples_per_interval` times.
pub fn sample(recipe: &PathRecipe, grid: &TimeGrid) -> Result<MultiPath> {
    recipe.validate()?;
    let fine = grid.subdivide(recipe.samples_per_interval);
    let m = recipe.channels;
    let n = fine.len();
    let mut values = vec![vec![0.0; m]; n];
    let refinement = match &recipe.kind {
        PathKind::Bm => {
            for mu in 0..m {
                let mut rng = rng_for(recipe.seed, mu as u64);
                let xi = normals(&mut rng, n - 1);
                for k in 1..n {
                    values[k][mu] = values[k - 1][mu] + fine.dt(k - 1).sqrt() * xi[k - 1];
                }
            }
            Refinement::Bm
        }
        PathKind::Fbm { hurst } => {
            for mu in 0..m {
                let mut rng = rng_for(recipe.seed, mu as u64);
                let path = fbm_sample(&fine, *hurst, &mut rng)?;
                for k in 0..n {
                    values[k][mu] = path[k];
                }
            }
            Refinement::Fbm { hurst: *hurst }
        }
        PathKind::Deterministic(exprs) => {
            for (k, &t) in fine.times().iter().enumerate() {
                for (mu, e) in exprs.iter().enumerate() {
                    values[k][mu] = e.eval(t, 0.0, 0.0);
                }
            }
            Refinement::Linear
        }
    };
    Ok(MultiPath {
        grid: fine,
        values,
        refinement,
        seed: recipe.seed,
        halvings: 0,
    })
}

fn fbm_cov(h: f64, s: f64, t: f64) -> f64 {
    0.5 * (s.powf(2.0 * h) + t.powf(2.0 * h) - (t - s).abs().powf(2.0 * h))
}

fn is_uniform(g: &TimeGrid) -> bool {
    let dt = g.horizon() / g.intervals() as f64;
    (0..g.intervals()).all(|k| (g.dt(k) - dt).abs() <= 1e-12 * dt)
}

/// fBm values on the grid (starting at 0): circulant embedding of fractional
/// Gaussian noise on uniform grids, dense Cholesky otherwise or when the
/// embedding is not positive.
fn fbm_sample(g: &TimeGrid, h: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = g.intervals();
    if is_uniform(g) {
        if let Some(noise) = circulant_fgn(n, h, rng) {
            let scale = (g.horizon() / n as f64).powf(h);
            let mut out = vec![0.0; n + 1];
            for k in 0..n {
                out[k + 1] = out[k] + scale * noise[k];
            }
            return Ok(out);
        }
        log::warn!("circulant embedding not positive for n = {n}, H = {h}; using dense Cholesky");
    }
    let t = &g.times()[1..];
    let cov = DMatrix::from_fn(n, n, |i, j| fbm_cov(h, t[i], t[j]));
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Solve("fBm covariance is not positive definite".into()))?;
    let xi = DVector::from_vec(normals(rng, n));
    let z = chol.l() * xi;
    let mut out = vec![0.0];
    out.extend(z.iter());
    Ok(out)
}

/// `n` unit-step fractional Gaussian noise samples, or `None` when the
/// circulant embedding has a negative eigenvalue.
fn circulant_fgn(n: usize, h: f64, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    let gamma = |k: f64| 0.5 * ((k + 1.0).abs().powf(2.0 * h) - 2.0 * k.abs().powf(2.0 * h) + (k - 1.0).abs().powf(2.0 * h));
    let size = 2 * n;
    let mut row: Vec<Complex<f64>> = (0..size)
        .map(|k| {
            let lag = if k <= n { k } else { size - k };
            Complex::new(gamma(lag as f64), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(size);
    fft.process(&mut row);
    let max = row.iter().fold(0.0f64, |m, c| m.max(c.re));
    if row.iter().any(|c| c.re < -1e-10 * max) {
        return None;
    }
    let a = normals(rng, size);
    let b = normals(rng, size);
    let mut w: Vec<Complex<f64>> = (0..size)
        .map(|k| {
            let s = (row[k].re.max(0.0) / size as f64).sqrt();
            Complex::new(s * a[k], s * b[k])
        })
        .collect();
    fft.process(&mut w);
    Some(w[..n].iter().map(|c| c.re).collect())
}

/// Exact level 2 of the piecewise-linear interpolant, on the intervals of `coarse`.
pub fn pl_level2(path: &MultiPath, coarse: &TimeGrid) -> Result<ScalarRoughPath> {
    let (z1f, z2f) = pl_increments(&path.grid, &path.values)?;
    let m = path.channels();
    let mut z1 = Vec::with_capacity(coarse.intervals());
    let mut z2 = Vec::with_capacity(coarse.intervals());
    let idx: Vec<usize> = coarse
        .times()
        .iter()
        .map(|&t| {
            path.grid
                .index_of(t)
                .ok_or_else(|| Error::GridMismatch(format!("rough path node {t} is not a sample time")))
        })
        .collect::<Result<_>>()?;
    for w in idx.windows(2) {
        let mut acc = (z1f[w[0]].clone(), z2f[w[0]].clone());
        for k in w[0] + 1..w[1] {
            acc = ScalarRoughPath::chen(m, (&acc.0, &acc.1), (&z1f[k], &z2f[k]));
        }
        z1.push(acc.0);
        z2.push(acc.1);
    }
    ScalarRoughPath::new(coarse.clone(), z1, z2)
}

/// The path on the grid halved `level` times. Original nodes are kept bitwise;
/// successive calls reuse the same random streams, so `refine(refine(p, a), b)`
/// equals `refine(p, a + b)`.
pub fn refine(path: &MultiPath, level: u32) -> Result<MultiPath> {
    if path.halvings + level > MAX_REFINE_LEVEL {
        return Err(Error::MemoryGuard(format!(
            "refinement level {} exceeds the limit {MAX_REFINE_LEVEL}",
            path.halvings + level
        )));
    }
    let mut cur = path.clone();
    for _ in 0..level {
        cur = halve(&cur)?;
    }
    Ok(cur)
}

fn halve(p: &MultiPath) -> Result<MultiPath> {
    let grid = p.grid.subdivide(2);
    let m = p.channels();
    let n = p.grid.len();
    let mut values = vec![vec![0.0; m]; grid.len()];
    for k in 0..n {
        values[2 * k] = p.values[k].clone();
    }
    let step = p.halvings as u64 + 1;
    match &p.refinement {
        Refinement::Linear => {
            for k in 0..n - 1 {
                for mu in 0..m {
                    let (a, b) = (p.values[k][mu], p.values[k + 1][mu]);
                    values[2 * k + 1][mu] = a + 0.5 * (b - a);
                }
            }
        }
        Refinement::Bm => {
            for mu in 0..m {
                let mut rng = rng_for(p.seed, (step << 16) | mu as u64);
                let xi = normals(&mut rng, n - 1);
                for k in 0..n - 1 {
                    let (s, t) = (p.grid.t(k), p.grid.t(k + 1));
                    let mid = grid.t(2 * k + 1);
                    let (a, b) = (p.values[k][mu], p.values[k + 1][mu]);
                    let w = (mid - s) / (t - s);
                    let var = (mid - s) * (t - mid) / (t - s);
                    values[2 * k + 1][mu] = a + w * (b - a) + var.sqrt() * xi[k];
                }
            }
        }
        Refinement::Fbm { hurst } => {
            let h = *hurst;
            // known nodes: old grid without t = 0; unknown: new midpoints
            let known: Vec<f64> = p.grid.times()[1..].to_vec();
            let unknown: Vec<f64> = (0..n - 1).map(|k| grid.t(2 * k + 1)).collect();
            let (no, nu) = (known.len(), unknown.len());
            let koo = DMatrix::from_fn(no, no, |i, j| fbm_cov(h, known[i], known[j]));
            let kuo = DMatrix::from_fn(nu, no, |i, j| fbm_cov(h, unknown[i], known[j]));
            let kuu = DMatrix::from_fn(nu, nu, |i, j| fbm_cov(h, unknown[i], unknown[j]));
            let chol = koo
                .cholesky()
                .ok_or_else(|| Error::Solve("fBm covariance of existing nodes is singular".into()))?;
            let gain = chol.solve(&kuo.transpose()).transpose();
            let mut cond = kuu - &gain * kuo.transpose();
            cond = (&cond + cond.transpose()) * 0.5;
            let jitter = 1e-14 * cond.diagonal().amax().max(1e-300);
            for i in 0..nu {
                cond[(i, i)] += jitter;
            }
            let lc = cond
                .cholesky()
                .ok_or_else(|| Error::Solve("conditional fBm covariance is not positive".into()))?
                .l();
            for mu in 0..m {
                let mut rng = rng_for(p.seed, (step << 16) | mu as u64);
                let x = DVector::from_iterator(no, p.values[1..].iter().map(|v| v[mu]));
                let xi = DVector::from_vec(normals(&mut rng, nu));
                let y = &gain * x + &lc * xi;
                for k in 0..nu {
                    values[2 * k + 1][mu] = y[k];
                }
            }
        }
    }
    Ok(MultiPath {
        grid,
        values,
        refinement: p.refinement.clone(),
        seed: p.seed,
        halvings: p.halvings + 1,
    })
}

/// Piecewise-linear evaluation of one channel at time `t`.
pub fn interpolate(path: &MultiPath, mu: usize, t: f64) -> f64 {
    let ts = path.grid.times();
    match ts.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(k) => path.values[k][mu],
        Err(0) => path.values[0][mu],
        Err(k) if k >= ts.len() => path.values[ts.len() - 1][mu],
        Err(k) => {
            let w = (t - ts[k - 1]) / (ts[k] - ts[k - 1]);
            path.values[k - 1][mu] + w * (path.values[k][mu] - path.values[k - 1][mu])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::{delta1, holder_fit};

    fn bm(seed: u64, m: usize, spi: usize) -> PathRecipe {
        PathRecipe {
            kind: PathKind::Bm,
            channels: m,
            seed,
            samples_per_interval: spi,
        }
    }

    #[test]
    fn recipe_validation() {
        let mut r = bm(1, 1, 1);
        r.kind = PathKind::Fbm { hurst: 0.3 };
        assert!(r.validate().is_err());
        r.kind = PathKind::Deterministic(vec![]);
        assert!(matches!(r.validate(), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn deterministic_identity_path() {
        let g = TimeGrid::uniform(8, 1.0).unwrap();
        let r = PathRecipe {
            kind: PathKind::Deterministic(vec![Expr::parse("t").unwrap()]),
            channels: 1,
            seed: 0,
            samples_per_interval: 2,
        };
        let p = sample(&r, &g).unwrap();
        assert!(p.grid.times().iter().zip(&p.values).all(|(t, v)| *t == v[0]));
        let q = refine(&p, 3).unwrap();
        assert!(q.grid.times().iter().zip(&q.values).all(|(t, v)| *t == v[0]));
    }

    #[test]
    fn seeds_reproduce() {
        let g = TimeGrid::uniform(16, 1.0).unwrap();
        let a = sample(&bm(7, 2, 1), &g).unwrap();
        assert_eq!(a, sample(&bm(7, 2, 1), &g).unwrap());
        assert_ne!(a, sample(&bm(8, 2, 1), &g).unwrap());
        let mut f = bm(7, 1, 1);
        f.kind = PathKind::Fbm { hurst: 0.4 };
        assert_eq!(sample(&f, &g).unwrap(), sample(&f, &g).unwrap());
    }

    #[test]
    fn bm_refinement_keeps_nodes_and_nests() {
        let g = TimeGrid::uniform(8, 1.0).unwrap();
        let p = sample(&bm(3, 2, 1), &g).unwrap();
        let q = refine(&p, 2).unwrap();
        for k in 0..p.grid.len() {
            assert_eq!(q.values[4 * k], p.values[k]);
        }
        assert_eq!(refine(&refine(&p, 1).unwrap(), 1).unwrap(), q);
        assert!(matches!(refine(&p, 13), Err(Error::MemoryGuard(_))));
    }

    #[test]
    fn fbm_refinement_keeps_nodes() {
        let g = TimeGrid::uniform(8, 1.0).unwrap();
        let mut r = bm(5, 1, 1);
        r.kind = PathKind::Fbm { hurst: 0.4 };
        let p = sample(&r, &g).unwrap();
        let q = refine(&p, 2).unwrap();
        for k in 0..p.grid.len() {
            assert_eq!(q.values[4 * k], p.values[k]);
        }
    }

    #[test]
    fn pl_level2_examples() {
        // one segment
        let g = TimeGrid::uniform(1, 1.0).unwrap();
        let p = MultiPath {
            grid: g.clone(),
            values: vec![vec![0.0, 0.0], vec![1.0, 2.0]],
            refinement: Refinement::Linear,
            seed: 0,
            halvings: 0,
        };
        let z = pl_level2(&p, &g).unwrap();
        assert_eq!(z.z2[0], vec![0.5, 1.0, 1.0, 2.0]);

        // (0,0) -> (1,0) -> (1,1) -> (2,1) with one coarse interval
        let g3 = TimeGrid::uniform(3, 1.0).unwrap();
        let p = MultiPath {
            grid: g3,
            values: vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![2.0, 1.0]],
            refinement: Refinement::Linear,
            seed: 0,
            halvings: 0,
        };
        let z = pl_level2(&p, &g).unwrap();
        // brute-force iterated integrals on 10^4 substeps per segment
        let sub = 10_000;
        let mut oracle = [0.0f64; 4];
        let mut cur = [0.0f64; 2];
        for seg in 0..3 {
            let (a, b) = (&p.values[seg], &p.values[seg + 1]);
            let d = [(b[0] - a[0]) / sub as f64, (b[1] - a[1]) / sub as f64];
            for _ in 0..sub {
                let mid = [cur[0] + 0.5 * d[0], cur[1] + 0.5 * d[1]];
                for mu in 0..2 {
                    for nu in 0..2 {
                        oracle[mu * 2 + nu] += mid[mu] * d[nu];
                    }
                }
                cur = [cur[0] + d[0], cur[1] + d[1]];
            }
        }
        for k in 0..4 {
            assert!((z.z2[0][k] - oracle[k]).abs() < 1e-9, "{:?} vs {oracle:?}", z.z2[0]);
        }
        assert!(z.is_geometric(1e-12));
        // ∫Z⁰dZ¹ = ∫Z¹dZ⁰ = 1, so the area vanishes
        assert!((z.z2[0][1] - 1.0).abs() < 1e-14 && (z.z2[0][2] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn csv_roundtrip() {
        let g = TimeGrid::uniform(4, 1.0).unwrap();
        let p = sample(&bm(11, 2, 1), &g).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = MultiPath::read_csv(buf.as_slice()).unwrap();
        assert_eq!(q.values, p.values);
        assert_eq!(q.grid, p.grid);
    }

    #[test]
    fn fbm_regularity() {
        let g = TimeGrid::uniform(256, 1.0).unwrap();
        let mut slopes = Vec::new();
        for seed in 0..20 {
            let r = PathRecipe {
                kind: PathKind::Fbm { hurst: 0.4 },
                channels: 1,
                seed,
                samples_per_interval: 1,
            };
            let p = sample(&r, &g).unwrap();
            let f = delta1(&g, &p.channel(0)).unwrap();
            slopes.push(holder_fit(&f, g.full_window()).unwrap().exponent);
        }
        slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = slopes[slopes.len() / 2];
        assert!((med - 0.4).abs() < 0.1, "median slope {med}");
    }
}
