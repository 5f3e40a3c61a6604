//! Solvers for `(I - c A) u = r` with `A` a discrete elliptic operator.

use crate::error::{Error, Result};
use crate::operators::{EllipticOp, SpatialGrid};

/// Thomas algorithm; `a` sub-diagonal, `b` diagonal, `c` super-diagonal.
fn thomas(a: &[f64], b: &[f64], c: &[f64], r: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = r[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (r[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Cyclic tridiagonal system via Sherman-Morrison; `a[0]` couples to the last
/// unknown and `c[n-1]` to the first.
fn cyclic_thomas(a: &[f64], b: &[f64], c: &[f64], r: &[f64]) -> Vec<f64> {
    let n = b.len();
    let alpha = c[n - 1];
    let beta = a[0];
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] = b[0] - gamma;
    bb[n - 1] = b[n - 1] - alpha * beta / gamma;
    let mut a2 = a.to_vec();
    let mut c2 = c.to_vec();
    a2[0] = 0.0;
    c2[n - 1] = 0.0;
    let x = thomas(&a2, &bb, &c2, r);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = thomas(&a2, &bb, &c2, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

fn solve_1d(op: &EllipticOp, time: usize, coef: f64, rhs: &[f64]) -> Vec<f64> {
    let g = &op.grid;
    let n = g.extents[0];
    let h2 = g.spacing[0] * g.spacing[0];
    let a = &op.a[if op.a.len() == 1 { 0 } else { time }][0];
    let periodic = g.is_periodic();
    let mut lo = vec![0.0; n];
    let mut di = vec![1.0; n];
    let mut up = vec![0.0; n];
    for k in 0..n {
        let (km, kp) = if periodic {
            ((k + n - 1) % n, (k + 1) % n)
        } else if k == 0 || k == n - 1 {
            continue;
        } else {
            (k - 1, k + 1)
        };
        let ap = 0.5 * (a[k] + a[kp]) / h2;
        let am = 0.5 * (a[k] + a[km]) / h2;
        lo[k] = -coef * am;
        up[k] = -coef * ap;
        di[k] = 1.0 + coef * (ap + am);
    }
    if periodic {
        if n == 2 {
            // both neighbours coincide
            let m = [[di[0], lo[0] + up[0]], [lo[1] + up[1], di[1]]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            return vec![
                (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det,
                (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det,
            ];
        }
        cyclic_thomas(&lo, &di, &up, rhs)
    } else {
        let mut r = rhs.to_vec();
        r[0] = 0.0;
        r[n - 1] = 0.0;
        thomas(&lo, &di, &up, &r)
    }
}

fn mask(g: &SpatialGrid, v: &mut [f64]) {
    if !g.is_periodic() {
        for (k, x) in v.iter_mut().enumerate() {
            if g.is_boundary(k) {
                *x = 0.0;
            }
        }
    }
}

/// Conjugate gradients for the symmetric positive operator `I - c A`.
fn solve_cg(op: &EllipticOp, time: usize, coef: f64, rhs: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
    let g = &op.grid;
    let apply = |x: &[f64]| -> Vec<f64> {
        let ax = op.apply(time, x);
        let mut y: Vec<f64> = x.iter().zip(&ax).map(|(a, b)| a - coef * b).collect();
        mask(g, &mut y);
        y
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut b = rhs.to_vec();
    mask(g, &mut b);
    let mut x = guess.to_vec();
    mask(g, &mut x);
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = 1e-24 * dot(&b, &b).max(f64::MIN_POSITIVE);
    let max_iter = 10 * b.len() + 100;
    for _ in 0..max_iter {
        if rr <= target {
            return Ok(x);
        }
        let ap = apply(&p);
        let alpha = rr / dot(&p, &ap);
        for k in 0..x.len() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..p.len() {
            p[k] = r[k] + beta * p[k];
        }
    }
    if rr <= target {
        return Ok(x);
    }
    Err(Error::Solve(format!(
        "conjugate gradients did not converge (residual {:.3e})",
        (rr / dot(&b, &b).max(f64::MIN_POSITIVE)).sqrt()
    )))
}

/// Solves `(I - coef A_time) u = rhs`. Dirichlet boundary values are set to zero.
pub(crate) fn implicit_solve(op: &EllipticOp, time: usize, coef: f64, rhs: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
    if coef == 0.0 {
        let mut out = rhs.to_vec();
        mask(&op.grid, &mut out);
        return Ok(out);
    }
    if op.grid.dim == 1 {
        Ok(solve_1d(op, time, coef, rhs))
    } else {
        solve_cg(op, time, coef, rhs, guess)
    }
}
