//! Wong-Zakai refinement sweeps.

use crate::driver::{rho_alpha, DifferentialRoughDriver};
use crate::error::{Error, Result};
use crate::operators::ScalarField;
use crate::paths::refine;
use crate::temporal::TimeGrid;

use super::{integrate, DriverRecipe, Forcing, Scenario};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub level: u32,
    pub steps: usize,
    /// Sup over base nodes and space of the difference to the previous level.
    pub sup_diff: Option<f64>,
    /// Driver distance to the previous level, both coarse-grained to the base grid.
    pub rho: Option<f64>,
    pub final_l2: f64,
}

fn refine_forcing(f: &Forcing, coarse: &TimeGrid, fine: &TimeGrid) -> Forcing {
    match f {
        Forcing::Zero => Forcing::Zero,
        Forcing::Nodes(v) => {
            let mut out = Vec::with_capacity(fine.len());
            let mut k = 0;
            for &t in fine.times() {
                while k + 1 < coarse.intervals() && t > coarse.t(k + 1) {
                    k += 1;
                }
                let w = ((t - coarse.t(k)) / coarse.dt(k)).clamp(0.0, 1.0);
                out.push(v[k].zip(&v[k + 1], |a, b| (1.0 - w) * a + w * b));
            }
            Forcing::Nodes(out)
        }
    }
}

/// Driver of `fine` grouped back onto `base`, `2^level` fine intervals per base interval.
fn coarse_grain(fine: &DifferentialRoughDriver, base: &TimeGrid, level: u32) -> Result<DifferentialRoughDriver> {
    let m = 1usize << level;
    let intervals = (0..base.intervals())
        .map(|i| (*fine.pair(i * m, (i + 1) * m)).clone())
        .collect();
    DifferentialRoughDriver::from_intervals(base.clone(), fine.spatial, intervals, fine.alpha, fine.geometric)
}

/// For each level: refine the path, lift it piecewise linearly on the refined
/// time grid, solve, and compare with the previous level at the base nodes.
pub fn wong_zakai_sweep(sc: &Scenario, levels: &[u32]) -> Result<Vec<SweepRow>> {
    let recipe = sc
        .recipe
        .as_ref()
        .ok_or_else(|| Error::Config("a Wong-Zakai sweep needs a sampled driver recipe".into()))?;
    if sc.elliptic.is_time_dependent() {
        return Err(Error::Unsupported(
            "refinement sweeps need time-independent elliptic coefficients".into(),
        ));
    }
    let alpha = sc.alpha();
    let base = &sc.time;
    let mut rows = Vec::with_capacity(levels.len());
    let mut prev: Option<(Vec<ScalarField>, DifferentialRoughDriver)> = None;
    for &level in levels {
        let time = base.refine(level);
        let fine_recipe = DriverRecipe {
            path: refine(&recipe.path, level)?,
            ..recipe.clone()
        };
        let driver = fine_recipe.build(&time, alpha)?;
        let run = Scenario {
            time: time.clone(),
            forcing: refine_forcing(&sc.forcing, base, &time),
            driver: std::sync::Arc::new(driver),
            recipe: Some(fine_recipe),
            ..sc.clone()
        };
        let u = integrate(&run)?;
        let m = 1usize << level;
        let at_base: Vec<ScalarField> = (0..base.len()).map(|i| u[i * m].clone()).collect();
        let coarse = coarse_grain(&run.driver, base, level)?;
        let (sup_diff, rho) = match &prev {
            Some((pu, pd)) => {
                let diff = at_base
                    .iter()
                    .zip(pu)
                    .map(|(a, b)| a.zip(b, |x, y| x - y).sup())
                    .fold(0.0, f64::max);
                (Some(diff), Some(rho_alpha(pd, &coarse, alpha.min(0.5))?))
            }
            None => (None, None),
        };
        rows.push(SweepRow {
            level,
            steps: time.intervals(),
            sup_diff,
            rho,
            final_l2: at_base.last().map(|f| f.l2()).unwrap_or(0.0),
        });
        prev = Some((at_base, coarse));
    }
    Ok(rows)
}
