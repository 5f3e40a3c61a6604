//! Dirichlet problems through extension to a periodic box, and the maximum
//! principle check.

use std::sync::Arc;

use crate::driver::{DifferentialRoughDriver, LevelCoefficients};
use crate::error::{Error, Result};
use crate::operators::{assemble_elliptic, Boundary, ScalarField, SpatialGrid};

use super::{DriverRecipe, Forcing, Scenario};

/// Node layers next to the boundary on which the driver must vanish.
const COLLAR: usize = 3;

/// A Dirichlet scenario embedded in a periodic box.
#[derive(Clone, Debug)]
pub struct Extension {
    pub scenario: Scenario,
    pub domain: SpatialGrid,
    /// Box index of the domain's first node along each axis.
    pub offset: [usize; 2],
}

impl Extension {
    fn box_index(&self, node: usize) -> usize {
        let [i0, i1] = self.domain.multi_index(node);
        self.scenario.spatial.index(i0 + self.offset[0], i1 + self.offset[1])
    }

    /// Values on the domain nodes.
    pub fn restrict(&self, f: &ScalarField) -> ScalarField {
        let values = (0..self.domain.len()).map(|k| f.values[self.box_index(k)]).collect();
        ScalarField::new(self.domain, values).expect("domain grid")
    }

    /// Largest `|f|` strictly outside the domain.
    pub fn outside_sup(&self, f: &ScalarField) -> f64 {
        let mut inside = vec![false; f.values.len()];
        for k in 0..self.domain.len() {
            inside[self.box_index(k)] = true;
        }
        f.values
            .iter()
            .zip(&inside)
            .filter(|(_, i)| !**i)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|f|` on the domain boundary nodes.
    pub fn trace_sup(&self, f: &ScalarField) -> f64 {
        (0..self.domain.len())
            .filter(|&k| self.domain.is_boundary(k))
            .map(|k| f.values[self.box_index(k)].abs())
            .fold(0.0, f64::max)
    }

    fn extend(&self, f: &ScalarField, outside: f64) -> ScalarField {
        let mut out = ScalarField::constant(self.scenario.spatial, outside);
        for k in 0..self.domain.len() {
            out.values[self.box_index(k)] = f.values[k];
        }
        out
    }
}

fn collar_violation(fields: &[&ScalarField]) -> Option<(usize, f64)> {
    for f in fields {
        for node in 0..f.grid.len() {
            if f.grid.boundary_layer(node) < COLLAR && f.values[node] != 0.0 {
                return Some((node, f.values[node]));
            }
        }
    }
    None
}

fn coefficient_fields(c: &LevelCoefficients) -> Vec<&ScalarField> {
    let mut v: Vec<&ScalarField> = c.x.iter().chain(&c.xx).chain(&c.l).collect();
    v.push(&c.x0);
    v.push(&c.l0);
    v
}

/// Extends a Dirichlet scenario to a periodic box with `margin` extra nodes on
/// each side: `a` becomes the identity outside the domain, the driver, `u_0`
/// and `f` are extended by zero. The driver must vanish on the three node
/// layers next to the boundary.
pub fn dirichlet_extend(sc: &Scenario, margin: usize) -> Result<Extension> {
    let dom = sc.spatial;
    if dom.is_periodic() {
        return Err(Error::Config("dirichlet_extend needs a Dirichlet scenario".into()));
    }
    if margin < 2 {
        return Err(Error::Parameter("the extension margin must be at least 2 nodes".into()));
    }
    for k in 0..sc.time.intervals() {
        if let Some((node, v)) = collar_violation(&coefficient_fields(sc.driver.interval(k))) {
            return Err(Error::Config(format!(
                "driver coefficient {v:e} at node {node} (interval {k}) inside the boundary collar; \
                 the noise must vanish within {} nodes of the boundary",
                COLLAR - 1
            )));
        }
    }
    let d = dom.dim;
    let mut extents = [1usize; 2];
    let mut lengths = dom.lengths;
    let mut origin = dom.origin;
    let mut offset = [0usize; 2];
    for a in 0..d {
        extents[a] = dom.extents[a] - 1 + 2 * margin;
        lengths[a] = extents[a] as f64 * dom.spacing[a];
        origin[a] = dom.origin[a] - margin as f64 * dom.spacing[a];
        offset[a] = margin;
    }
    let boxed = SpatialGrid::new(d, extents, lengths, origin, Boundary::Periodic)?;
    let mut ext = Extension {
        scenario: sc.clone(),
        domain: dom,
        offset,
    };
    // temporary scenario carrying the box grid, so that `extend` can index it
    ext.scenario.spatial = boxed;

    let mut slices = Vec::with_capacity(sc.elliptic.a.len());
    for slice in &sc.elliptic.a {
        let fields = (0..d * d)
            .map(|ij| {
                let f = ScalarField::new(dom, slice[ij].clone()).expect("domain grid");
                ext.extend(&f, if ij / d == ij % d { 1.0 } else { 0.0 })
            })
            .collect();
        slices.push(fields);
    }
    let elliptic = assemble_elliptic(boxed, slices, sc.elliptic.lambda)?;

    let extend_coeffs = |c: &LevelCoefficients| LevelCoefficients {
        x: c.x.iter().map(|f| ext.extend(f, 0.0)).collect(),
        x0: ext.extend(&c.x0, 0.0),
        xx: c.xx.iter().map(|f| ext.extend(f, 0.0)).collect(),
        l: c.l.iter().map(|f| ext.extend(f, 0.0)).collect(),
        l0: ext.extend(&c.l0, 0.0),
    };
    let intervals = (0..sc.time.intervals())
        .map(|k| extend_coeffs(sc.driver.interval(k)))
        .collect();
    let driver = DifferentialRoughDriver::from_intervals(
        sc.time.clone(),
        boxed,
        intervals,
        sc.driver.alpha,
        sc.driver.geometric,
    )?;
    let forcing = match &sc.forcing {
        Forcing::Zero => Forcing::Zero,
        Forcing::Nodes(v) => Forcing::Nodes(v.iter().map(|f| ext.extend(f, 0.0)).collect()),
    };
    let recipe = sc.recipe.as_ref().map(|r| DriverRecipe {
        path: r.path.clone(),
        sigma: r.sigma.iter().map(|s| s.iter().map(|f| ext.extend(f, 0.0)).collect()).collect(),
        rho: r.rho.iter().map(|f| ext.extend(f, 0.0)).collect(),
        ito: r.ito,
    });
    let scenario = Scenario {
        time: sc.time.clone(),
        spatial: boxed,
        elliptic,
        forcing,
        u0: ext.extend(&sc.u0, 0.0),
        driver: Arc::new(driver),
        recipe,
        scheme: sc.scheme,
        exponents: sc.exponents,
        p: sc.p,
    };
    scenario.validate()?;
    ext.scenario = scenario;
    Ok(ext)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Violation {
    pub time: usize,
    pub node: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxPrincipleReport {
    /// `min(0, min u_0)` and `max(0, max u_0)`.
    pub lower: f64,
    pub upper: f64,
    pub tol: f64,
    pub min_seen: f64,
    pub max_seen: f64,
    pub violations: Vec<Violation>,
}

impl MaxPrincipleReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `min(0, min u_0) - tol <= u <= max(0, max u_0) + tol` at every node
/// and time, with `tol = c (Δt + h²)`.
pub fn max_principle_check(u: &[ScalarField], u0: &ScalarField, dt: f64, c: f64) -> MaxPrincipleReport {
    let h = u0.grid.spacing[..u0.grid.dim].iter().cloned().fold(0.0, f64::max);
    let tol = c * (dt + h * h);
    let lower = u0.values.iter().cloned().fold(0.0, f64::min);
    let upper = u0.values.iter().cloned().fold(0.0, f64::max);
    let mut violations = Vec::new();
    let mut min_seen = f64::INFINITY;
    let mut max_seen = f64::NEG_INFINITY;
    for (time, f) in u.iter().enumerate() {
        for (node, &value) in f.values.iter().enumerate() {
            min_seen = min_seen.min(value);
            max_seen = max_seen.max(value);
            if value < lower - tol || value > upper + tol || !value.is_finite() {
                violations.push(Violation { time, node, value });
            }
        }
    }
    MaxPrincipleReport {
        lower,
        upper,
        tol,
        min_seen,
        max_seen,
        violations,
    }
}
