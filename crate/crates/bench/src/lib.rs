//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;
use std::sync::Arc;

use rpde_core::driver::{canonical_lift, ChannelPath};
use rpde_core::{DifferentialRoughDriver, EllipticOp, FirstOrderOp, ScalarField, Scenario, SpatialGrid, TimeGrid};

pub fn transport_op(nodes: usize) -> FirstOrderOp {
    let g = SpatialGrid::periodic_1d(nodes, 1.0).unwrap();
    let sigma = ScalarField::from_fn(g, |x| 0.3 + 0.2 * (2.0 * PI * x[0]).cos());
    FirstOrderOp::new(vec![sigma], ScalarField::zeros(g)).unwrap()
}

/// Smooth single-channel driver `sin(2πt)` times a variable transport field.
pub fn smooth_driver(nodes: usize, steps: usize, q: usize) -> DifferentialRoughDriver {
    let path = ChannelPath {
        z: |t: f64| 0.5 * (2.0 * PI * t).sin(),
        op: transport_op(nodes),
    };
    canonical_lift(Arc::new(path), TimeGrid::uniform(steps, 0.1).unwrap(), q, 0.45).unwrap()
}

pub fn transport_scenario(nodes: usize, steps: usize) -> Scenario {
    let d = smooth_driver(nodes, steps, 8);
    let g = d.spatial;
    let u0 = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
    Scenario::new(d.grid.clone(), EllipticOp::isotropic(g, 1.0).unwrap(), u0, d).unwrap()
}
