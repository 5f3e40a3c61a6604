//! Differential rough drivers, sewing, and Davie-type solvers for parabolic
//! equations with rough transport noise.

pub mod driver;
pub mod error;
pub mod expr;
pub mod ito;
pub mod operators;
pub mod paths;
pub mod sewing;
pub mod solver;
pub mod temporal;

pub use driver::{DifferentialRoughDriver, LevelCoefficients, ScalarRoughPath};
pub use error::{Error, Result};
pub use expr::Expr;
pub use ito::AdmissibleF;
pub use operators::{Boundary, EllipticOp, FirstOrderOp, ScalarField, SecondOrderOp, SpatialGrid};
pub use paths::{MultiPath, PathKind, PathRecipe};
pub use solver::{ControlledSolution, DriverRecipe, Forcing, Scenario, Scheme};
pub use temporal::{ControlFn, TimeGrid, TwoParamField};
