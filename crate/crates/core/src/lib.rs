//! Parabolic optimal-transport flow with a second boundary condition for
//! general costs in the plane, plus the audits and monitors around it.
//!
//! The numerics are generic over [`scalar::Real`]; the aliases below fix
//! the scalar to `f64`.

pub mod boundary;
pub mod cost;
pub mod diagnostics;
pub mod domain;
pub mod dual;
pub mod flow;
pub mod linalg;
pub mod scalar;
pub mod scenario;

pub type Point = linalg::Vec2<f64>;
pub type Matrix = linalg::Mat2<f64>;
pub type Cost = cost::CostModel<f64>;
pub type Densities = cost::DensityPair<f64>;
pub type Domain = domain::DomainSpec<f64>;
pub type Boundary = boundary::BoundaryOperator<f64>;
pub type Problem = flow::FlowProblem<f64>;
pub type State = flow::FlowState<f64>;
pub type Solver = flow::SolverConfig<f64>;
