//! Numerical tools for the Diederich-Fornaess index of pseudoconvex domains.

pub mod cr;
pub mod distance;
pub mod domain;
pub mod error;
pub mod estimator;
pub mod hermitian;
pub mod numdiff;
pub mod psh;
pub mod quadrature;
pub mod report;
pub mod sampling;

pub use cr::{BoundaryFrame, ConstantA, InvariantRow};
pub use distance::{project_to_boundary, DistanceJet, ProjectionResult};
pub use domain::{make_domain, ComplexJet, DefiningFunction, DomainOracle, DomainSpec, RealJet, Smoothness};
pub use error::{Error, Result};
pub use estimator::{Comparison, DfBounds, EstimatorConfig, IndexEstimate, InequalityMode, PshVerdict, WeightSpec};
pub use hermitian::{CPoint, HermitianForm, OneForm10, TangentVector, C64};
pub use psh::{PipelineConfig, PipelineReport};
pub use report::{Format, Record, RunConfig, RunReport, Status};
