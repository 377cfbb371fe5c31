//! Functional hierarchical tensor density estimation for high-dimensional
//! Fokker-Planck equations.
//!
//! The pipeline simulates overdamped Langevin particles, fits a tree tensor
//! network density to each snapshot by hierarchical sketching, and exposes
//! evaluation, marginals, observables and sampling on the fitted model.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod applications;
pub mod basis;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod model;
pub mod sketching;
pub mod topology;

pub use applications::{
    estimate_observable, fit_snapshot, sample, solve_fokker_planck, two_point_correlation, CorrelationMap,
    FokkerPlanckSolution, Interpolation, Observable, SampleOutput,
};
pub use basis::FourierBasis;
pub use config::RunConfig;
pub use dynamics::{simulate, Drift, InitialState, Potential, PotentialKind, SdeConfig, TrajectoryBatch};
pub use error::{FhtError, NodeLabel, Result};
pub use model::{FhtModel, ModelMetadata, TensorCore};
pub use sketching::{build_default_sketches, sketch_density, SketchConfig, SketchFit, SketchSet};
pub use topology::{DimensionTree, GridSpec, NodeRole};
