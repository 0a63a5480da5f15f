//! Linear two-level Parareal/MGRIT: space-time systems, exact propagator
//! norms, temporal approximation constants, eigenvalue bounds and the model
//! problems used to test them.

pub mod eigbounds;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod model_problems;
pub mod prop_norms;
pub mod schemes;
pub mod spacetime;
pub mod tap;

pub use eigbounds::{
    BoundKind, BoundReport, ModePair, Region, FiniteBounds, Trust, WeightedNormFactors,
};
pub use error::{Error, Result};
pub use linalg::{CplxMat, RealMat};
pub use model_problems::{ProblemConfig, ProblemKind, SpatialProblem, VelocityField};
pub use prop_norms::PropagatorPair;
pub use schemes::{lookup, scheme_registry, ButcherTableau};
pub use spacetime::{CoarseSystem, ConvergenceTrace, MgritOptions, Relaxation, SpaceTimeSystem};
pub use tap::TapScan;

pub use faer::c64;
