//! Inertial-only tracking for pedalled shared bikes.
//!
//! The crate is organised around the processing chain of a ride:
//!
//! - [`model`]: planar poses, motion deltas and the incremental trajectory update.
//! - [`sins`]: a classical strapdown dead-reckoning baseline.
//! - [`mtimnet`]: the multi-task mixture-of-experts motion network, with its
//!   own reverse-mode autodiff tape in [`autodiff`].
//! - [`pws`]: pseudo wheel speed from pedalling periodicity.
//! - [`fusion`]: inverse-variance fusion of network and wheel-speed displacements.
//! - [`metrics`]: ATE/RTE/PDE/AYE, CEP percentiles, coverage.
//! - [`synth`]: a synthetic ride generator with exact ground truth.
//! - [`io`]: the CSV formats shared by the command line tool.

pub mod autodiff;
pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod model;
pub mod mtimnet;
pub mod pipeline;
pub mod pws;
pub mod seed;
pub mod sins;
pub mod synth;

pub use error::{Error, Result};
pub use model::{
    integrate_deltas, integrate_deltas_at, step_pose, wrap_angle, ImuSample, ImuWindow,
    MotionDelta, Pose2D, Trajectory,
};
