//! Thick cloud and cloud-shadow removal for co-registered multitemporal
//! image stacks.
//!
//! Each band is split into a temporally smooth clean element and a sparse,
//! spatially smooth cloud element by an ADMM solver ([`solver`]). The cloud
//! element is thresholded into masks ([`mask`]), the original clear pixels
//! are restored ([`compositor`]), and detail inside each cloud region is
//! cloned from the closest clean frame by solving a Poisson equation
//! ([`poisson`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compositor;
pub mod error;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod poisson;
pub mod simulate;
pub mod solver;
pub mod stack;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use mask::{Label, LabelMask, ThresholdConfig};
pub use pipeline::{run_remove, RemoveConfig, RemoveOutput};
pub use solver::{solve, Decomposition, SolverParams};
pub use stack::{ImageStack, PixelFormat, StackMeta};
pub use tensor::{Axis, BandTensor, Dims};
