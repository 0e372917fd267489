//! Sampling from exponentially tilted laws by reweighted resampling and
//! diffusion, together with evaluators for the transport bounds, the plug-in
//! CLT variance and the score-perturbation inequalities that govern the
//! pipeline.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: the [`Dataset`] matrix type and CSV I/O.
//! * [`tilt`]: tilt families, weights, the plug-in measure, resampling and
//!   the exact rejection oracle.
//! * [`transport`]: Wasserstein distances (exact 1-D, sliced, small exact
//!   assignment), histogram TV and box discrepancies.
//! * [`bounds`]: MGF functionals and closed-form convergence bounds.
//! * [`diffusion`]: OU forward process, ε-prediction denoiser with manual
//!   backprop, training and reverse SDE sampling.
//! * [`scoregap`]: Lipschitz error fields and the Δ inequality suite.
//! * [`synth`]: synthetic targets (bounded correlated Beta mixture).
//! * [`experiments`]: the reproducible experiment drivers behind the CLI.

pub mod bounds;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod rng;
pub mod scoregap;
pub mod synth;
pub mod tilt;
pub mod transport;

pub use data::Dataset;
pub use error::{Error, Result};
pub use tilt::{TiltFamily, TiltFunction, TiltSpec, WeightedMeasure};
