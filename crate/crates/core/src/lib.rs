//! Round-robin differential phase-shift QKD with orbital-angular-momentum modes.
//!
//! - [`modes`]: the L-mode state space, Alice's states, Bob's projectors and
//!   the azimuthal phase-element picture of both.
//! - [`channel`]: noise models (dephasing, crosstalk, mode phases, aperture,
//!   white noise, measured matrices).
//! - [`protocol`]: Monte Carlo rounds, detection, sifting and QBER.
//! - [`keyrate`]: entropies, the original and improved key-rate bounds, and
//!   error thresholds.
//! - [`matrix`]: probability-of-detection matrices and their QBER.
//! - [`cli`]: the `rrdps` command-line workflows.

pub mod channel;
pub mod cli;
pub mod error;
pub mod keyrate;
pub mod matrix;
pub mod modes;
pub mod protocol;

pub use error::{Error, Result};
