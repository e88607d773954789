//! spadseg: object detection on 16-bin single-photon dToF sensor data.
//!
//! The crate covers the full path from photons to detection scores:
//!
//! 1. [`simkit`] renders parametric scenes and samples Poisson photon-timing
//!    histograms (64×32 macropixels × 16 bins) and photon-counting intensity
//!    frames (256×128 SPADs) at a controlled signal-to-background ratio.
//! 2. [`histproc`] turns raw sensor frames into network inputs: median
//!    background, windowed centre-of-mass depth, active intensity, skew
//!    calibration, SPC filtering/resizing and normalization.
//! 3. [`datakit`] builds one-hot ground truth, augments and splits datasets,
//!    and stores them in a CRC-checked manifest + blob container.
//! 4. [`neuralseg`] is a small CPU tensor engine with a U-net, the Focal
//!    Tversky loss, Adam and an early-stopping training loop.
//! 5. [`evalkit`] extracts instances from segmentation maps, matches them by
//!    IoU, and computes detection metrics, paired failure tables and Welch
//!    t-tests.

pub mod datakit;
pub mod error;
pub mod evalkit;
pub mod grid;
pub mod histproc;
pub mod neuralseg;
pub mod pipeline;
pub mod simkit;

pub use error::{Error, Result};
pub use grid::Grid;

/// Macropixel grid width (histogram mode).
pub const MACRO_W: usize = 64;
/// Macropixel grid height (histogram mode, half-array operation).
pub const MACRO_H: usize = 32;
/// SPAD grid width (photon-counting mode).
pub const SPAD_W: usize = 256;
/// SPAD grid height (photon-counting mode).
pub const SPAD_H: usize = 128;
/// SPADs per macropixel along each axis.
pub const SPADS_PER_MACRO: usize = 4;
/// Timing bins per histogram. The last bin is unusable and always zero.
pub const N_BINS: usize = 16;
/// Bins that carry data (1..=15).
pub const USABLE_BINS: usize = N_BINS - 1;
/// Largest value a 14-bit histogram register can hold.
pub const MAX_COUNT: u16 = (1 << 14) - 1;
/// Object classes plus background.
pub const N_CLASSES: usize = 7;
