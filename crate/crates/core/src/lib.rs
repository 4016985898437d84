//! Dual-pixel camera simulation toolkit.
//!
//! A dual-pixel sensor captures two sub-aperture views in a single exposure:
//! a tiny-baseline stereo pair whose disparity and defocus blur both encode
//! depth. This crate models that camera with thin-lens geometry
//! ([`optics`]), synthesizes left/right view pairs from RGB-D input with a
//! footprint-scatter algorithm whose cost is independent of blur size
//! ([`simulator`]), and inverts the model with two classical estimators
//! ([`estimator`]). Reference losses ([`losses`]), evaluation metrics
//! ([`metrics`]) and bulk dataset generation ([`dataset`]) round out the
//! toolkit.
//!
//! All distances, including scene depth, are measured in pixel units.
//! Heavy operations are parallel and deterministic: results are bitwise
//! identical for any worker count.

pub mod dataset;
pub mod depth;
pub mod error;
pub mod estimator;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod optics;
pub mod simulator;

pub use error::{Error, Result};

/// Pins the global worker pool size. Call once at startup; later calls are
/// ignored by rayon. Results never depend on this value.
pub fn init_worker_pool(workers: usize) -> std::result::Result<(), rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global()
}
