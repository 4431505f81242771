//! Interactive memory-based volumetric segmentation at desk scale.
//!
//! The crate covers the full pipeline: volume IO and FoV standardization,
//! synthetic phantoms with analytic ground truth, chunk-shuffled training of a
//! small promptable transformer with a cross-attention memory bank, simulated
//! click prompting, whole-volume mask propagation, cartilage morphometry, and
//! statistical evaluation/reporting.

pub mod error;
pub mod fov;
pub mod nifti;
pub mod rawio;
pub mod rng;
pub mod volume;

pub use error::{Error, Result};
pub mod augment;
pub mod edt;
pub mod metrics;
pub mod model;
pub mod morpho;
pub mod phantom;
pub mod prompt;
pub mod propagate;
pub mod report;
pub mod sampler;
pub mod stats;
pub mod train;
