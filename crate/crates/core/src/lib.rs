//! Guided-residual forensics toolkit.
//!
//! * [`image`]: planar rasters, Netpbm/PNG I/O, integral-image box means.
//! * [`guided`]: the O(N) guided filter.
//! * [`mte`]: guided residuals and the high-pass baseline.
//! * [`afm`]: channel attention and loss-weighted stream fusion.
//! * [`model`]: the dual-stream classifier, training and checkpoints.
//! * [`metrics`]: accuracy, rank AUC, confusion matrices.
//! * [`config`]: TOML run configuration.
//! * [`bench`]: guided-filter timing across radii.
//! * [`ablation`]: multi-seed variant comparisons and their tables.
//! * [`synth`]: procedural datasets with injected traces.

pub mod ablation;
pub mod afm;
pub mod bench;
pub mod config;
pub mod error;
pub mod guided;
pub mod image;
pub mod metrics;
pub mod model;
pub mod mte;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
