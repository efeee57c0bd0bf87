//! Weak chlorophyll-fluorescence labels for multispectral field tiles.
//!
//! Generative models (Gaussian mixture, K-nearest neighbors, kernel density)
//! are fitted on a small set of `(date, NDVI, CF)` ground-truth samples and
//! sampled to label unlabeled NDVI tiles. Small residual-CNN and
//! bidirectional-LSTM regressors are then trained on the weak labels. A
//! synthetic-field simulator with a closed-form conditional serves as the
//! end-to-end oracle.

pub mod error;
pub mod eval;
pub mod generative;
pub mod gmm;
pub mod histogram;
pub mod kde;
pub mod knn;
pub mod labeling;
pub mod nn;
pub mod raster;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use generative::{fit_model, FitConfig, FittedModel, ModelTag};
pub use histogram::Histogram1D;
pub use labeling::{FoldSpec, WeakLabel};
pub use raster::{MultispectralCapture, NdviImage, Tile, TileSeries, TilingConfig};
pub use stats::{GroundTruthSample, ScaleParams, ScaledTriple};
