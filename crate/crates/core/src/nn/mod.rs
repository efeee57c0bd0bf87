//! Small neural regressors with hand-written backpropagation.
//!
//! Parameters of a network live in one flat `Vec<f64>`; layers hold
//! [`Slot`]s into it, and gradients use the same layout.

pub mod conv;
pub mod gradcheck;
pub mod lstm;
pub mod model;
pub mod persist;
pub mod residual;
pub mod tensor;
pub mod train;
pub mod trunk;

pub use lstm::{bilstm_regress, lstm_step, BiLstm, LstmParams};
pub use model::{clamp01, ArchConfig, Example, NetKind, Network};
pub use persist::{load_weights, save_weights, WeightHeader};
pub use residual::{residual_forward, ResidualBlockSpec};
pub use tensor::{Activation, ParamLayout, Slot, Tensor};
pub use train::{mean_loss, train, EpochRecord, TrainConfig, TrainOutcome};
pub use trunk::{cnn_feature_extract, compound_scale, CompoundScalingSpec, Trunk, TrunkConfig};
