//! Multi-task inertial motion network.
//!
//! An IMU window is encoded by a temporal convolution, batch normalization
//! and average pooling. Eight shared experts transform the encoded feature;
//! each of the five tasks owns a gate that routes the feature to its two
//! highest-weighted experts and a head that regresses the task output:
//!
//! | task | output |
//! |------|--------|
//! | 0 | displacement `dd_hat` (softplus, never negative) |
//! | 1 | heading increment `dpsi_hat` |
//! | 2 | displacement residual `e_dd` |
//! | 3 | heading residual `e_dpsi` |
//! | 4 | log-variances `log_var_dd`, `log_var_dpsi` |
//!
//! Training minimises, per target, the heteroscedastic negative
//! log-likelihood plus a smooth-L1 fit of the residual head to the
//! (detached) primary error. See [`loss`].

mod checkpoint;
mod config;
pub mod loss;
mod net;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{ModelConfig, TrainConfig};
pub use loss::{loss, loss_with_gradients, LossTerms};
pub use net::{
    corrected_delta, routing_weights, BatchStats, ForwardMode, MotionEstimate, Mtimnet, NetOutputs,
    TASK_COUNT,
};
pub use params::{ParamStore, Tensor};
pub use train::{
    batch_loss_plain, batch_loss_tape, train, train_model, Adam, TapedBatch, TrainOutcome,
};
