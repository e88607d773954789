//! CPU tensor engine and U-net segmentation network.
//!
//! Training runs in `f32`. Every layer is generic over [`Scalar`] so the
//! same code can be re-evaluated in `f64` for finite-difference checks.
//! Everything here is single-threaded and bitwise deterministic for a fixed
//! seed.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod tensor;
pub mod train;
pub mod unet;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use layers::{
    concat_channels, conv2d_bwd, conv2d_fwd, maxpool2_bwd, maxpool2_fwd, relu_bwd, relu_fwd,
    softmax_bwd, softmax_channels, split_channels, upsample_nearest2_bwd, upsample_nearest2_fwd,
    Conv2d, ConvGrads,
};
pub use loss::{focal_tversky_loss, soft_counts, tversky_term, SoftCounts, TverskyConfig};
pub use tensor::{gemm, DenormalGuard, Scalar, Tensor4};
pub use train::{
    argmax_map, dataset_loss, predict, predict_batch, train, train_with, EarlyStopping, EpochRecord,
    Prediction, Samples, StopDecision, TrainConfig, TrainHistory, TrainOutcome,
};
pub use unet::{build_unet, ForwardCache, Unet, UnetSpec, BACKGROUND_PRIOR};
