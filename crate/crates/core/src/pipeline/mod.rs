//! Training phases, checkpoints and the baseline/fast inference paths.

pub mod checkpoint;
pub mod config;
pub mod infer;
pub mod train;

pub use checkpoint::{Checkpoint, Phase};
pub use config::{
    Config, InferenceMode, StageOrder, SynthConfig, TrainConfig, FULL_SCALE_BATCH, FULL_SCALE_CROP,
    FULL_SCALE_GPP_INPUT,
};
pub use infer::{bench, enhance_pipeline, BenchEntry, BenchReport, EnhanceOptions, MIN_EXTENT};
pub use train::{
    finetune, load_pairs, pretrain_gppnet, train_joint, write_loss_log, LossRecord, Pair, TrainOutcome, Trainer,
};
