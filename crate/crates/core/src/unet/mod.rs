//! Attention U-Net: gated skip connections, model assembly, training,
//! evaluation and checkpoints.

mod checkpoint;
mod config;
mod gate;
mod model;
mod suite;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE, WEIGHTS_FILE};
pub use config::{count_params, AttentionUNetConfig, Upsample};
pub use gate::{attention_gate_backward, attention_gate_forward, AttentionGate, GateCache, GatePair, GateTrace};
pub use model::{AttentionUNet, ConvBnRelu, DecoderLevel, DoubleConv, ModelCache, UpBlock};
pub use suite::{gradient_suite, SuiteEntry};
pub use train::{
    evaluate, evaluate_predictions, predict_split, train, train_with, EpochLog, EvalReport, PatchScore, TrainConfig,
    TrainLog,
};
