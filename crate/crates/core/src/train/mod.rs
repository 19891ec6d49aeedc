//! Parameter init, Adam, checkpoints, the pretraining loop, decoder-dropping
//! export and the finetune / cloze evaluation paths.

mod checkpoint;
mod export;
mod finetune;
mod init;
mod optim;
mod pretrain;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use export::{export_encoder, has_pretraining_head};
pub use finetune::{evaluate_cloze, finetune_classify, ClozeReport, FinetuneResult, FinetuneTaskSpec};
pub use init::init_params;
pub use optim::{adam_step, lr_at, AdamConfig, AdamState};
pub use pretrain::{loss_windows, read_losses, run_pretrain, MetricRecord, Objective, RunOutput, Trainer};
