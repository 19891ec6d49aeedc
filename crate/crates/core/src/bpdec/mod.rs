//! The pretraining-only decoder: gradual unmasking, decoder stack,
//! encoder/decoder output mixing and the tied MLM head.

mod gua;
mod model;

pub use gua::{plan_unmasking, unmask_count, GuaSchedule, UnmaskPlan};
pub use model::{
    baseline_forward_loss, decoder_forward, mix_outputs, mlm_head, pretrain_forward_loss, MixPolicy,
    StepDiagnostics, StepRngs,
};
