//! Training, transfer and fine-tuning.
//!
//! [`train`] minimizes mean squared error on standardized targets with
//! Adam, clips the global gradient norm and keeps the weights of the best
//! validation epoch. It stops once the validation loss has gone
//! `patience` epochs without a new strict minimum.
//!
//! Each tensor's learning rate is `base_lr * config.lr_scale * group.lr_scale`.
//! Frozen groups take no gradient at all.
//!
//! Batches are cut into fixed chunks whose gradients are computed in
//! parallel and summed in chunk order, so a run is reproducible for any
//! thread count.

mod adam;
mod config;
mod early;
mod finetune;
mod fit;
mod plan;
mod transfer;

pub use adam::{adam_step, clip_global_norm, AdamParams, Moments};
pub use config::{StopReason, TrainConfig, TrainHistory, LR_SCALES};
pub use early::{run_epochs, EarlyStopping, Verdict};
pub use finetune::{ensure_disjoint, finetune, holdout, FinetuneOutcome, FINETUNE_LR_SCALES, MIN_HELD_OUT};
pub use fit::{loss_and_gradient, standardized_mse, train, trainable_mask, TrainOutcome};
pub use plan::{run_stage_plan, PlanSettings, StageArtifact, StageKind, StagePlan, StageSpec};
pub use transfer::{transfer, transfer_sic_to_dic, GraftReport, Reinitialized, COPIED_LR_SCALE};
