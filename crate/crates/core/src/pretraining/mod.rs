//! Self-supervised pre-training: masking, the three objectives, the
//! optimization loop and checkpoints.

mod checkpoint;
mod losses;
mod mask;
mod optim;
mod trainer;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use losses::{clean_targets, loss_mgm, loss_mtm, loss_mvm, CleanTargets, LossReport};
pub use mask::{derive_seed, make_mask_plan, MaskPlan};
pub use optim::{lr_at, warmup_steps, AdamW};
pub use trainer::{pretrain_objective, StepLog, Trainer};

