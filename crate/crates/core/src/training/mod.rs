//! Losses, optimizer, schedules and the dense slice supervision loop.

pub mod losses;
pub mod optim;
mod train;

pub use losses::{
    bce_loss, boundary_weights, dice_loss, iou_loss, loss_primitive, masked_l1, masked_mse, slice_loss, slice_loss_graph,
    LossKind, SMOOTH,
};
pub use optim::{
    clip_grad_norm, clip_grad_value, cosine_lr, global_norm, optimizer_step, AdamState, AdamW, ClipMode, Scheduler,
};
pub(crate) use train::hex;
pub use train::{train, train_with, BoundaryWeight, Checkpoint, Dataset, EpochRecord, Sample, TrainConfig};
