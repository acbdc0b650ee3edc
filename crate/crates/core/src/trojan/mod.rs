//! Carrier networks that hide permuted networks: key schedules, permuted
//! views, the joint objective, training and extraction.

mod joint;
mod schedule;
mod train;
mod view;

pub use joint::{joint_loss, joint_loss_and_grad, JointGradient, TaskBatch};
pub use schedule::{KeySchedule, NormState, NormStateId, NormStates};
pub use train::{
    extract, learning_rate_for_epoch, train_trojan, EpochMetric, Extraction, TaskSpec, TrainedTrojan, TrojanConfig,
};
pub use view::{permuted_view, PermutedView};
