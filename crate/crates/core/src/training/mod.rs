//! Losses, weight schedules and the adversarial training loop.

mod config;
mod log;
mod losses;
mod trainer;

pub use config::{DecayMode, DecaySchedule, LossWeights, TrainConfig};
pub use log::{EpochRecord, TrainingLog};
pub use losses::{
    adversarial_loss, discriminate, l1, pairwise_loss, pix2pix_loss, probabilities, sigmoid, AdversarialLoss,
    PairwiseLoss, Pix2pixLoss, SideLoss, SideOutputs, LOG_FLOOR,
};
pub use trainer::{train, TrainOutcome, LOG_FILE};
