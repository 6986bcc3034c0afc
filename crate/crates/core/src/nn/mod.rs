//! The deep controller: tensors, layers with hand-written reverse passes,
//! the CRN, the ANC pipeline through the frozen secondary path, Adam and
//! the two-stage training loop.

pub mod crn;
pub mod layers;
pub mod optim;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use crn::{crn_forward, CrnConfig, CrnLayout, CrnParams};
pub use optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use pipeline::{anc_apply, residual_noise_loss, sample_loss_and_grad, speech_preserving_loss, AncOutput};
pub use tensor::{FeatureMap, Tensor};
pub use train::{train, Checkpoint, EpochRecord, SampleSource, Schedule, TrainConfig};
