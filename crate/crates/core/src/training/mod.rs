//! Two-stage training, end-to-end training, checkpoints and synthesis.

mod adam;
mod checkpoint;
mod config;
mod data;
mod evaluate;
mod synth;
mod trainer;

#[cfg(test)]
mod testutil;

pub use adam::{Adam, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState, CHECKPOINT_VERSION};
pub use config::{Stage, TrainConfig, STAGE1_LR, STAGE2_LR};
pub use data::{plain_batches, speaker_pair_batches, BatchEntry, Dataset, PreparedClip};
pub use evaluate::{evaluate_clips, heldout_lve, per_speaker_lve, style_separation, synthesize_clip, StyleSeparation};
pub use synth::{synthesize, SynthMode, Synthesizer};
pub use trainer::{loss_csv, train_joint, train_stage1, train_stage2, trainable_groups, LossLog, TrainOptions, TrainOutcome};
