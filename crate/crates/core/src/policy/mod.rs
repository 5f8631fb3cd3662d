//! Goal-conditioned transformer policy: observation → visual tokens →
//! state feature → belief → action logits and value.

mod backbone;
mod config;
mod decoder_cache;
mod inputs;
mod mask;
mod model;

pub use backbone::FrozenPatchEncoder;
pub use config::{Action, Embodiment, GoalMode, ModelConfig};
pub use decoder_cache::DecoderCache;
pub use inputs::{BBox, Detection, GoalSpec, Observation};
pub use mask::EpisodicAttentionMask;
pub use model::{sinusoid_encoding, OpCounters, PolicyModel, PolicyOutput};

#[cfg(test)]
mod tests;
