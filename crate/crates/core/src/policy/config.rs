use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete navigation actions across both robot profiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveAhead,
    MoveBack,
    RotateLeft,
    RotateRight,
    RotateLeftSmall,
    RotateRightSmall,
    LookUp,
    LookDown,
    Done,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::MoveAhead => "MoveAhead",
            Action::MoveBack => "MoveBack",
            Action::RotateLeft => "RotateLeft",
            Action::RotateRight => "RotateRight",
            Action::RotateLeftSmall => "RotateLeftSmall",
            Action::RotateRightSmall => "RotateRightSmall",
            Action::LookUp => "LookUp",
            Action::LookDown => "LookDown",
            Action::Done => "Done",
        }
    }
}

const LOCOBOT_ACTIONS: [Action; 6] =
    [Action::MoveAhead, Action::RotateRight, Action::RotateLeft, Action::LookUp, Action::LookDown, Action::Done];

const STRETCH_ACTIONS: [Action; 7] = [
    Action::MoveAhead,
    Action::MoveBack,
    Action::RotateRight,
    Action::RotateLeft,
    Action::RotateRightSmall,
    Action::RotateLeftSmall,
    Action::Done,
];

/// Robot profile: action space, episode budget and success radius.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Embodiment {
    LoCoBot,
    Stretch,
}

impl Embodiment {
    pub fn actions(self) -> &'static [Action] {
        match self {
            Embodiment::LoCoBot => &LOCOBOT_ACTIONS,
            Embodiment::Stretch => &STRETCH_ACTIONS,
        }
    }

    pub fn num_actions(self) -> usize {
        self.actions().len()
    }

    pub fn action_index(self, action: Action) -> Option<usize> {
        self.actions().iter().position(|&a| a == action)
    }

    pub fn max_steps(self) -> usize {
        match self {
            Embodiment::LoCoBot => 500,
            Embodiment::Stretch => 600,
        }
    }

    pub fn success_distance(self) -> f64 {
        match self {
            Embodiment::LoCoBot => 1.0,
            Embodiment::Stretch => 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Embodiment::LoCoBot => "locobot",
            Embodiment::Stretch => "stretch",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "locobot" => Ok(Embodiment::LoCoBot),
            "stretch" => Ok(Embodiment::Stretch),
            other => Err(Error::Config(format!("unknown embodiment `{other}` (expected locobot|stretch)"))),
        }
    }
}

/// Which goal encoders feed the state encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GoalMode {
    Category,
    BBox,
    Both,
}

impl GoalMode {
    pub fn uses_category(self) -> bool {
        matches!(self, GoalMode::Category | GoalMode::Both)
    }

    pub fn uses_bbox(self) -> bool {
        matches!(self, GoalMode::BBox | GoalMode::Both)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "category" => Ok(GoalMode::Category),
            "bbox" => Ok(GoalMode::BBox),
            "both" => Ok(GoalMode::Both),
            other => Err(Error::Config(format!("unknown goal mode `{other}` (expected category|bbox|both)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GoalMode::Category => "category",
            GoalMode::BBox => "bbox",
            GoalMode::Both => "both",
        }
    }
}

/// Architecture hyperparameters of the policy network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub encoder_ffn: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub decoder_ffn: usize,
    pub patch: usize,
    pub obs_height: usize,
    pub obs_width: usize,
    pub num_classes: usize,
    pub backbone_width: usize,
    pub box_encoding_dim: usize,
    pub embodiment: Embodiment,
    pub goal_mode: GoalMode,
    pub rope_base: f64,
    pub cache_capacity: usize,
    pub backbone_seed: u64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 512,
            encoder_layers: 3,
            encoder_heads: 8,
            encoder_ffn: 2048,
            decoder_layers: 3,
            decoder_heads: 8,
            decoder_ffn: 1376,
            patch: 14,
            obs_height: 56,
            obs_width: 56,
            num_classes: 5,
            backbone_width: 384,
            box_encoding_dim: 64,
            embodiment: Embodiment::LoCoBot,
            goal_mode: GoalMode::Category,
            rope_base: 10000.0,
            cache_capacity: 600,
            backbone_seed: 0x5eed_0001,
            init_seed: 0x5eed_0002,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for fast tests and desk-scale runs.
    pub fn tiny(d_model: usize) -> Self {
        Self {
            d_model,
            encoder_heads: 8.min(d_model / 2).max(1),
            decoder_heads: 8.min(d_model / 2).max(1),
            encoder_ffn: 2 * d_model,
            decoder_ffn: 2 * d_model,
            backbone_width: 2 * d_model,
            box_encoding_dim: d_model.max(8),
            ..Self::default()
        }
    }

    /// Semantic channels: free space, wall, one per object class.
    pub fn obs_channels(&self) -> usize {
        2 + self.num_classes
    }

    pub fn tokens_per_frame(&self) -> usize {
        (self.obs_height / self.patch) * (self.obs_width / self.patch)
    }

    /// Tokens fed to the state encoder per frame: visual, goal rows, STATE.
    pub fn encoder_sequence_len(&self) -> usize {
        self.tokens_per_frame()
            + usize::from(self.goal_mode.uses_category())
            + if self.goal_mode.uses_bbox() { 5 } else { 0 }
            + 1
    }

    pub fn num_actions(&self) -> usize {
        self.embodiment.num_actions()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 {
            return bad("d_model must be positive".into());
        }
        if self.patch == 0 || self.obs_height % self.patch != 0 || self.obs_width % self.patch != 0 {
            return bad(format!(
                "observation {}x{} not divisible by patch size {}",
                self.obs_height, self.obs_width, self.patch
            ));
        }
        for (name, heads) in [("encoder", self.encoder_heads), ("decoder", self.decoder_heads)] {
            if heads == 0 || self.d_model % heads != 0 {
                return bad(format!("{name} heads {heads} must divide d_model {}", self.d_model));
            }
        }
        if self.decoder_layers > 0 && (self.d_model / self.decoder_heads) % 2 != 0 {
            return bad("decoder head width must be even for rotary embedding".into());
        }
        if self.box_encoding_dim % 2 != 0 || self.box_encoding_dim == 0 {
            return bad("box_encoding_dim must be a positive even number".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if self.cache_capacity == 0 {
            return bad("cache_capacity must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_space_sizes() {
        assert_eq!(Embodiment::LoCoBot.num_actions(), 6);
        assert_eq!(Embodiment::Stretch.num_actions(), 7);
        assert_eq!(Embodiment::LoCoBot.max_steps(), 500);
        assert_eq!(Embodiment::Stretch.success_distance(), 2.0);
    }

    #[test]
    fn default_config_shapes() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.tokens_per_frame(), 16);
        assert_eq!(cfg.d_model, 512);
    }

    #[test]
    fn rejects_bad_heads_and_patch() {
        let cfg = ModelConfig { encoder_heads: 7, ..ModelConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ModelConfig { obs_height: 50, ..ModelConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
