use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::Entries;
use crate::policy::{Embodiment, GoalMode, ModelConfig};
use crate::sim::WorldConfig;

/// Everything a training run needs. Loaded from a flat `key = value` file;
/// `#` starts a comment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub total_steps: u64,
    pub rollouts: usize,
    pub stage_lengths: Vec<usize>,
    pub stage_thresholds: Vec<u64>,

    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub value_loss_weight: f64,
    pub entropy_weight: f64,
    pub update_repeats: usize,
    pub minibatches_per_update: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub learner_shards: usize,
    /// Worker rows per forward/backward chunk during updates.
    pub rows_per_chunk: usize,

    pub d_model: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub encoder_ffn: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub decoder_ffn: usize,
    pub backbone_width: usize,
    pub box_encoding_dim: usize,
    pub patch: usize,
    pub obs_size: usize,
    pub embodiment: Embodiment,
    pub goal_mode: GoalMode,

    pub min_rooms: usize,
    pub max_rooms: usize,
    pub num_classes: usize,
    pub train_houses: usize,
    pub train_house_seed: u64,
    pub eval_house_seed: u64,
    pub eval_episodes: usize,
    /// Updates between evaluations; 0 disables periodic evaluation.
    pub eval_interval: usize,
    /// Updates between checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    /// Episode step budget; 0 uses the embodiment's.
    pub max_episode_steps: usize,
    pub out_dir: PathBuf,
}

const REQUIRED: [&str; 3] = ["seed", "total_steps", "rollouts"];

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            total_steps: 3_000_000,
            rollouts: 16,
            stage_lengths: vec![32, 64, 128],
            stage_thresholds: vec![200_000, 400_000],
            learning_rate: 2e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.1,
            value_loss_weight: 0.5,
            entropy_weight: 0.01,
            update_repeats: 4,
            minibatches_per_update: 1,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            learner_shards: 1,
            rows_per_chunk: 4,
            d_model: 512,
            encoder_layers: 3,
            encoder_heads: 8,
            encoder_ffn: 2048,
            decoder_layers: 3,
            decoder_heads: 8,
            decoder_ffn: 1376,
            backbone_width: 384,
            box_encoding_dim: 64,
            patch: 14,
            obs_size: 56,
            embodiment: Embodiment::LoCoBot,
            goal_mode: GoalMode::Category,
            min_rooms: 2,
            max_rooms: 3,
            num_classes: 5,
            train_houses: 1000,
            train_house_seed: 0,
            eval_house_seed: 1_000_000,
            eval_episodes: 200,
            eval_interval: 50,
            checkpoint_interval: 50,
            max_episode_steps: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut e = Entries::parse(text)?;
        e.require(&REQUIRED)?;
        let mut c = TrainConfig::default();
        e.take("seed", &mut c.seed)?;
        e.take("total_steps", &mut c.total_steps)?;
        e.take("rollouts", &mut c.rollouts)?;
        e.take_list("stage_lengths", &mut c.stage_lengths)?;
        e.take_list("stage_thresholds", &mut c.stage_thresholds)?;
        e.take("learning_rate", &mut c.learning_rate)?;
        e.take("gamma", &mut c.gamma)?;
        e.take("gae_lambda", &mut c.gae_lambda)?;
        e.take("clip", &mut c.clip)?;
        e.take("value_loss_weight", &mut c.value_loss_weight)?;
        e.take("entropy_weight", &mut c.entropy_weight)?;
        e.take("update_repeats", &mut c.update_repeats)?;
        e.take("minibatches_per_update", &mut c.minibatches_per_update)?;
        e.take("max_grad_norm", &mut c.max_grad_norm)?;
        e.take("normalize_advantages", &mut c.normalize_advantages)?;
        e.take("adam_beta1", &mut c.adam_beta1)?;
        e.take("adam_beta2", &mut c.adam_beta2)?;
        e.take("adam_eps", &mut c.adam_eps)?;
        e.take("learner_shards", &mut c.learner_shards)?;
        e.take("rows_per_chunk", &mut c.rows_per_chunk)?;
        e.take("d_model", &mut c.d_model)?;
        e.take("encoder_layers", &mut c.encoder_layers)?;
        e.take("encoder_heads", &mut c.encoder_heads)?;
        e.take("encoder_ffn", &mut c.encoder_ffn)?;
        e.take("decoder_layers", &mut c.decoder_layers)?;
        e.take("decoder_heads", &mut c.decoder_heads)?;
        e.take("decoder_ffn", &mut c.decoder_ffn)?;
        e.take("backbone_width", &mut c.backbone_width)?;
        e.take("box_encoding_dim", &mut c.box_encoding_dim)?;
        e.take("patch", &mut c.patch)?;
        e.take("obs_size", &mut c.obs_size)?;
        if let Some((line, raw)) = e.map.remove("embodiment") {
            c.embodiment = Embodiment::parse(&raw).map_err(|err| Error::Config(format!("line {line}: {err}")))?;
        }
        if let Some((line, raw)) = e.map.remove("goal_mode") {
            c.goal_mode = GoalMode::parse(&raw).map_err(|err| Error::Config(format!("line {line}: {err}")))?;
        }
        e.take("min_rooms", &mut c.min_rooms)?;
        e.take("max_rooms", &mut c.max_rooms)?;
        e.take("num_classes", &mut c.num_classes)?;
        e.take("train_houses", &mut c.train_houses)?;
        e.take("train_house_seed", &mut c.train_house_seed)?;
        e.take("eval_house_seed", &mut c.eval_house_seed)?;
        e.take("eval_episodes", &mut c.eval_episodes)?;
        e.take("eval_interval", &mut c.eval_interval)?;
        e.take("checkpoint_interval", &mut c.checkpoint_interval)?;
        e.take("max_episode_steps", &mut c.max_episode_steps)?;
        e.take("out_dir", &mut c.out_dir)?;
        e.finish()?;
        c.validate()?;
        Ok(c)
    }

    /// The file format accepted by [`Self::parse`].
    pub fn to_text(&self) -> String {
        let list = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let lens: Vec<u64> = self.stage_lengths.iter().map(|&x| x as u64).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("seed", self.seed.to_string());
        kv("total_steps", self.total_steps.to_string());
        kv("rollouts", self.rollouts.to_string());
        kv("stage_lengths", list(&lens));
        kv("stage_thresholds", list(&self.stage_thresholds));
        kv("learning_rate", self.learning_rate.to_string());
        kv("gamma", self.gamma.to_string());
        kv("gae_lambda", self.gae_lambda.to_string());
        kv("clip", self.clip.to_string());
        kv("value_loss_weight", self.value_loss_weight.to_string());
        kv("entropy_weight", self.entropy_weight.to_string());
        kv("update_repeats", self.update_repeats.to_string());
        kv("minibatches_per_update", self.minibatches_per_update.to_string());
        kv("max_grad_norm", self.max_grad_norm.to_string());
        kv("normalize_advantages", self.normalize_advantages.to_string());
        kv("adam_beta1", self.adam_beta1.to_string());
        kv("adam_beta2", self.adam_beta2.to_string());
        kv("adam_eps", self.adam_eps.to_string());
        kv("learner_shards", self.learner_shards.to_string());
        kv("rows_per_chunk", self.rows_per_chunk.to_string());
        kv("d_model", self.d_model.to_string());
        kv("encoder_layers", self.encoder_layers.to_string());
        kv("encoder_heads", self.encoder_heads.to_string());
        kv("encoder_ffn", self.encoder_ffn.to_string());
        kv("decoder_layers", self.decoder_layers.to_string());
        kv("decoder_heads", self.decoder_heads.to_string());
        kv("decoder_ffn", self.decoder_ffn.to_string());
        kv("backbone_width", self.backbone_width.to_string());
        kv("box_encoding_dim", self.box_encoding_dim.to_string());
        kv("patch", self.patch.to_string());
        kv("obs_size", self.obs_size.to_string());
        kv("embodiment", self.embodiment.name().to_string());
        kv("goal_mode", self.goal_mode.name().to_string());
        kv("min_rooms", self.min_rooms.to_string());
        kv("max_rooms", self.max_rooms.to_string());
        kv("num_classes", self.num_classes.to_string());
        kv("train_houses", self.train_houses.to_string());
        kv("train_house_seed", self.train_house_seed.to_string());
        kv("eval_house_seed", self.eval_house_seed.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("eval_interval", self.eval_interval.to_string());
        kv("checkpoint_interval", self.checkpoint_interval.to_string());
        kv("max_episode_steps", self.max_episode_steps.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must lie in [0, 1], got {}", self.gae_lambda));
        }
        if self.clip <= 0.0 {
            return bad(format!("clip must be positive, got {}", self.clip));
        }
        if self.rollouts == 0 || self.update_repeats == 0 || self.learner_shards == 0 || self.rows_per_chunk == 0 {
            return bad("rollouts, update_repeats, learner_shards and rows_per_chunk must be positive".into());
        }
        if self.minibatches_per_update != 1 {
            return bad("only one minibatch per update is supported".into());
        }
        if self.stage_lengths.is_empty() || self.stage_lengths.contains(&0) {
            return bad("stage_lengths must be a nonempty list of positive lengths".into());
        }
        if self.stage_thresholds.len() + 1 != self.stage_lengths.len() {
            return bad(format!(
                "{} stage lengths need {} thresholds, got {}",
                self.stage_lengths.len(),
                self.stage_lengths.len() - 1,
                self.stage_thresholds.len()
            ));
        }
        if self.stage_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return bad("stage_thresholds must be strictly increasing".into());
        }
        let first = (self.rollouts * self.stage_lengths[0]) as u64;
        if self.total_steps < first {
            return bad(format!("total_steps {} is below one batch of {first} frames", self.total_steps));
        }
        if self.learning_rate <= 0.0 || self.max_grad_norm <= 0.0 {
            return bad("learning_rate and max_grad_norm must be positive".into());
        }
        if self.train_houses == 0 {
            return bad("train_houses must be positive".into());
        }
        self.model_config().validate()?;
        self.world_config().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            encoder_layers: self.encoder_layers,
            encoder_heads: self.encoder_heads,
            encoder_ffn: self.encoder_ffn,
            decoder_layers: self.decoder_layers,
            decoder_heads: self.decoder_heads,
            decoder_ffn: self.decoder_ffn,
            patch: self.patch,
            obs_height: self.obs_size,
            obs_width: self.obs_size,
            num_classes: self.num_classes,
            backbone_width: self.backbone_width,
            box_encoding_dim: self.box_encoding_dim,
            embodiment: self.embodiment,
            goal_mode: self.goal_mode,
            rope_base: 10000.0,
            cache_capacity: self.episode_steps().max(*self.stage_lengths.iter().max().unwrap_or(&1)) + 1,
            backbone_seed: self.seed ^ 0x5eed_0001,
            init_seed: self.seed ^ 0x5eed_0002,
        }
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            min_rooms: self.min_rooms,
            max_rooms: self.max_rooms,
            num_classes: self.num_classes,
            ..WorldConfig::default()
        }
    }

    pub fn episode_steps(&self) -> usize {
        if self.max_episode_steps == 0 {
            self.embodiment.max_steps()
        } else {
            self.max_episode_steps
        }
    }

    /// Longest rollout length, which is also the decoder context window.
    pub fn context_window(&self) -> usize {
        *self.stage_lengths.last().expect("validated nonempty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 1\ntotal_steps = 192\nrollouts = 2\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = TrainConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.rollouts, 2);
        assert_eq!(c.stage_lengths, vec![32, 64, 128]);
        assert_eq!(c.learning_rate, 2e-4);
        assert_eq!((c.clip, c.update_repeats, c.max_grad_norm), (0.1, 4, 0.5));
    }

    #[test]
    fn missing_key_is_named() {
        let err = TrainConfig::parse("seed = 1\nrollouts = 2\n").unwrap_err().to_string();
        assert!(err.contains("total_steps"), "{err}");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = TrainConfig::parse(&format!("{MINIMAL}# comment\ngamma = 1.5\n")).unwrap_err().to_string();
        assert!(err.contains("gamma"), "{err}");
        let err = TrainConfig::parse(&format!("{MINIMAL}\nclip = abc\n")).unwrap_err().to_string();
        assert!(err.contains("line 5") && err.contains("clip"), "{err}");
        let err = TrainConfig::parse(&format!("{MINIMAL}bogus = 3\n")).unwrap_err().to_string();
        assert!(err.contains("line 4") && err.contains("bogus"), "{err}");
        let err = TrainConfig::parse(&format!("{MINIMAL}just words\n")).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn text_roundtrip() {
        let mut c = TrainConfig::parse(MINIMAL).unwrap();
        c.goal_mode = GoalMode::Both;
        c.embodiment = Embodiment::Stretch;
        c.stage_thresholds = vec![100, 300];
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }
}
