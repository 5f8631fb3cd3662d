//! On-policy PPO training: rollout collection, advantage estimation, the
//! clipped surrogate update, rollout-length scheduling and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod eval;
mod gae;
mod ppo;
mod reward;
mod rollout;
mod run;
mod schedule;
mod update;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use eval::{eval_tasks, evaluate, repeat_evals, EvalReport, EvalSettings, MeanStd, RepeatedEval};
pub use gae::compute_gae;
pub use ppo::{log_prob, normalize, ppo_loss, LossReport, PpoTargets, PpoWeights};
pub use reward::{shape_reward, RewardState, STEP_PENALTY, SUCCESS_REWARD};
pub use rollout::{camera_for, collect_rollouts, sample_action, RolloutBuffer, TrainWorld, Worker, WorkerState};
pub use run::{read_metrics, RunPaths, Trainer, UpdateRecord};
pub use schedule::schedule_rollout_length;
pub use update::{minibatch_grads, rows_loss_grads, update, UpdateReport, UpdateSettings};
