use serde::{Deserialize, Serialize};

pub const STEP_PENALTY: f64 = -0.01;
pub const SUCCESS_REWARD: f64 = 10.0;

/// Per-episode bookkeeping for the shaped reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardState {
    /// Smallest straight-line target distance seen so far this episode.
    pub best_distance: f64,
    pub step_count: usize,
}

impl RewardState {
    pub fn new(initial_distance: f64) -> Self {
        Self { best_distance: initial_distance, step_count: 0 }
    }
}

/// Step penalty, success bonus, and progress toward the target measured
/// only against the best distance reached so far (moving away costs
/// nothing extra).
pub fn shape_reward(prev: RewardState, new_distance: f64, success: bool) -> (f64, RewardState) {
    let progress = (prev.best_distance - new_distance).max(0.0);
    let reward = STEP_PENALTY + if success { SUCCESS_REWARD } else { 0.0 } + progress;
    let next = RewardState { best_distance: prev.best_distance.min(new_distance), step_count: prev.step_count + 1 };
    (reward, next)
}
