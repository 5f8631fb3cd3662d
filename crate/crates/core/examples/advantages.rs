//! Reward shaping and GAE on a hand-written trajectory that crosses an
//! episode boundary.

use navformer::trainer::{compute_gae, shape_reward, RewardState};

fn main() -> navformer::Result<()> {
    // Distances to the target after each step; the agent stops successfully
    // at step 5, then a fresh episode begins.
    let distances = [3.0, 2.75, 2.9, 2.5, 2.25, 2.0];
    let mut state = RewardState::new(3.2);
    let mut rewards = Vec::new();
    for (k, &d) in distances.iter().enumerate() {
        let (r, next) = shape_reward(state, d, k == 4);
        rewards.push(r);
        state = if k == 4 { RewardState::new(4.0) } else { next };
    }
    let values = [1.0, 1.2, 1.1, 1.5, 2.0, 0.3];
    let starts = [true, false, false, false, false, true];
    let (adv, ret) = compute_gae(&rewards, &values, 0.4, &starts, 0.99, 0.95)?;
    println!(" t  reward  value  advantage  return");
    for t in 0..rewards.len() {
        println!("{t:2} {:+7.3} {:6.2} {:+10.4} {:7.4}", rewards[t], values[t], adv[t], ret[t]);
    }
    Ok(())
}
