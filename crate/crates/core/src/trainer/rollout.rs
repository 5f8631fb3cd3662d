use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gae::compute_gae;
use super::ppo::{log_prob, PpoTargets};
use super::reward::{shape_reward, RewardState, STEP_PENALTY};
use crate::error::{Error, Result};
use crate::policy::{DecoderCache, GoalMode, GoalSpec, OpCounters, PolicyModel};
use crate::sim::{generate_house_with, AgentPose, CameraConfig, EpisodeResult, House, NavEnv, SampledTask, TaskSampler, WorldConfig};
use crate::tensor::{Graph, Mat, Scalar};

/// Attempts at drawing a fresh episode before a worker gives up.
const RESET_ATTEMPTS: usize = 16;

/// The pool of training houses: house `i` is generated from seed
/// `base_seed + i` on demand, so nothing is kept in memory.
#[derive(Clone, Debug)]
pub struct TrainWorld {
    pub world: WorldConfig,
    pub base_seed: u64,
    pub houses: usize,
    pub sampler: TaskSampler,
}

impl TrainWorld {
    pub fn house(&self, index: usize) -> Result<Arc<House>> {
        generate_house_with(self.base_seed + index as u64, &self.world).map(Arc::new)
    }
}

/// Camera matching a square observation of side `size`.
pub fn camera_for(size: usize) -> CameraConfig {
    CameraConfig { width: size, height: size, ..CameraConfig::default() }
}

/// Serializable part of a worker, enough to rebuild it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerState {
    pub rng: ChaCha8Rng,
    pub house_index: usize,
    pub start: AgentPose,
    pub target_class: usize,
    pub shortest_path: f64,
    pub pose: AgentPose,
    pub steps: usize,
    pub path_length: f64,
    pub reward: RewardState,
    pub cache_offset: usize,
}

/// One environment stream with its own RNG and decoder cache.
#[derive(Clone, Debug)]
pub struct Worker<F: Scalar> {
    pub id: usize,
    rng: ChaCha8Rng,
    house_index: usize,
    env: NavEnv,
    reward: RewardState,
    cache: DecoderCache<F>,
}

impl<F: Scalar> Worker<F> {
    pub fn new(id: usize, seed: u64, model: &PolicyModel<F>, world: &TrainWorld) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let (house_index, env) = draw_episode(&mut rng, world)?;
        let reward = RewardState::new(env.distance());
        Ok(Self { id, rng, house_index, env, reward, cache: model.new_cache() })
    }

    pub fn env(&self) -> &NavEnv {
        &self.env
    }

    pub fn cache(&self) -> &DecoderCache<F> {
        &self.cache
    }

    fn reset_episode(&mut self, world: &TrainWorld) -> Result<()> {
        let (idx, env) = draw_episode(&mut self.rng, world)?;
        self.house_index = idx;
        self.env = env;
        self.reward = RewardState::new(self.env.distance());
        self.cache.reset();
        Ok(())
    }

    pub fn state(&self) -> WorkerState {
        let task = self.env.task();
        WorkerState {
            rng: self.rng.clone(),
            house_index: self.house_index,
            start: task.start,
            target_class: task.target_class,
            shortest_path: self.env.sampled().shortest_path,
            pose: *self.env.pose(),
            steps: self.env.steps(),
            path_length: self.env.path_length(),
            reward: self.reward,
            cache_offset: self.cache.offset(),
        }
    }

    /// Rebuilds a worker from saved state; the decoder cache contents must
    /// be restored separately.
    pub fn from_state(id: usize, s: &WorkerState, model: &PolicyModel<F>, world: &TrainWorld) -> Result<Self> {
        let house = world.house(s.house_index)?;
        let mut task = crate::sim::TaskSpec::new(house, s.start, s.target_class, world.sampler.embodiment);
        task.camera = world.sampler.camera.clone();
        task.max_steps = world.sampler.max_steps;
        let sampled = SampledTask { task, shortest_path: s.shortest_path, expert_steps: None };
        let env = NavEnv::resume(sampled, s.pose, s.steps, s.path_length);
        Ok(Self { id, rng: s.rng.clone(), house_index: s.house_index, env, reward: s.reward, cache: model.new_cache() })
    }
}

fn draw_episode(rng: &mut ChaCha8Rng, world: &TrainWorld) -> Result<(usize, NavEnv)> {
    let mut last = None;
    for _ in 0..RESET_ATTEMPTS {
        let idx = rng.gen_range(0..world.houses);
        match world.house(idx).and_then(|h| world.sampler.sample(h, rng)) {
            Ok(t) => return Ok((idx, NavEnv::new(t))),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Internal("no episode drawn".into())))
}

/// `R × T` frames laid out row-major: frame `t` of worker `r` is at `r * T + t`.
#[derive(Clone, Debug)]
pub struct RolloutBuffer<F> {
    pub rows: usize,
    pub len: usize,
    /// Frozen backbone tokens per frame, `ℓ × h`.
    pub tokens: Vec<Mat<F>>,
    pub goals: Vec<GoalSpec>,
    pub logits: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Frame is the first of its episode.
    pub starts: Vec<bool>,
    /// Step index of the frame within its episode.
    pub steps: Vec<u32>,
    /// Value of the frame after each row's last, 0 when that frame starts a new episode.
    pub bootstrap: Vec<f64>,
    /// Episodes that ended during collection.
    pub episodes: Vec<EpisodeResult>,
    /// Environment faults that forced a worker restart.
    pub incidents: Vec<String>,
}

impl<F: Scalar> RolloutBuffer<F> {
    pub fn frames(&self) -> usize {
        self.rows * self.len
    }

    /// Advantages and returns over the whole buffer.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.len;
        let mut adv = Vec::with_capacity(self.frames());
        let mut ret = Vec::with_capacity(self.frames());
        for r in 0..self.rows {
            let span = r * t..(r + 1) * t;
            let (a, rt) = compute_gae(
                &self.rewards[span.clone()],
                &self.values[span.clone()],
                self.bootstrap[r],
                &self.starts[span],
                gamma,
                lambda,
            )?;
            adv.extend(a);
            ret.extend(rt);
        }
        Ok((adv, ret))
    }

    /// PPO targets with the given advantages and returns.
    pub fn targets(&self, advantages: Vec<f64>, returns: Vec<f64>) -> PpoTargets {
        PpoTargets { actions: self.actions.clone(), old_logprobs: self.logprobs.clone(), advantages, returns }
    }
}

/// Logits and values for the current frame of every worker, advancing
/// their caches. Returns the backbone tokens and goals alongside.
fn act_step<F: Scalar>(
    model: &PolicyModel<F>,
    workers: &mut [Worker<F>],
    mode: GoalMode,
) -> Result<(Vec<Mat<F>>, Vec<GoalSpec>, Vec<Vec<f64>>, Vec<f64>)> {
    let mut tokens = Vec::with_capacity(workers.len());
    let mut goals = Vec::with_capacity(workers.len());
    for w in workers.iter() {
        let (obs, goal) = w.env.observe(mode);
        tokens.push(model.patchify_encode(&obs)?);
        goals.push(goal);
    }
    let s = {
        let mut g = Graph::inference(model.params());
        let refs: Vec<&Mat<F>> = tokens.iter().collect();
        let visual = g.input(Mat::vstack(&refs));
        let s = model.frame_features(&mut g, visual, &goals)?;
        g.value(s).clone()
    };
    let mut caches: Vec<&mut DecoderCache<F>> = workers.iter_mut().map(|w| &mut w.cache).collect();
    let beliefs = model.decode_step_batch(&s, &mut caches, &mut OpCounters::default())?;
    let outs = model.actor_critic_mat(&beliefs);
    let logits = outs.iter().map(|o| o.logits.iter().map(|l| l.to_f64_lossy()).collect()).collect();
    let values = outs.iter().map(|o| o.value.to_f64_lossy()).collect();
    Ok((tokens, goals, logits, values))
}

/// Samples an action index from `logits`.
pub fn sample_action<R: Rng>(logits: &[f64], rng: &mut R) -> usize {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    WeightedIndex::new(&w).map(|d| d.sample(rng)).unwrap_or(0)
}

/// Runs every worker for `t_len` steps under frozen weights.
///
/// Each worker's decoder context restarts at the beginning of the rollout
/// while positions keep counting from the episode step, so acting sees
/// exactly the context the learner replays under its episodic mask.
pub fn collect_rollouts<F: Scalar>(
    model: &PolicyModel<F>,
    workers: &mut [Worker<F>],
    world: &TrainWorld,
    t_len: usize,
    mode: GoalMode,
) -> Result<RolloutBuffer<F>> {
    let rows = workers.len();
    if rows == 0 || t_len == 0 {
        return Err(Error::Argument(format!("empty rollout: {rows} workers x {t_len} steps")));
    }
    let n = rows * t_len;
    let mut buf = RolloutBuffer {
        rows,
        len: t_len,
        tokens: vec![Mat::zeros(0, 0); n],
        goals: vec![GoalSpec::Category(0); n],
        logits: vec![Vec::new(); n],
        actions: vec![0; n],
        logprobs: vec![0.0; n],
        values: vec![0.0; n],
        rewards: vec![0.0; n],
        starts: vec![false; n],
        steps: vec![0; n],
        bootstrap: vec![0.0; rows],
        episodes: Vec::new(),
        incidents: Vec::new(),
    };
    for w in workers.iter_mut() {
        let pos = w.env.steps();
        w.cache.start_window(pos);
    }
    for t in 0..t_len {
        let (tokens, goals, logits, values) = act_step(model, workers, mode)?;
        let per_worker = tokens.into_iter().zip(goals).zip(logits.into_iter().zip(values));
        for (r, (w, ((tok, goal), (lg, v)))) in workers.iter_mut().zip(per_worker).enumerate() {
            let i = r * t_len + t;
            let a = sample_action(&lg, &mut w.rng);
            buf.logprobs[i] = log_prob(&lg, a);
            buf.actions[i] = a;
            buf.values[i] = v;
            buf.starts[i] = w.env.steps() == 0;
            buf.steps[i] = w.env.steps() as u32;
            buf.tokens[i] = tok;
            buf.goals[i] = goal;
            buf.logits[i] = lg;
            match w.env.step(a) {
                Ok(out) => {
                    let (r, next) = shape_reward(w.reward, out.distance, out.success);
                    buf.rewards[i] = r;
                    w.reward = next;
                    if out.done {
                        buf.episodes.extend(w.env.result());
                        w.reset_episode(world)?;
                    }
                }
                Err(e) => {
                    buf.rewards[i] = STEP_PENALTY;
                    buf.incidents.push(format!("worker {}: {e}; restarting episode", w.id));
                    w.reset_episode(world)?;
                }
            }
        }
    }
    let (_, _, _, values) = act_step(model, workers, mode)?;
    for (r, (w, v)) in workers.iter().zip(values).enumerate() {
        buf.bootstrap[r] = if w.env.steps() == 0 { 0.0 } else { v };
    }
    Ok(buf)
}
