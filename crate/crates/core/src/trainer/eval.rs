use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::rollout::{camera_for, sample_action};
use crate::error::{Error, Result};
use crate::policy::{DecoderCache, Embodiment, GoalMode, OpCounters, PolicyModel};
use crate::sim::{compute_metrics, generate_house_with, CameraConfig, EpisodeResult, Metrics, NavEnv, SampledTask, TaskSampler, WorldConfig};
use crate::tensor::{Graph, Mat, Scalar};

/// Held-out evaluation setup. Task `i` lives in the house generated from
/// the `i`-th usable seed counting up from `house_seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub episodes: usize,
    pub house_seed: u64,
    pub world: WorldConfig,
    pub embodiment: Embodiment,
    pub camera: CameraConfig,
    pub max_steps: usize,
    pub goal_mode: GoalMode,
    /// Argmax actions instead of sampling.
    pub greedy: bool,
    /// Seed for per-episode action sampling.
    pub seed: u64,
    /// Decoder context is restarted (positions keep counting) every this many steps.
    pub context_window: usize,
    /// Episodes stepped in lockstep.
    pub batch: usize,
}

impl EvalSettings {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        Self {
            episodes: cfg.eval_episodes,
            house_seed: cfg.eval_house_seed,
            world: cfg.world_config(),
            embodiment: cfg.embodiment,
            camera: camera_for(cfg.obs_size),
            max_steps: cfg.episode_steps(),
            goal_mode: cfg.goal_mode,
            greedy: false,
            seed: cfg.seed,
            context_window: cfg.context_window(),
            batch: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub greedy: bool,
    pub metrics: Metrics,
    pub results: Vec<EpisodeResult>,
}

/// Expert-verified held-out tasks, one per house.
pub fn eval_tasks(s: &EvalSettings) -> Result<Vec<SampledTask>> {
    let mut sampler = TaskSampler::new(s.embodiment).verified();
    sampler.camera = s.camera.clone();
    sampler.max_steps = s.max_steps;
    let mut tasks = Vec::with_capacity(s.episodes);
    let limit = 4 * s.episodes + 16;
    let mut seed = s.house_seed;
    while tasks.len() < s.episodes {
        if seed - s.house_seed >= limit as u64 {
            return Err(Error::Generation { seed: s.house_seed, attempts: limit });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(house) = generate_house_with(seed, &s.world) {
            if let Ok(t) = sampler.sample(std::sync::Arc::new(house), &mut rng) {
                tasks.push(t);
            }
        }
        seed += 1;
    }
    Ok(tasks)
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter().enumerate().fold(0, |best, (i, &x)| if x > xs[best] { i } else { best })
}

/// Runs `model` (or a uniformly random policy when `None`) on every task.
pub fn evaluate<F: Scalar>(model: Option<&PolicyModel<F>>, tasks: &[SampledTask], s: &EvalSettings) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(tasks.len());
    for (b, batch) in tasks.chunks(s.batch.max(1)).enumerate() {
        let base = b * s.batch.max(1);
        let mut envs: Vec<NavEnv> = batch.iter().cloned().map(NavEnv::new).collect();
        let mut rngs: Vec<ChaCha8Rng> = (0..batch.len())
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(s.seed);
                r.set_stream((base + i) as u64);
                r
            })
            .collect();
        let mut caches: Vec<DecoderCache<F>> = match model {
            Some(m) => (0..batch.len()).map(|_| m.new_cache()).collect(),
            None => Vec::new(),
        };
        loop {
            let active: Vec<usize> = (0..envs.len()).filter(|&i| !envs[i].is_done()).collect();
            if active.is_empty() {
                break;
            }
            let actions: Vec<usize> = match model {
                None => active.iter().map(|&i| rngs[i].gen_range(0..s.embodiment.num_actions())).collect(),
                Some(m) => {
                    let logits = act(m, &envs, &mut caches, &active, s)?;
                    active
                        .iter()
                        .zip(&logits)
                        .map(|(&i, lg)| if s.greedy { argmax(lg) } else { sample_action(lg, &mut rngs[i]) })
                        .collect()
                }
            };
            for (&i, &a) in active.iter().zip(&actions) {
                envs[i].step(a)?;
            }
        }
        results.extend(envs.iter().map(|e| e.result().expect("finished")));
    }
    let metrics = compute_metrics(&results)?;
    Ok(EvalReport { greedy: s.greedy, metrics, results })
}

fn act<F: Scalar>(
    model: &PolicyModel<F>,
    envs: &[NavEnv],
    caches: &mut [DecoderCache<F>],
    active: &[usize],
    s: &EvalSettings,
) -> Result<Vec<Vec<f64>>> {
    let mut tokens = Vec::with_capacity(active.len());
    let mut goals = Vec::with_capacity(active.len());
    for &i in active {
        let (obs, goal) = envs[i].observe(s.goal_mode);
        tokens.push(model.patchify_encode(&obs)?);
        goals.push(goal);
    }
    let mut g = Graph::inference(model.params());
    let refs: Vec<&Mat<F>> = tokens.iter().collect();
    let visual = g.input(Mat::vstack(&refs));
    let sv = model.frame_features(&mut g, visual, &goals)?;
    let sm = g.value(sv).clone();
    let mut picked: Vec<&mut DecoderCache<F>> = caches
        .iter_mut()
        .enumerate()
        .filter(|(i, _)| active.binary_search(i).is_ok())
        .map(|(_, c)| c)
        .collect();
    for c in picked.iter_mut() {
        if c.len() >= s.context_window {
            let pos = c.position();
            c.start_window(pos);
        }
    }
    let beliefs = model.decode_step_batch(&sm, &mut picked, &mut OpCounters::default())?;
    Ok(model.actor_critic_mat(&beliefs).into_iter().map(|o| o.logits.iter().map(|l| l.to_f64_lossy()).collect()).collect())
}

/// Mean and population standard deviation of a metric over repeats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatedEval {
    pub greedy: bool,
    pub repeats: usize,
    pub success_rate: MeanStd,
    pub spl: MeanStd,
    pub sel: MeanStd,
    pub runs: Vec<Metrics>,
}

/// `k` evaluations over the same tasks with action-sampling seeds
/// `seed, seed + 1, ...`.
pub fn repeat_evals<F: Scalar>(model: Option<&PolicyModel<F>>, tasks: &[SampledTask], s: &EvalSettings, k: usize) -> Result<RepeatedEval> {
    let mut runs = Vec::with_capacity(k);
    for j in 0..k.max(1) {
        let sj = EvalSettings { seed: s.seed + j as u64, ..s.clone() };
        runs.push(evaluate(model, tasks, &sj)?.metrics);
    }
    let col = |f: fn(&Metrics) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(RepeatedEval {
        greedy: s.greedy,
        repeats: runs.len(),
        success_rate: col(|m| m.success_rate),
        spl: col(|m| m.spl),
        sel: col(|m| m.sel),
        runs,
    })
}
