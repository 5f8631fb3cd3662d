use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::checkpoint::{Checkpoint, TrainState};
use super::config::TrainConfig;
use super::eval::{eval_tasks, evaluate, EvalReport, EvalSettings};
use super::ppo::PpoWeights;
use super::rollout::{camera_for, collect_rollouts, TrainWorld, Worker};
use super::schedule::schedule_rollout_length;
use super::update::{update, UpdateSettings};
use crate::error::{Error, Result};
use crate::policy::PolicyModel;
use crate::sim::{SampledTask, TaskSampler};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// Frames consumed once this update is done.
    pub global_step: u64,
    pub update: u64,
    pub rollout_length: usize,
    pub frames: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub grad_norm_pre: f64,
    pub grad_norm_post: f64,
    /// Frames per second over collection and update together.
    pub sps: f64,
    pub train_episodes: usize,
    pub train_success: Option<f64>,
    pub incidents: usize,
    pub eval_success: Option<f64>,
    pub eval_spl: Option<f64>,
    pub eval_sel: Option<f64>,
}

/// The schedule → collect → update loop and everything it mutates.
pub struct Trainer {
    cfg: TrainConfig,
    model: PolicyModel<f32>,
    opt: Adam<f32>,
    world: TrainWorld,
    workers: Vec<Worker<f32>>,
    global_step: u64,
    updates: u64,
    eval_tasks: Option<Vec<SampledTask>>,
}

fn train_world(cfg: &TrainConfig) -> TrainWorld {
    let mut sampler = TaskSampler::new(cfg.embodiment);
    sampler.camera = camera_for(cfg.obs_size);
    sampler.max_steps = cfg.episode_steps();
    TrainWorld { world: cfg.world_config(), base_seed: cfg.train_house_seed, houses: cfg.train_houses, sampler }
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = PolicyModel::<f32>::new(cfg.model_config())?;
        let opt = Adam::new(model.params(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let world = train_world(&cfg);
        let workers = (0..cfg.rollouts).map(|i| Worker::new(i, cfg.seed, &model, &world)).collect::<Result<_>>()?;
        Ok(Self { cfg, model, opt, world, workers, global_step: 0, updates: 0, eval_tasks: None })
    }

    /// Continues a run from a full training checkpoint.
    pub fn resume(ck: &Checkpoint) -> Result<Self> {
        let state = ck.state.as_ref().ok_or_else(|| Error::Config("checkpoint holds weights only, cannot resume".into()))?;
        let cfg = ck.config.clone();
        cfg.validate()?;
        let model = ck.build_model()?;
        let opt = ck.build_optimizer(&model)?.expect("state present");
        let world = train_world(&cfg);
        if state.workers.len() != cfg.rollouts {
            return Err(Error::format("checkpoint", format!("{} workers saved for {} rollouts", state.workers.len(), cfg.rollouts)));
        }
        let workers = state
            .workers
            .iter()
            .enumerate()
            .map(|(i, s)| Worker::from_state(i, s, &model, &world))
            .collect::<Result<_>>()?;
        Ok(Self { cfg, model, opt, world, workers, global_step: state.global_step, updates: state.updates, eval_tasks: None })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &PolicyModel<f32> {
        &self.model
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Frames the next update will consume.
    pub fn next_batch(&self) -> u64 {
        (self.cfg.rollouts * schedule_rollout_length(self.global_step, &self.cfg.stage_lengths, &self.cfg.stage_thresholds)) as u64
    }

    /// True once another update would overrun the frame budget.
    pub fn is_finished(&self) -> bool {
        self.global_step + self.next_batch() > self.cfg.total_steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let state = TrainState {
            global_step: self.global_step,
            updates: self.updates,
            adam_steps: self.opt.steps_taken(),
            workers: self.workers.iter().map(Worker::state).collect(),
        };
        Checkpoint::of_training(&self.cfg, &self.model, &self.opt, state)
    }

    pub fn update_settings(&self) -> UpdateSettings {
        let c = &self.cfg;
        UpdateSettings {
            weights: PpoWeights { clip: c.clip, value_loss_weight: c.value_loss_weight, entropy_weight: c.entropy_weight },
            gamma: c.gamma,
            gae_lambda: c.gae_lambda,
            repeats: c.update_repeats,
            minibatches: c.minibatches_per_update,
            max_grad_norm: c.max_grad_norm,
            normalize_advantages: c.normalize_advantages,
            shards: c.learner_shards,
            rows_per_chunk: c.rows_per_chunk,
        }
    }

    /// One collect-and-update cycle.
    pub fn step(&mut self) -> Result<UpdateRecord> {
        let started = Instant::now();
        let t_len = schedule_rollout_length(self.global_step, &self.cfg.stage_lengths, &self.cfg.stage_thresholds);
        let buffer = collect_rollouts(&self.model, &mut self.workers, &self.world, t_len, self.cfg.goal_mode)?;
        let settings = self.update_settings();
        let rep = update(&mut self.model, &mut self.opt, &buffer, &settings)?;
        self.global_step += buffer.frames() as u64;
        self.updates += 1;
        let n_eps = buffer.episodes.len();
        let succ = buffer.episodes.iter().filter(|e| e.success).count();
        Ok(UpdateRecord {
            global_step: self.global_step,
            update: self.updates,
            rollout_length: t_len,
            frames: buffer.frames(),
            policy_loss: rep.loss.policy,
            value_loss: rep.loss.value,
            entropy: rep.loss.entropy,
            total_loss: rep.loss.total,
            grad_norm_pre: rep.grad_norm_pre,
            grad_norm_post: rep.grad_norm_post,
            sps: buffer.frames() as f64 / started.elapsed().as_secs_f64(),
            train_episodes: n_eps,
            train_success: (n_eps > 0).then(|| succ as f64 / n_eps as f64),
            incidents: buffer.incidents.len(),
            eval_success: None,
            eval_spl: None,
            eval_sel: None,
        })
    }

    /// Evaluates the current policy on the held-out tasks of the config.
    pub fn evaluate(&mut self) -> Result<EvalReport> {
        let settings = EvalSettings::from_train(&self.cfg);
        if self.eval_tasks.is_none() {
            self.eval_tasks = Some(eval_tasks(&settings)?);
        }
        evaluate(Some(&self.model), self.eval_tasks.as_deref().expect("set above"), &settings)
    }

    fn due(&self, interval: usize) -> bool {
        interval > 0 && (self.updates % interval as u64 == 0 || self.is_finished())
    }

    /// Runs to `total_steps`, appending to `<out_dir>/metrics.jsonl` and
    /// writing checkpoints under `<out_dir>/checkpoints`. A non-finite loss
    /// dumps `abort.ckpt` before the error is returned.
    pub fn run(&mut self, mut progress: impl FnMut(&UpdateRecord)) -> Result<RunPaths> {
        let paths = RunPaths::new(&self.cfg.out_dir);
        std::fs::create_dir_all(&paths.checkpoints).map_err(|e| Error::io(&paths.checkpoints, e))?;
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&paths.metrics)
            .map_err(|e| Error::io(&paths.metrics, e))?;
        while !self.is_finished() {
            let mut rec = match self.step() {
                Ok(r) => r,
                Err(e @ Error::Numeric(_)) => {
                    self.checkpoint().save(&paths.checkpoints.join("abort.ckpt"))?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            if self.due(self.cfg.eval_interval) {
                let m = self.evaluate()?.metrics;
                rec.eval_success = Some(m.success_rate);
                rec.eval_spl = Some(m.spl);
                rec.eval_sel = Some(m.sel);
            }
            let line = serde_json::to_string(&rec).map_err(|e| Error::Internal(e.to_string()))?;
            writeln!(log, "{line}").map_err(|e| Error::io(&paths.metrics, e))?;
            if self.due(self.cfg.checkpoint_interval) {
                let ck = self.checkpoint();
                ck.save(&paths.checkpoints.join(format!("update_{:06}.ckpt", self.updates)))?;
            }
            progress(&rec);
        }
        self.checkpoint().save(&paths.latest)?;
        Ok(paths)
    }
}

/// File layout of a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub metrics: PathBuf,
    pub checkpoints: PathBuf,
    pub latest: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path) -> Self {
        let checkpoints = out_dir.join("checkpoints");
        Self { metrics: out_dir.join("metrics.jsonl"), latest: checkpoints.join("latest.ckpt"), checkpoints }
    }
}

/// Parses a metrics log.
pub fn read_metrics(path: &Path) -> Result<Vec<UpdateRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::format("metrics", format!("line {}: {e}", n + 1))))
        .collect()
}
