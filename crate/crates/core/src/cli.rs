//! Command implementations behind the `navformer` binary. Each returns an
//! exit code: 0 on success, 2 for configuration problems, 3 for runtime
//! failures.

use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{run_bench, BenchPlan};
use crate::error::{Error, Result};
use crate::policy::{Embodiment, GoalMode, PolicyModel};
use crate::sim::{apply_action, generate_house_with, read_trace, write_trace, House, NavEnv, TraceRecord};
use crate::trainer::{
    eval_tasks, evaluate, repeat_evals, sample_action, shape_reward, Checkpoint, EvalSettings, RewardState, RunPaths,
    TrainConfig, Trainer,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "navformer", version, about = "Train, evaluate and benchmark transformer navigation policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train with PPO from a config file, or resume a run.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or fresh weights, or a random policy) on held-out tasks.
    Eval(EvalArgs),
    /// Benchmark cache strategies and rollout scaling.
    Bench(BenchArgs),
    /// Generate and serialize procedural houses.
    Genworlds(GenArgs),
    /// Record one evaluation episode as a trace, or re-run a saved trace.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Continue the run in the config's output directory from its newest checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Resume from this checkpoint instead of the newest one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug, Clone)]
pub struct PolicySource {
    /// Trained weights.
    #[arg(long, conflicts_with_all = ["config", "random"])]
    pub checkpoint: Option<PathBuf>,
    /// Freshly initialized weights for this training config.
    #[arg(long, conflicts_with = "random")]
    pub config: Option<PathBuf>,
    /// Uniformly random actions; task settings come from defaults and flags.
    #[arg(long)]
    pub random: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: PolicySource,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long, value_parser = GoalMode::parse)]
    pub goal_mode: Option<GoalMode>,
    #[arg(long, value_parser = Embodiment::parse)]
    pub embodiment: Option<Embodiment>,
    #[arg(long)]
    pub greedy: bool,
    #[arg(long, default_value_t = 1)]
    pub repeat_evals: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Metrics file; defaults to `eval.json` beside the checkpoint or config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Plan file; the default plan when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "bench")]
    pub out: PathBuf,
    /// Also write a gnuplot-ready `bench.dat`.
    #[arg(long)]
    pub gnuplot: bool,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub min_rooms: usize,
    #[arg(long, default_value_t = 3)]
    pub max_rooms: usize,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub source: PolicySource,
    /// Held-out task index.
    #[arg(long, default_value_t = 0)]
    pub episode: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub greedy: bool,
    #[arg(long, value_parser = GoalMode::parse)]
    pub goal_mode: Option<GoalMode>,
    #[arg(long, value_parser = Embodiment::parse)]
    pub embodiment: Option<Embodiment>,
    /// Re-run the actions of this trace and check every pose.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Where to write the recorded trace.
    #[arg(long, default_value = "trace.jsonl")]
    pub out: PathBuf,
}

/// Identity and file layout of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: TrainConfig,
    pub seeds: SeedSet,
    pub checkpoints: Vec<PathBuf>,
    pub metrics: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSet {
    pub seed: u64,
    pub train_house_seed: u64,
    pub eval_house_seed: u64,
    pub init_seed: u64,
    pub backbone_seed: u64,
}

impl RunManifest {
    pub fn new(cfg: &TrainConfig) -> Self {
        let m = cfg.model_config();
        let stem = cfg.out_dir.file_name().map_or("run".into(), |s| s.to_string_lossy().into_owned());
        Self {
            run_id: format!("{stem}-seed{}", cfg.seed),
            config: cfg.clone(),
            seeds: SeedSet {
                seed: cfg.seed,
                train_house_seed: cfg.train_house_seed,
                eval_house_seed: cfg.eval_house_seed,
                init_seed: m.init_seed,
                backbone_seed: m.backbone_seed,
            },
            checkpoints: Vec::new(),
            metrics: RunPaths::new(&cfg.out_dir).metrics,
        }
    }

    pub fn path(out_dir: &Path) -> PathBuf {
        out_dir.join("manifest.json")
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let p = Self::path(out_dir);
        let body = serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))?;
        std::fs::write(&p, body).map_err(|e| Error::io(p, e))
    }

    pub fn load(out_dir: &Path) -> Result<Self> {
        let p = Self::path(out_dir);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))
    }
}

/// Maps errors to exit codes and prints them.
pub fn exit_code(r: Result<()>) -> i32 {
    match r {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    exit_code(match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Genworlds(a) => cmd_genworlds(&a),
        Command::Replay(a) => cmd_replay(&a),
    })
}

fn list_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if dir.is_dir() {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let p = entry.map_err(|e| Error::io(dir, e))?.path();
            let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if name.ends_with(".ckpt") && name != "abort.ckpt" {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// The saved checkpoint with the most updates in `dir`.
pub fn newest_checkpoint(dir: &Path) -> Result<Option<Checkpoint>> {
    let mut best: Option<Checkpoint> = None;
    for p in list_checkpoints(dir)? {
        let ck = Checkpoint::load(&p)?;
        let n = ck.state.as_ref().map_or(0, |s| s.updates);
        if best.as_ref().is_none_or(|b| b.state.as_ref().map_or(0, |s| s.updates) < n) {
            best = Some(ck);
        }
    }
    Ok(best)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config).map_err(|e| match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        e => e,
    })?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = cfg.out_dir.clone();
    let paths = RunPaths::new(&out);
    let mut trainer = if a.resume || a.checkpoint.is_some() {
        let ck = match &a.checkpoint {
            Some(p) => Checkpoint::load(p)?,
            None => newest_checkpoint(&paths.checkpoints)?
                .ok_or_else(|| Error::Config(format!("no checkpoint to resume in {}", paths.checkpoints.display())))?,
        };
        if ck.config != cfg {
            eprintln!("note: resuming with the configuration stored in the checkpoint");
        }
        Trainer::resume(&ck)?
    } else {
        if RunManifest::path(&out).exists() {
            return Err(Error::Config(format!("{} already holds a run; pass --resume to continue it", out.display())));
        }
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        RunManifest::new(&cfg).save(&out)?;
        std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| Error::io(&out, e))?;
        Trainer::new(cfg)?
    };
    if !a.quiet {
        eprintln!("training from step {} to {}", trainer.global_step(), trainer.config().total_steps);
    }
    let quiet = a.quiet;
    let result = trainer.run(|r| {
        if !quiet {
            let eval = r.eval_success.map_or(String::new(), |s| format!(" eval_success {s:.3}"));
            eprintln!(
                "update {:>5} step {:>9} T {:>3} loss {:+.4} entropy {:.3} sps {:.0}{eval}",
                r.update, r.global_step, r.rollout_length, r.total_loss, r.entropy, r.sps
            );
        }
    });
    let mut manifest = RunManifest::load(&out).unwrap_or_else(|_| RunManifest::new(trainer.config()));
    manifest.checkpoints = list_checkpoints(&paths.checkpoints)?;
    manifest.save(&out)?;
    result.map(|_| ())
}

/// Model (if any) and evaluation settings for a policy source plus overrides.
fn resolve_policy(
    src: &PolicySource,
    goal_mode: Option<GoalMode>,
    embodiment: Option<Embodiment>,
) -> Result<(Option<PolicyModel<f32>>, EvalSettings, PathBuf)> {
    let (model, cfg, dir) = if let Some(p) = &src.checkpoint {
        let ck = Checkpoint::load(p)?;
        let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
        (Some(ck.build_model()?), ck.config, dir)
    } else if let Some(p) = &src.config {
        let cfg = TrainConfig::load(p)?;
        let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
        (Some(PolicyModel::new(cfg.model_config())?), cfg, dir)
    } else if src.random {
        (None, TrainConfig::default(), PathBuf::from("."))
    } else {
        return Err(Error::Config("choose a policy with --checkpoint, --config or --random".into()));
    };
    let mut s = EvalSettings::from_train(&cfg);
    if let Some(m) = goal_mode {
        if model.is_some() && m != cfg.goal_mode {
            return Err(Error::Config(format!("policy was built for goal mode {}, not {}", cfg.goal_mode.name(), m.name())));
        }
        s.goal_mode = m;
    }
    if let Some(e) = embodiment {
        if model.is_some() && e.num_actions() != cfg.embodiment.num_actions() {
            return Err(Error::Config(format!("policy has {} actions, {} needs {}", cfg.embodiment.num_actions(), e.name(), e.num_actions())));
        }
        s.embodiment = e;
        s.max_steps = e.max_steps();
    }
    Ok((model, s, dir))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (model, mut s, dir) = resolve_policy(&a.source, a.goal_mode, a.embodiment)?;
    if let Some(n) = a.episodes {
        s.episodes = n;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    s.greedy = a.greedy;
    let tasks = eval_tasks(&s)?;
    let out = a.out.clone().unwrap_or_else(|| dir.join("eval.json"));
    let body = if a.repeat_evals > 1 {
        let r = repeat_evals(model.as_ref(), &tasks, &s, a.repeat_evals)?;
        println!(
            "success {:.3} ± {:.3}  spl {:.3} ± {:.3}  sel {:.3} ± {:.3}  over {} evaluations ({})",
            r.success_rate.mean,
            r.success_rate.std,
            r.spl.mean,
            r.spl.std,
            r.sel.mean,
            r.sel.std,
            r.repeats,
            if s.greedy { "greedy" } else { "sampled" }
        );
        serde_json::to_string_pretty(&r)
    } else {
        let r = evaluate(model.as_ref(), &tasks, &s)?;
        println!(
            "success {:.3}  spl {:.3}  sel {:.3}  over {} episodes ({})",
            r.metrics.success_rate,
            r.metrics.spl,
            r.metrics.sel,
            r.metrics.episodes,
            if s.greedy { "greedy" } else { "sampled" }
        );
        serde_json::to_string_pretty(&r)
    }
    .map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(&out, body).map_err(|e| Error::io(&out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let plan = match &a.config {
        Some(p) => BenchPlan::load(p)?,
        None => BenchPlan::default(),
    };
    let report = run_bench(&plan)?;
    for f in &report.fits {
        println!(
            "{:<13} decoder score ops: last step ~ T^{:.2}, episode total ~ T^{:.2}",
            f.strategy.name(),
            f.per_step_exponent,
            f.episode_exponent
        );
    }
    for e in &report.scaling {
        println!("R = {:>3}: {:.1} frames/s ({:.2}x)", e.rollouts, e.frames_per_sec, e.speedup);
    }
    for p in report.write(&a.out, a.gnuplot)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// One line per generated house in `index.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldIndexEntry {
    pub seed: u64,
    pub file: String,
    pub rooms: usize,
    pub objects: usize,
}

pub fn cmd_genworlds(a: &GenArgs) -> Result<()> {
    if a.count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    let world = crate::sim::WorldConfig { min_rooms: a.min_rooms, max_rooms: a.max_rooms, ..Default::default() };
    world.validate().map_err(|e| Error::Config(e.to_string()))?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut index = Vec::with_capacity(a.count);
    for i in 0..a.count as u64 {
        let seed = a.seed + i;
        let house = generate_house_with(seed, &world)?;
        let file = format!("house_{seed:08}.bin");
        let path = a.out.join(&file);
        std::fs::write(&path, house.to_bytes()).map_err(|e| Error::io(&path, e))?;
        index.push(WorldIndexEntry { seed, file, rooms: house.rooms.len(), objects: house.objects.len() });
    }
    let p = a.out.join("index.json");
    let body = serde_json::to_string_pretty(&index).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    println!("wrote {} houses and {}", a.count, p.display());
    Ok(())
}

/// Loads a serialized house.
pub fn load_house(path: &Path) -> Result<House> {
    House::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    let (model, mut s, _) = resolve_policy(&a.source, a.goal_mode, a.embodiment)?;
    s.episodes = a.episode + 1;
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    let task = eval_tasks(&s)?.pop().expect("episode count is positive");
    if let Some(trace_path) = &a.trace {
        let f = std::fs::File::open(trace_path).map_err(|e| Error::io(trace_path, e))?;
        let records = read_trace(BufReader::new(f))?;
        let mut pose = task.task.start;
        let actions = task.task.embodiment.actions();
        for r in &records {
            let action = actions
                .iter()
                .find(|x| x.name() == r.action)
                .ok_or_else(|| Error::format("trace", format!("step {}: unknown action {}", r.step, r.action)))?;
            let (next, collided) = apply_action(&pose, *action, &task.task.house);
            if next != r.pose || collided != r.collided {
                return Err(Error::Internal(format!("trace diverges at step {}: expected {:?}, got {:?}", r.step, r.pose, next)));
            }
            pose = next;
        }
        println!("trace reproduced: {} steps", records.len());
        return Ok(());
    }
    let mut env = NavEnv::new(task.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(a.episode as u64);
    let mut cache = model.as_ref().map(PolicyModel::new_cache);
    let mut reward = RewardState::new(env.distance());
    let mut records = Vec::new();
    while !env.is_done() {
        let a_idx = match (&model, &mut cache) {
            (Some(m), Some(c)) => {
                let (obs, goal) = env.observe(s.goal_mode);
                if c.len() >= s.context_window {
                    let pos = c.position();
                    c.start_window(pos);
                }
                let st = m.state_feature(&obs, &goal)?;
                let b = m.decode_belief(&st, c)?;
                let out = m.actor_critic_mat(&b).pop().expect("one row");
                let lg: Vec<f64> = out.logits.iter().map(|&x| x as f64).collect();
                if a.greedy {
                    lg.iter().enumerate().fold(0, |b, (i, &x)| if x > lg[b] { i } else { b })
                } else {
                    sample_action(&lg, &mut rng)
                }
            }
            _ => rand::Rng::gen_range(&mut rng, 0..s.embodiment.num_actions()),
        };
        let step = env.steps();
        let o = env.step(a_idx)?;
        let (r, next) = shape_reward(reward, o.distance, o.success);
        reward = next;
        records.push(TraceRecord { step, pose: *env.pose(), action: o.action.name().to_string(), reward: r, collided: o.collided });
    }
    let mut f = std::fs::File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_trace(&mut f, &records)?;
    let res = env.result().expect("finished");
    println!("episode {}: success {} in {} steps; trace at {}", a.episode, res.success, res.steps, a.out.display());
    Ok(())
}
