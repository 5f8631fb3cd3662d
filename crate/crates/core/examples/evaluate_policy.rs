//! Evaluates a checkpoint, or an untrained model and the uniform random
//! policy when no checkpoint is given, on the same held-out tasks.
//!
//! `cargo run --release --example evaluate_policy -- runs/desk-category/checkpoints/latest.ckpt`

use navformer::trainer::{eval_tasks, evaluate, Checkpoint, EvalSettings, TrainConfig};
use navformer::policy::PolicyModel;

fn main() -> navformer::Result<()> {
    let (model, cfg) = match std::env::args().nth(1) {
        Some(path) => {
            let ck = Checkpoint::load(path.as_ref())?;
            (ck.build_model()?, ck.config)
        }
        None => {
            let cfg = TrainConfig { d_model: 32, encoder_heads: 4, decoder_heads: 4, ..TrainConfig::default() };
            (PolicyModel::new(cfg.model_config())?, cfg)
        }
    };
    let mut s = EvalSettings::from_train(&cfg);
    s.episodes = 20;
    let tasks = eval_tasks(&s)?;
    for (name, policy) in [("model", Some(&model)), ("random", None)] {
        let r = evaluate(policy, &tasks, &s)?;
        let steps: usize = r.results.iter().map(|e| e.steps).sum();
        println!(
            "{name:<7} success {:.2}  spl {:.3}  sel {:.3}  mean length {:.0}",
            r.metrics.success_rate,
            r.metrics.spl,
            r.metrics.sel,
            steps as f64 / r.results.len() as f64
        );
    }
    Ok(())
}
