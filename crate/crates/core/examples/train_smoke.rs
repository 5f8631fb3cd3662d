//! A few PPO updates on a tiny model. Use the CLI with `configs/desk.cfg`
//! for a real run.

use navformer::trainer::{TrainConfig, Trainer};

fn main() -> navformer::Result<()> {
    let cfg = TrainConfig {
        seed: 1,
        total_steps: 4 * 4 * 32,
        rollouts: 4,
        stage_lengths: vec![32],
        stage_thresholds: vec![],
        d_model: 32,
        encoder_heads: 4,
        decoder_heads: 4,
        encoder_ffn: 64,
        decoder_ffn: 64,
        backbone_width: 64,
        box_encoding_dim: 32,
        train_houses: 20,
        eval_episodes: 4,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg)?;
    while !trainer.is_finished() {
        let r = trainer.step()?;
        println!(
            "update {} step {:5} loss {:+.4} (policy {:+.4} value {:.4}) entropy {:.3} |g| {:.3} {:.0} sps",
            r.update, r.global_step, r.total_loss, r.policy_loss, r.value_loss, r.entropy, r.grad_norm_pre, r.sps
        );
    }
    let eval = trainer.evaluate()?;
    println!("eval success {:.2} spl {:.3} over {} episodes", eval.metrics.success_rate, eval.metrics.spl, eval.metrics.episodes);
    Ok(())
}
