use navformer::trainer::{Checkpoint, TrainConfig, Trainer};

fn main() -> navformer::Result<()> {
    let cfg = TrainConfig {
        seed: 5,
        total_steps: 256,
        rollouts: 2,
        stage_lengths: vec![32],
        stage_thresholds: vec![],
        d_model: 16,
        encoder_heads: 4,
        decoder_heads: 4,
        encoder_ffn: 32,
        decoder_ffn: 32,
        backbone_width: 32,
        box_encoding_dim: 16,
        train_houses: 10,
        ..TrainConfig::default()
    };
    let mut a = Trainer::new(cfg)?;
    a.step()?;
    let path = std::env::temp_dir().join("navformer-example.ckpt");
    a.checkpoint().save(&path)?;
    println!("saved {} ({} bytes)", path.display(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));

    // The resumed trainer replays the next update exactly.
    let mut b = Trainer::resume(&Checkpoint::load(&path)?)?;
    let (ra, rb) = (a.step()?, b.step()?);
    println!("original: step {} loss {:+.6}", ra.global_step, ra.total_loss);
    println!("resumed:  step {} loss {:+.6}", rb.global_step, rb.total_loss);
    assert_eq!(ra.total_loss, rb.total_loss);
    Ok(())
}
