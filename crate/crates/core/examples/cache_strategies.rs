//! Runs one synthetic episode through all four temporal caching strategies
//! and shows they agree while doing very different amounts of work.

use navformer::policy::{ModelConfig, PolicyModel};
use navformer::temporal::{synthetic_episode, CacheStrategy, TemporalCache};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> navformer::Result<()> {
    let model = PolicyModel::<f32>::new(ModelConfig::tiny(32))?;
    let episode = synthetic_episode(&model, 48, &mut ChaCha8Rng::seed_from_u64(1));

    let mut reference: Vec<Vec<f32>> = Vec::new();
    for s in CacheStrategy::ALL {
        let mut cache = TemporalCache::new(s, &model);
        let started = std::time::Instant::now();
        let mut worst = 0.0f32;
        for (t, (obs, goal)) in episode.iter().enumerate() {
            let out = cache.step(&model, obs, goal)?;
            match reference.get(t) {
                Some(r) => worst = r.iter().zip(&out.logits).map(|(a, b)| (a - b).abs()).fold(worst, f32::max),
                None => reference.push(out.logits),
            }
        }
        let c = cache.counters();
        println!(
            "{:<13} {:7.1} ms  encoder calls {:5}  score pairs {:7}  max |dlogit| {worst:.1e}",
            s.name(),
            started.elapsed().as_secs_f64() * 1e3,
            c.encoder_calls,
            c.decoder_score_ops
        );
    }
    Ok(())
}
