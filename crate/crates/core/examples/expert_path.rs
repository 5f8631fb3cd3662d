//! Verified task sampling: geodesic distance and the expert's minimum action
//! count, the two references used by SPL and SEL.

use std::sync::Arc;

use navformer::policy::Embodiment;
use navformer::sim::{generate_house, object_class, TaskSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> navformer::Result<()> {
    let sampler = TaskSampler::new(Embodiment::LoCoBot).verified();
    for seed in 0..5u64 {
        let house = Arc::new(generate_house(seed, (2, 3))?);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match sampler.sample(house, &mut rng) {
            Ok(t) => println!(
                "house {seed}: find {:<12} geodesic {:5.2} m, expert {:>3} actions",
                object_class(t.task.target_class).name,
                t.shortest_path,
                t.expert_steps.map_or("-".into(), |n| n.to_string())
            ),
            Err(e) => println!("house {seed}: no task ({e})"),
        }
    }
    Ok(())
}
