//! Samples a task and shows what the agent sees: an ASCII instance map of
//! the first-person frame plus the target's detection box.

use std::sync::Arc;

use navformer::policy::{Embodiment, GoalMode, GoalSpec};
use navformer::sim::{generate_house, object_class, NavEnv, TaskSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> navformer::Result<()> {
    let house = Arc::new(generate_house(3, (2, 3))?);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let task = TaskSampler::new(Embodiment::LoCoBot).sample(house.clone(), &mut rng)?;
    let env = NavEnv::new(task);
    let pose = env.pose();
    println!(
        "target {} from ({:.2}, {:.2}) yaw {:.0} deg, {:.2} m straight-line",
        object_class(env.task().target_class).name,
        pose.x,
        pose.y,
        pose.yaw,
        env.distance()
    );

    let frame = env.render();
    let obs = &frame.observation;
    for r in (0..obs.height()).step_by(2) {
        let line: String = (0..obs.width())
            .map(|c| match frame.instance(r, c) {
                Some(k) => char::from(b'0' + (house.objects[k].class_id % 10) as u8),
                None => if obs.pixel(r, c).iter().sum::<f32>() > 0.0 { ':' } else { ' ' },
            })
            .collect();
        println!("|{line}|");
    }
    match env.observe(GoalMode::Both).1 {
        GoalSpec::CategoryAndBBox(_, det) => println!("detection: {det:?}"),
        other => println!("goal: {other:?}"),
    }
    Ok(())
}
