//! Small cost benchmark: per-step time and scored pairs against episode
//! length, with fitted growth exponents.

use navformer::bench::{run_bench, BenchPlan};
use navformer::policy::ModelConfig;

fn main() -> navformer::Result<()> {
    let mut model = ModelConfig::tiny(32);
    model.cache_capacity = 512;
    let plan = BenchPlan { t_grid: vec![16, 32, 64, 128], r_grid: vec![1, 2], scaling_t: 32, model, ..BenchPlan::default() };
    let report = run_bench(&plan)?;
    print!("{}", report.to_csv());
    for f in &report.fits {
        println!("{:<13} last step ~ T^{:.2}, whole episode ~ T^{:.2}", f.strategy.name(), f.per_step_exponent, f.episode_exponent);
    }
    for s in &report.scaling {
        println!("{} rollouts: {:.0} frames/s ({:.2}x)", s.rollouts, s.frames_per_sec, s.speedup);
    }
    Ok(())
}
