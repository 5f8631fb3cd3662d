//! Cache-strategy throughput, decode growth and rollout-scaling benchmarks.
//!
//! Correctness comes first: every plan starts by checking that all
//! strategies produce the same logits on a shared episode, and only then
//! times anything. Growth exponents are fitted on the analytic counters,
//! which are exact; wall-clock numbers are reported but only compared by
//! ordering.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::Entries;
use crate::policy::{GoalSpec, ModelConfig, Observation, OpCounters, PolicyModel};
use crate::temporal::{median, synthetic_episode, CacheStrategy, TemporalCache};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchPlan {
    pub strategies: Vec<CacheStrategy>,
    pub t_grid: Vec<usize>,
    /// Worker counts for the rollout-scaling run; empty skips it.
    pub r_grid: Vec<usize>,
    /// Episode length used by the scaling run.
    pub scaling_t: usize,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Largest allowed logit difference between strategies.
    pub tolerance: f64,
    pub model: ModelConfig,
}

impl Default for BenchPlan {
    fn default() -> Self {
        let mut model = ModelConfig::tiny(64);
        model.cache_capacity = 1024;
        Self {
            strategies: CacheStrategy::ALL.to_vec(),
            t_grid: vec![16, 32, 64, 128],
            r_grid: vec![1, 2, 4],
            scaling_t: 64,
            trials: 3,
            warmup: 16,
            seed: 0,
            tolerance: 1e-4,
            model,
        }
    }
}

impl BenchPlan {
    /// Reads a flat `key = value` plan; every key is optional.
    pub fn parse(text: &str) -> Result<Self> {
        let mut e = Entries::parse(text)?;
        let mut p = BenchPlan::default();
        let mut names: Vec<String> = p.strategies.iter().map(|s| s.name().to_string()).collect();
        e.take_list("strategies", &mut names)?;
        p.strategies = names.iter().map(|n| n.parse()).collect::<Result<_>>()?;
        e.take_list("t_grid", &mut p.t_grid)?;
        e.take_list("r_grid", &mut p.r_grid)?;
        e.take("scaling_t", &mut p.scaling_t)?;
        e.take("trials", &mut p.trials)?;
        e.take("warmup", &mut p.warmup)?;
        e.take("seed", &mut p.seed)?;
        e.take("tolerance", &mut p.tolerance)?;
        let mut d = p.model.d_model;
        e.take("d_model", &mut d)?;
        let mut m = ModelConfig { cache_capacity: p.model.cache_capacity, ..ModelConfig::tiny(d) };
        e.take("encoder_layers", &mut m.encoder_layers)?;
        e.take("decoder_layers", &mut m.decoder_layers)?;
        e.take("obs_size", &mut m.obs_height)?;
        m.obs_width = m.obs_height;
        e.take("cache_capacity", &mut m.cache_capacity)?;
        p.model = m;
        e.finish()?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 3 {
            return Err(Error::Config(format!("trials must be at least 3, got {}", self.trials)));
        }
        if self.strategies.is_empty() || self.t_grid.is_empty() {
            return Err(Error::Config("plan needs at least one strategy and one T".into()));
        }
        let longest = self.t_grid.iter().chain([&self.scaling_t]).max().copied().unwrap_or(0);
        if longest + self.warmup > self.model.cache_capacity {
            return Err(Error::Config(format!(
                "cache_capacity {} too small for T = {longest} (plus warmup {})",
                self.model.cache_capacity, self.warmup
            )));
        }
        self.model.validate()
    }
}

/// Measurements for one strategy at one episode length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub strategy: CacheStrategy,
    pub t: usize,
    /// Episode steps per second, median over trials.
    pub median_sps: f64,
    pub median_step_ms: f64,
    pub total_ms: f64,
    /// Per-step wall time, median over trials.
    pub step_ms: Vec<f64>,
    /// Counters summed over one episode.
    pub counters: OpCounters,
    /// Decoder score ops spent on the final step alone.
    pub last_step_score_ops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub strategy: CacheStrategy,
    /// Exponent of the last-step decoder score ops in T.
    pub per_step_exponent: f64,
    /// Exponent of the episode total decoder score ops in T.
    pub episode_exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingEntry {
    pub rollouts: usize,
    pub frames_per_sec: f64,
    /// Throughput relative to the first entry.
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub plan: BenchPlan,
    pub hardware_threads: usize,
    pub max_logit_diff: f64,
    pub entries: Vec<BenchEntry>,
    pub fits: Vec<GrowthFit>,
    pub scaling: Vec<ScalingEntry>,
}

/// Least-squares slope of `ln cost` against `ln t`.
pub fn fit_growth(series: &[(f64, f64)]) -> Result<f64> {
    if series.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 points, got {}", series.len())));
    }
    if series.iter().any(|&(t, c)| !(t > 0.0 && c > 0.0 && t.is_finite() && c.is_finite())) {
        return Err(Error::Fit("sizes and costs must be positive and finite".into()));
    }
    let pts: Vec<(f64, f64)> = series.iter().map(|&(t, c)| (t.ln(), c.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx < 1e-12 {
        return Err(Error::Fit("all sizes are equal".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

type Episode = Vec<(Observation, GoalSpec)>;

fn run_episode(model: &PolicyModel<f32>, s: CacheStrategy, ep: &[(Observation, GoalSpec)]) -> Result<Vec<Vec<f32>>> {
    let mut c = TemporalCache::new(s, model);
    ep.iter().map(|(o, g)| c.step(model, o, g).map(|out| out.logits)).collect()
}

/// Largest logit difference between the first strategy and each other one
/// on `ep`; errors when it exceeds `tol`.
pub fn check_equivalence(model: &PolicyModel<f32>, strategies: &[CacheStrategy], ep: &[(Observation, GoalSpec)], tol: f64) -> Result<f64> {
    let Some((&first, rest)) = strategies.split_first() else { return Ok(0.0) };
    let reference = run_episode(model, first, ep)?;
    let mut worst = 0.0f64;
    for &s in rest {
        let got = run_episode(model, s, ep)?;
        for (t, (a, b)) in reference.iter().zip(&got).enumerate() {
            let d = a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max);
            if !(d <= tol) {
                return Err(Error::Equivalence(format!("{s} differs from {first} by {d:e} at step {t} (tolerance {tol:e})")));
            }
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

fn time_strategy(model: &PolicyModel<f32>, s: CacheStrategy, ep: &Episode, warm: &Episode, trials: usize) -> Result<BenchEntry> {
    let mut cache = TemporalCache::new(s, model);
    for (o, g) in warm {
        cache.step(model, o, g)?;
    }
    let t = ep.len();
    let mut per_step: Vec<Vec<f64>> = vec![Vec::with_capacity(trials); t];
    let mut totals = Vec::with_capacity(trials);
    let mut counters = OpCounters::default();
    let mut last = 0;
    for _ in 0..trials {
        cache.reset_episode();
        cache.reset_counters();
        let start = Instant::now();
        for (k, (o, g)) in ep.iter().enumerate() {
            let before = cache.counters().decoder_score_ops;
            let t0 = Instant::now();
            cache.step(model, o, g)?;
            per_step[k].push(t0.elapsed().as_secs_f64() * 1e3);
            last = cache.counters().decoder_score_ops - before;
        }
        totals.push(start.elapsed().as_secs_f64() * 1e3);
        counters = *cache.counters();
    }
    let mut step_ms: Vec<f64> = per_step.iter_mut().map(|v| median(v)).collect();
    let total_ms = median(&mut totals);
    Ok(BenchEntry {
        strategy: s,
        t,
        median_sps: t as f64 / (total_ms / 1e3),
        median_step_ms: median(&mut step_ms.clone()),
        total_ms,
        step_ms: std::mem::take(&mut step_ms),
        counters,
        last_step_score_ops: last,
    })
}

/// Aggregate frames per second with `r` threads each stepping its own
/// KV-cached episode.
fn scaling_run(model: &PolicyModel<f32>, r: usize, eps: &[Episode]) -> Result<f64> {
    let start = Instant::now();
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let hs: Vec<_> = eps[..r]
            .iter()
            .map(|ep| scope.spawn(move || run_episode(model, CacheStrategy::KVCache, ep).map(|_| ())))
            .collect();
        hs.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Internal("bench worker panicked".into())))).collect()
    });
    results.into_iter().collect::<Result<()>>()?;
    let frames: usize = eps[..r].iter().map(Vec::len).sum();
    Ok(frames as f64 / start.elapsed().as_secs_f64())
}

/// Runs `plan`: equivalence check, per-(strategy, T) timings, growth fits
/// and rollout scaling.
pub fn run_bench(plan: &BenchPlan) -> Result<BenchReport> {
    plan.validate()?;
    let model = PolicyModel::<f32>::new(plan.model.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let longest = *plan.t_grid.iter().max().expect("validated");
    let check_ep = synthetic_episode(&model, longest.min(64), &mut rng);
    let max_logit_diff = check_equivalence(&model, &plan.strategies, &check_ep, plan.tolerance)?;

    let warm = synthetic_episode(&model, plan.warmup, &mut rng);
    let mut entries = Vec::new();
    for &t in &plan.t_grid {
        // Every strategy sees the same episode.
        let ep = synthetic_episode(&model, t, &mut rng);
        for &s in &plan.strategies {
            entries.push(time_strategy(&model, s, &ep, &warm, plan.trials)?);
        }
    }

    let mut fits = Vec::new();
    if plan.t_grid.len() >= 4 {
        for &s in &plan.strategies {
            let mine: Vec<&BenchEntry> = entries.iter().filter(|e| e.strategy == s).collect();
            let per_step: Vec<(f64, f64)> = mine.iter().map(|e| (e.t as f64, e.last_step_score_ops as f64)).collect();
            let total: Vec<(f64, f64)> = mine.iter().map(|e| (e.t as f64, e.counters.decoder_score_ops as f64)).collect();
            fits.push(GrowthFit { strategy: s, per_step_exponent: fit_growth(&per_step)?, episode_exponent: fit_growth(&total)? });
        }
    }

    let mut scaling = Vec::new();
    if let Some(&rmax) = plan.r_grid.iter().max() {
        let eps: Vec<Episode> = (0..rmax).map(|_| synthetic_episode(&model, plan.scaling_t, &mut rng)).collect();
        for &r in &plan.r_grid {
            let mut runs = (0..plan.trials).map(|_| scaling_run(&model, r, &eps)).collect::<Result<Vec<_>>>()?;
            let fps = median(&mut runs);
            let base = scaling.first().map_or(fps, |e: &ScalingEntry| e.frames_per_sec);
            scaling.push(ScalingEntry { rollouts: r, frames_per_sec: fps, speedup: fps / base });
        }
    }

    Ok(BenchReport {
        plan: plan.clone(),
        hardware_threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        max_logit_diff,
        entries,
        fits,
        scaling,
    })
}

impl BenchReport {
    pub const CSV_HEADER: &'static str =
        "strategy,T,median_sps,median_step_ms,total_ms,backbone_calls,encoder_calls,decoder_calls,decoder_score_ops,last_step_score_ops";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for e in &self.entries {
            let c = &e.counters;
            s.push_str(&format!(
                "{},{},{:.3},{:.6},{:.6},{},{},{},{},{}\n",
                e.strategy,
                e.t,
                e.median_sps,
                e.median_step_ms,
                e.total_ms,
                c.backbone_calls,
                c.encoder_calls,
                c.decoder_calls,
                c.decoder_score_ops,
                e.last_step_score_ops
            ));
        }
        s
    }

    /// Whitespace table of median step time per T, one column per strategy.
    pub fn to_gnuplot(&self) -> String {
        let mut s = String::from("# T");
        for st in &self.plan.strategies {
            s.push_str(&format!(" {st}"));
        }
        s.push('\n');
        for &t in &self.plan.t_grid {
            s.push_str(&t.to_string());
            for st in &self.plan.strategies {
                let e = self.entries.iter().find(|e| e.t == t && e.strategy == *st).expect("entry per cell");
                s.push_str(&format!(" {:.6}", e.median_step_ms));
            }
            s.push('\n');
        }
        s
    }

    pub fn entry(&self, s: CacheStrategy, t: usize) -> Option<&BenchEntry> {
        self.entries.iter().find(|e| e.strategy == s && e.t == t)
    }

    /// Writes `bench.csv` and `bench.json` (and `bench.dat` when asked) into `dir`.
    pub fn write(&self, dir: &Path, gnuplot: bool) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))?;
        let mut files = vec![(dir.join("bench.csv"), self.to_csv()), (dir.join("bench.json"), json)];
        if gnuplot {
            files.push((dir.join("bench.dat"), self.to_gnuplot()));
        }
        for (p, body) in &files {
            std::fs::write(p, body).map_err(|e| Error::io(p, e))?;
        }
        Ok(files.into_iter().map(|(p, _)| p).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let ts = [16.0, 32.0, 64.0, 128.0, 256.0];
        for k in [0.0, 1.0, 2.0] {
            let s: Vec<(f64, f64)> = ts.iter().map(|&t: &f64| (t, 3.0 * t.powf(k))).collect();
            assert!((fit_growth(&s).unwrap() - k).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_series_fail() {
        assert!(matches!(fit_growth(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]), Err(Error::Fit(_))));
        assert!(matches!(fit_growth(&[(4.0, 1.0); 5]), Err(Error::Fit(_))));
        assert!(matches!(fit_growth(&[(1.0, 0.0), (2.0, 1.0), (3.0, 1.0), (4.0, 1.0)]), Err(Error::Fit(_))));
    }

    #[test]
    fn plan_parsing() {
        let p = BenchPlan::parse("t_grid = 16, 32\ntrials = 5\nstrategies = KVCache, NoCache\n").unwrap();
        assert_eq!(p.t_grid, vec![16, 32]);
        assert_eq!(p.strategies, vec![CacheStrategy::KVCache, CacheStrategy::NoCache]);
        assert!(matches!(BenchPlan::parse("trials = 2\n"), Err(Error::Config(_))));
        assert!(matches!(BenchPlan::parse("bogus = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn small_plan_end_to_end() {
        let mut model = ModelConfig::tiny(16);
        model.obs_height = 28;
        model.obs_width = 28;
        model.cache_capacity = 128;
        let plan = BenchPlan { t_grid: vec![4, 8, 16, 32], r_grid: vec![1, 2], scaling_t: 8, warmup: 2, model, ..BenchPlan::default() };
        let r = run_bench(&plan).unwrap();
        assert_eq!(r.entries.len(), 16);
        let kv = r.fits.iter().find(|f| f.strategy == CacheStrategy::KVCache).unwrap();
        assert!((kv.per_step_exponent - 1.0).abs() < 0.2);
        let e = r.entry(CacheStrategy::KVCache, 32).unwrap();
        assert_eq!(e.last_step_score_ops, 32);
        assert_eq!(r.to_csv().lines().count(), 17);
        assert_eq!(r.to_gnuplot().lines().count(), 5);
    }
}
