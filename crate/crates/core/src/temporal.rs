//! Rollout-time history stores for the causal decoder. All four strategies
//! return the same outputs; they differ in what they keep between steps and
//! therefore in how much they recompute.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{
    BBox, DecoderCache, Detection, EpisodicAttentionMask, GoalMode, GoalSpec, Observation, OpCounters, PolicyModel,
    PolicyOutput,
};
use crate::tensor::{Mat, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CacheStrategy {
    /// Keep raw frames, rerun everything each step.
    NoCache,
    /// Keep projected visual and goal features, rerun the state encoder and decoder.
    FeatureCache,
    /// Keep state features, rerun the decoder.
    StateCache,
    /// Keep decoder keys and values, decode one position.
    KVCache,
}

impl CacheStrategy {
    pub const ALL: [CacheStrategy; 4] =
        [CacheStrategy::NoCache, CacheStrategy::FeatureCache, CacheStrategy::StateCache, CacheStrategy::KVCache];

    pub fn name(self) -> &'static str {
        match self {
            CacheStrategy::NoCache => "NoCache",
            CacheStrategy::FeatureCache => "FeatureCache",
            CacheStrategy::StateCache => "StateCache",
            CacheStrategy::KVCache => "KVCache",
        }
    }
}

impl fmt::Display for CacheStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CacheStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CacheStrategy::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown cache strategy '{s}'")))
    }
}

#[derive(Clone, Debug)]
struct FrameFeatures<F> {
    visual: Mat<F>,
    category: Option<Mat<F>>,
    bbox: Option<Mat<F>>,
}

#[derive(Clone, Debug)]
enum Store<F: Scalar> {
    Frames(Vec<(Observation, GoalSpec)>),
    Features(Vec<FrameFeatures<F>>),
    States(Vec<Mat<F>>),
    Kv(DecoderCache<F>),
}

/// One trajectory's history under a chosen strategy, with call counters.
#[derive(Clone, Debug)]
pub struct TemporalCache<F: Scalar> {
    strategy: CacheStrategy,
    capacity: usize,
    store: Store<F>,
    counters: OpCounters,
}

impl<F: Scalar> TemporalCache<F> {
    pub fn new(strategy: CacheStrategy, model: &PolicyModel<F>) -> Self {
        let store = match strategy {
            CacheStrategy::NoCache => Store::Frames(Vec::new()),
            CacheStrategy::FeatureCache => Store::Features(Vec::new()),
            CacheStrategy::StateCache => Store::States(Vec::new()),
            CacheStrategy::KVCache => Store::Kv(model.new_cache()),
        };
        Self { strategy, capacity: model.config().cache_capacity, store, counters: OpCounters::default() }
    }

    pub fn strategy(&self) -> CacheStrategy {
        self.strategy
    }

    pub fn counters(&self) -> &OpCounters {
        &self.counters
    }

    pub fn reset_counters(&mut self) {
        self.counters = OpCounters::default();
    }

    /// Steps stored for the current episode.
    pub fn len(&self) -> usize {
        match &self.store {
            Store::Frames(v) => v.len(),
            Store::Features(v) => v.len(),
            Store::States(v) => v.len(),
            Store::Kv(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Forgets the current episode; the next step is position 0.
    pub fn reset_episode(&mut self) {
        match &mut self.store {
            Store::Frames(v) => v.clear(),
            Store::Features(v) => v.clear(),
            Store::States(v) => v.clear(),
            Store::Kv(c) => c.reset(),
        }
    }

    /// Appends one step and returns the policy output at it.
    pub fn step(&mut self, model: &PolicyModel<F>, obs: &Observation, goal: &GoalSpec) -> Result<PolicyOutput<F>> {
        let t = self.len();
        if t >= self.capacity {
            return Err(Error::CacheRollover { capacity: self.capacity, position: t });
        }
        let c = &mut self.counters;
        let belief = match &mut self.store {
            Store::Frames(frames) => {
                frames.push((obs.clone(), goal.clone()));
                let feats = frames
                    .iter()
                    .map(|(o, g)| frame_features(model, o, g, c))
                    .collect::<Result<Vec<_>>>()?;
                let states = encode_states(model, &feats, c)?;
                decode_full(model, &states, c)?
            }
            Store::Features(feats) => {
                feats.push(frame_features(model, obs, goal, c)?);
                let states = encode_states(model, feats, c)?;
                decode_full(model, &states, c)?
            }
            Store::States(states) => {
                let f = frame_features(model, obs, goal, c)?;
                states.push(encode_states(model, std::slice::from_ref(&f), c)?);
                let stacked = Mat::vstack(&states.iter().collect::<Vec<_>>());
                decode_full(model, &stacked, c)?
            }
            Store::Kv(cache) => {
                let f = frame_features(model, obs, goal, c)?;
                let s = encode_states(model, std::slice::from_ref(&f), c)?;
                model.decode_step_batch(&s, &mut [cache], c)?
            }
        };
        Ok(model.actor_critic_mat(&belief).pop().expect("one belief row"))
    }
}

fn frame_features<F: Scalar>(
    model: &PolicyModel<F>,
    obs: &Observation,
    goal: &GoalSpec,
    c: &mut OpCounters,
) -> Result<FrameFeatures<F>> {
    let r = model.patchify_encode(obs)?;
    c.backbone_calls += 1;
    let visual = model.project_visual_mat(&r);
    let (category, bbox) = model.goal_embedding_mats(goal)?;
    c.feature_calls += 1;
    Ok(FrameFeatures { visual, category, bbox })
}

fn encode_states<F: Scalar>(model: &PolicyModel<F>, feats: &[FrameFeatures<F>], c: &mut OpCounters) -> Result<Mat<F>> {
    let stack = |m: Vec<&Mat<F>>| Mat::vstack(&m);
    let v = stack(feats.iter().map(|f| &f.visual).collect());
    let cat = feats.iter().map(|f| f.category.as_ref()).collect::<Option<Vec<_>>>().map(stack);
    let bbox = feats.iter().map(|f| f.bbox.as_ref()).collect::<Option<Vec<_>>>().map(stack);
    c.encoder_calls += feats.len() as u64;
    model.state_encode_mats(&v, cat.as_ref(), bbox.as_ref(), feats.len())
}

/// Full causal decoder pass over the episode so far; returns the last belief.
fn decode_full<F: Scalar>(model: &PolicyModel<F>, states: &Mat<F>, c: &mut OpCounters) -> Result<Mat<F>> {
    let mask = EpisodicAttentionMask::causal(states.rows());
    c.decoder_calls += 1;
    c.decoder_score_ops += mask.score_pairs();
    let b = model.forward_training_batch(states, &mask)?;
    Ok(b.slice_rows(b.rows() - 1, b.rows()))
}

/// Random semantic frames and goals shaped for `model`.
pub fn synthetic_episode<F: Scalar, R: Rng>(model: &PolicyModel<F>, steps: usize, rng: &mut R) -> Vec<(Observation, GoalSpec)> {
    let cfg = model.config();
    let channels = cfg.obs_channels();
    (0..steps)
        .map(|_| {
            let mut obs = Observation::zeros(cfg.obs_height, cfg.obs_width, channels);
            for r in 0..cfg.obs_height {
                for col in 0..cfg.obs_width {
                    let ch = rng.gen_range(0..channels + 1);
                    obs.paint(r, col, (ch < channels).then_some(ch));
                }
            }
            let class = rng.gen_range(0..cfg.num_classes);
            let det = if rng.gen_bool(0.3) {
                Detection::NoDetection
            } else {
                let (a, b): (f64, f64) = (rng.gen(), rng.gen());
                let (c, d): (f64, f64) = (rng.gen(), rng.gen());
                let (x1, x2, y1, y2) = (a.min(b), a.max(b), c.min(d), c.max(d));
                Detection::Box(BBox { x1, y1, x2, y2, area: (x2 - x1) * (y2 - y1) })
            };
            let goal = match cfg.goal_mode {
                GoalMode::Category => GoalSpec::Category(class),
                GoalMode::BBox => GoalSpec::BBox(det),
                GoalMode::Both => GoalSpec::CategoryAndBBox(class, det),
            };
            (obs, goal)
        })
        .collect()
}

/// Timing and call counts of one strategy over a `T`-step episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub strategy: CacheStrategy,
    pub steps: usize,
    pub median_step_ms: f64,
    pub total_ms: f64,
    pub counters: OpCounters,
}

impl CostReport {
    pub const CSV_HEADER: &'static str =
        "strategy,T,median_step_ms,total_ms,backbone_calls,encoder_calls,decoder_score_ops";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{},{},{}",
            self.strategy,
            self.steps,
            self.median_step_ms,
            self.total_ms,
            self.counters.backbone_calls,
            self.counters.encoder_calls,
            self.counters.decoder_score_ops
        )
    }
}

pub fn write_cost_csv(reports: &[CostReport]) -> String {
    let mut s = String::from(CostReport::CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `trials` episodes of `steps` steps through one strategy. Times are
/// medians over trials; counters are those of a single episode.
pub fn profile_strategy<F: Scalar, R: Rng>(
    model: &PolicyModel<F>,
    strategy: CacheStrategy,
    steps: usize,
    trials: usize,
    rng: &mut R,
) -> Result<CostReport> {
    if steps < 16 || trials < 3 {
        return Err(Error::Argument(format!("profiling needs T >= 16 and trials >= 3 (got T={steps}, trials={trials})")));
    }
    let episode = synthetic_episode(model, steps, rng);
    let mut cache = TemporalCache::new(strategy, model);
    let mut step_medians = Vec::with_capacity(trials);
    let mut totals = Vec::with_capacity(trials);
    let mut counters = OpCounters::default();
    for _ in 0..trials {
        cache.reset_episode();
        cache.reset_counters();
        let mut per_step = Vec::with_capacity(steps);
        let start = Instant::now();
        for (obs, goal) in &episode {
            let t0 = Instant::now();
            cache.step(model, obs, goal)?;
            per_step.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        totals.push(start.elapsed().as_secs_f64() * 1e3);
        step_medians.push(median(&mut per_step));
        counters = *cache.counters();
    }
    Ok(CostReport {
        strategy,
        steps,
        median_step_ms: median(&mut step_medians),
        total_ms: median(&mut totals),
        counters,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::policy::ModelConfig;

    fn model(mode: GoalMode) -> PolicyModel<f64> {
        let mut cfg = ModelConfig::tiny(16);
        cfg.goal_mode = mode;
        PolicyModel::new(cfg).unwrap()
    }

    fn run(m: &PolicyModel<f64>, s: CacheStrategy, ep: &[(Observation, GoalSpec)]) -> Vec<PolicyOutput<f64>> {
        let mut c = TemporalCache::new(s, m);
        ep.iter().map(|(o, g)| c.step(m, o, g).unwrap()).collect()
    }

    #[test]
    fn strategies_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mode in [GoalMode::Category, GoalMode::Both] {
            let m = model(mode);
            let ep = synthetic_episode(&m, 16, &mut rng);
            let reference = run(&m, CacheStrategy::KVCache, &ep);
            for s in CacheStrategy::ALL {
                for (a, b) in run(&m, s, &ep).iter().zip(&reference) {
                    for (x, y) in a.logits.iter().zip(&b.logits) {
                        assert!((x - y).abs() <= 1e-10, "{s}: {x} vs {y}");
                    }
                    assert!((a.value - b.value).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn call_counts_follow_recompute_scope() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = model(GoalMode::Category);
        let ep = synthetic_episode(&m, 5, &mut rng);
        for s in CacheStrategy::ALL {
            let mut c = TemporalCache::new(s, &m);
            for (t, (o, g)) in ep.iter().enumerate() {
                c.reset_counters();
                c.step(&m, o, g).unwrap();
                let n = c.counters();
                let t1 = t as u64 + 1;
                let (backbone, encoder, score) = match s {
                    CacheStrategy::NoCache => (t1, t1, t1 * (t1 + 1) / 2),
                    CacheStrategy::FeatureCache => (1, t1, t1 * (t1 + 1) / 2),
                    CacheStrategy::StateCache => (1, 1, t1 * (t1 + 1) / 2),
                    CacheStrategy::KVCache => (1, 1, t1),
                };
                assert_eq!((n.backbone_calls, n.encoder_calls, n.decoder_score_ops), (backbone, encoder, score), "{s} t={t}");
            }
        }
    }

    #[test]
    fn reset_replays_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = model(GoalMode::Category);
        let ep = synthetic_episode(&m, 6, &mut rng);
        for s in CacheStrategy::ALL {
            let mut c = TemporalCache::new(s, &m);
            let first: Vec<_> = ep.iter().map(|(o, g)| c.step(&m, o, g).unwrap()).collect();
            c.reset_episode();
            c.reset_episode();
            assert!(c.is_empty());
            let second: Vec<_> = ep.iter().map(|(o, g)| c.step(&m, o, g).unwrap()).collect();
            assert_eq!(first, second);
        }
    }

    #[test]
    fn rollover_and_bad_profile_args() {
        let mut cfg = ModelConfig::tiny(16);
        cfg.cache_capacity = 2;
        let m = PolicyModel::<f64>::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ep = synthetic_episode(&m, 3, &mut rng);
        for s in CacheStrategy::ALL {
            let mut c = TemporalCache::new(s, &m);
            c.step(&m, &ep[0].0, &ep[0].1).unwrap();
            c.step(&m, &ep[1].0, &ep[1].1).unwrap();
            assert!(matches!(c.step(&m, &ep[2].0, &ep[2].1), Err(Error::CacheRollover { .. })));
        }
        assert!(profile_strategy(&m, CacheStrategy::KVCache, 8, 3, &mut rng).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = CostReport {
            strategy: CacheStrategy::StateCache,
            steps: 16,
            median_step_ms: 0.5,
            total_ms: 8.0,
            counters: OpCounters { backbone_calls: 16, encoder_calls: 16, decoder_score_ops: 136, ..Default::default() },
        };
        assert_eq!(write_cost_csv(&[r]), format!("{}\nStateCache,16,0.500000,8.000000,16,16,136\n", CostReport::CSV_HEADER));
    }
}
