use navformer::policy::{GoalMode, PolicyModel};
use navformer::trainer::{
    camera_for, collect_rollouts, rows_loss_grads, update, Adam, Checkpoint, PpoTargets, PpoWeights, RolloutBuffer,
    TrainConfig, TrainWorld, Trainer, Worker,
};
use navformer::sim::TaskSampler;
use navformer::tensor::ParamStore;

fn tiny(out: &str) -> TrainConfig {
    TrainConfig {
        seed: 9,
        total_steps: 192,
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
        encoder_layers: 1,
        decoder_layers: 1,
        obs_size: 28,
        update_repeats: 2,
        train_houses: 10,
        eval_interval: 0,
        checkpoint_interval: 0,
        out_dir: std::env::temp_dir().join(format!("navformer-trainer-{out}-{}", std::process::id())),
        ..TrainConfig::default()
    }
}

fn world(cfg: &TrainConfig) -> TrainWorld {
    let mut sampler = TaskSampler::new(cfg.embodiment);
    sampler.camera = camera_for(cfg.obs_size);
    sampler.max_steps = cfg.episode_steps();
    TrainWorld { world: cfg.world_config(), base_seed: cfg.train_house_seed, houses: cfg.train_houses, sampler }
}

fn rollout(cfg: &TrainConfig, t: usize) -> (PolicyModel<f32>, RolloutBuffer<f32>) {
    let model = PolicyModel::<f32>::new(cfg.model_config()).unwrap();
    let w = world(cfg);
    let mut workers: Vec<_> = (0..cfg.rollouts).map(|i| Worker::new(i, cfg.seed, &model, &w).unwrap()).collect();
    let buf = collect_rollouts(&model, &mut workers, &w, t, GoalMode::Category).unwrap();
    (model, buf)
}

fn bits(p: &ParamStore<f32>) -> Vec<u32> {
    p.iter().flat_map(|(_, _, m)| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn rollout_shape_and_determinism() {
    let cfg = tiny("shape");
    let (_, a) = rollout(&cfg, 4);
    let (_, b) = rollout(&cfg, 4);
    assert_eq!(a.frames(), 8);
    assert_eq!(a.actions.len(), 8);
    assert_eq!(a.actions, b.actions);
    assert_eq!(a.rewards, b.rewards);
    assert_eq!(a.logprobs, b.logprobs);
}

#[test]
fn learner_recomputes_behaviour_log_probs() {
    let cfg = tiny("logp");
    let (model, buf) = rollout(&cfg, 6);
    let n = buf.frames();
    let w = PpoWeights { clip: 0.1, value_loss_weight: 0.0, entropy_weight: 0.0 };
    // With a one-hot advantage the policy term is -ratio_i / n.
    for i in 0..n {
        let mut advantages = vec![0.0; n];
        advantages[i] = 1.0;
        let t = PpoTargets { actions: buf.actions.clone(), old_logprobs: buf.logprobs.clone(), advantages, returns: vec![0.0; n] };
        let (_, rep) = rows_loss_grads(&model, &buf, &t, 0..buf.rows, &w, 1.0).unwrap();
        let ratio = -rep.policy * n as f64;
        assert!(ratio.ln().abs() <= 1e-6, "frame {i}: ratio {ratio}");
    }
}

#[test]
fn zero_advantage_step_raises_entropy() {
    let cfg = tiny("entropy");
    let (mut model, buf) = rollout(&cfg, 8);
    let n = buf.frames();
    let w = PpoWeights { clip: 0.1, value_loss_weight: 0.0, entropy_weight: 0.01 };
    let t = PpoTargets {
        actions: buf.actions.clone(),
        old_logprobs: buf.logprobs.clone(),
        advantages: vec![0.0; n],
        returns: buf.values.clone(),
    };
    let (grads, before) = rows_loss_grads(&model, &buf, &t, 0..buf.rows, &w, 1.0).unwrap();
    let mut opt = Adam::new(model.params(), 1e-3, 0.9, 0.999, 1e-8);
    opt.step(model.params_mut(), &grads).unwrap();
    let (_, after) = rows_loss_grads(&model, &buf, &t, 0..buf.rows, &w, 1.0).unwrap();
    assert!(after.entropy > before.entropy, "{} -> {}", before.entropy, after.entropy);
}

#[test]
fn identical_updates_are_bit_identical_and_clipped() {
    let cfg = tiny("ident");
    let (model, buf) = rollout(&cfg, 8);
    let trainer = Trainer::new(cfg.clone()).unwrap();
    let mut s = trainer.update_settings();
    s.max_grad_norm = 0.05;
    let run = || {
        let mut m = model.clone();
        let mut opt = Adam::new(m.params(), cfg.learning_rate, 0.9, 0.999, 1e-8);
        let rep = update(&mut m, &mut opt, &buf, &s).unwrap();
        (bits(m.params()), rep)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra.loss, rb.loss);
    assert!(ra.grad_norm_pre > 0.05, "clip never engaged: {}", ra.grad_norm_pre);
    assert!(ra.grad_norm_post <= 0.05 * (1.0 + 1e-5), "post-clip norm {}", ra.grad_norm_post);
}

#[test]
fn three_updates_consume_192_frames() {
    let cfg = tiny("budget");
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let mut frames = Vec::new();
    while !t.is_finished() {
        frames.push(t.step().unwrap().frames);
    }
    assert_eq!(frames, [64, 64, 64]);
    assert_eq!(t.global_step(), 192);
    assert_eq!(t.updates(), 3);
}

#[test]
fn resume_reproduces_the_next_update() {
    let cfg = tiny("resume");
    let mut a = Trainer::new(cfg.clone()).unwrap();
    a.step().unwrap();
    let bytes = a.checkpoint().to_bytes().unwrap();
    let next_a = a.step().unwrap();

    let mut b = Trainer::resume(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    let next_b = b.step().unwrap();
    assert_eq!(bits(a.model().params()), bits(b.model().params()));
    assert_eq!((next_a.global_step, next_a.total_loss, next_a.entropy), (next_b.global_step, next_b.total_loss, next_b.entropy));
}

#[test]
fn budget_is_never_overrun() {
    let mut cfg = tiny("overrun");
    cfg.total_steps = 200;
    let mut t = Trainer::new(cfg).unwrap();
    while !t.is_finished() {
        t.step().unwrap();
    }
    assert_eq!(t.global_step(), 192);
}
