use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::tensor::{normal_mat, Graph, Mat};

fn small_config(mode: GoalMode) -> ModelConfig {
    ModelConfig { goal_mode: mode, num_classes: 5, ..ModelConfig::tiny(16) }
}

fn random_obs(rng: &mut impl Rng, cfg: &ModelConfig) -> Observation {
    let mut obs = Observation::zeros(cfg.obs_height, cfg.obs_width, cfg.obs_channels());
    for r in 0..cfg.obs_height {
        for c in 0..cfg.obs_width {
            let ch = rng.gen_range(0..=cfg.obs_channels());
            obs.paint(r, c, (ch < cfg.obs_channels()).then_some(ch));
        }
    }
    obs
}

fn random_features(rng: &mut impl Rng, rows: usize, d: usize) -> Mat<f64> {
    normal_mat(rng, rows, d, 1.0)
}

#[test]
fn patch_tokens_count_for_default_geometry() {
    let cfg = small_config(GoalMode::Category);
    let model = PolicyModel::<f32>::new(cfg.clone()).unwrap();
    let obs = Observation::zeros(56, 56, cfg.obs_channels());
    let r = model.patchify_encode(&obs).unwrap();
    assert_eq!(r.rows(), (56 / 14) * (56 / 14));
    assert_eq!(r.rows(), 16);
    for t in 0..16 {
        assert_eq!(r.row(t), model.backbone().bias().row(0));
    }
    let wrong = Observation::zeros(42, 56, cfg.obs_channels());
    assert!(matches!(model.patchify_encode(&wrong), Err(Error::Config(_))));
}

#[test]
fn backbone_is_outside_the_trainable_set() {
    let model = PolicyModel::<f64>::new(small_config(GoalMode::Both)).unwrap();
    assert!(model.params().iter().all(|(_, name, _)| !name.starts_with("backbone")));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let obs = random_obs(&mut rng, model.config());
    let r = model.patchify_encode(&obs).unwrap();
    let before = r.clone();
    let mut g = Graph::new(model.params());
    let x = g.input(r);
    let goal = GoalSpec::CategoryAndBBox(2, Detection::NoDetection);
    let (logits, _) = model.forward_sequence(&mut g, x, &[goal], &EpisodicAttentionMask::causal(1)).unwrap();
    let total = g.sum_rows(logits);
    let loss = g.mean_all(total);
    let grads = g.backward(loss);
    assert_eq!(grads.iter().count(), model.params().len());
    assert_eq!(model.patchify_encode(&obs).unwrap(), before);
}

#[test]
fn identity_projection_passes_tokens_through() {
    let mut cfg = small_config(GoalMode::Category);
    cfg.backbone_width = cfg.d_model;
    let mut model = PolicyModel::<f64>::new(cfg).unwrap();
    let d = model.config().d_model;
    let w = model.params().id("visual.w").unwrap();
    *model.params_mut().get_mut(w) = Mat::identity(d);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = random_features(&mut rng, 16, d);
    assert_eq!(model.project_visual_mat(&r), r);

    model.params_mut().get_mut(w).fill(0.0);
    assert!(model.project_visual_mat(&r).data().iter().all(|&x| x == 0.0));
}

#[test]
fn projection_gradient_matches_finite_differences() {
    let model = PolicyModel::<f64>::new(small_config(GoalMode::Category)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let r = normal_mat::<f64, _>(&mut rng, 16, model.config().backbone_width, 1.0);
    let target = normal_mat::<f64, _>(&mut rng, 16, model.config().d_model, 1.0);
    let loss_of = |m: &PolicyModel<f64>, with_grad: bool| {
        let mut g = if with_grad { Graph::new(m.params()) } else { Graph::inference(m.params()) };
        let x = g.input(r.clone());
        let v = m.project_visual(&mut g, x);
        let t = g.input(target.clone());
        let prod = g.mul(v, t);
        let sq = g.square(prod);
        let loss = g.mean_all(sq);
        let value = g.value(loss).get(0, 0);
        (value, with_grad.then(|| g.backward(loss)))
    };
    let (_, grads) = loss_of(&model, true);
    let grads = grads.unwrap();
    let w = model.params().id("visual.w").unwrap();
    let mut probe = model.clone();
    for k in (0..probe.params().get(w).len()).step_by(37) {
        let orig = probe.params().get(w).data()[k];
        let eps = 1e-6;
        probe.params_mut().get_mut(w).data_mut()[k] = orig + eps;
        let plus = loss_of(&probe, false).0;
        probe.params_mut().get_mut(w).data_mut()[k] = orig - eps;
        let minus = loss_of(&probe, false).0;
        probe.params_mut().get_mut(w).data_mut()[k] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let an = grads.get(w).data()[k];
        assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-8), "fd {fd} vs analytic {an}");
    }
}

#[test]
fn category_embeddings() {
    let cfg = ModelConfig { num_classes: 20, ..small_config(GoalMode::Category) };
    let model = PolicyModel::<f32>::new(cfg).unwrap();
    let a = model.encode_goal_category_mat(3).unwrap();
    let b = model.encode_goal_category_mat(4).unwrap();
    assert_ne!(a, b);
    assert_eq!(a, model.encode_goal_category_mat(3).unwrap());
    let last = model.encode_goal_category_mat(19).unwrap();
    assert_eq!(last.shape(), (1, model.config().d_model));
    assert!(last.all_finite());
    assert!(matches!(model.encode_goal_category_mat(20), Err(Error::Argument(_))));
}

#[test]
fn box_embeddings() {
    let model = PolicyModel::<f32>::new(small_config(GoalMode::BBox)).unwrap();
    let full = Detection::Box(BBox::new(0.0, 0.0, 1.0, 1.0).unwrap());
    let quarter = Detection::Box(BBox::new(0.0, 0.0, 0.5, 0.5).unwrap());
    let gf = model.encode_goal_bbox_mat(&full).unwrap();
    let gq = model.encode_goal_bbox_mat(&quarter).unwrap();
    assert_eq!(gf.shape(), (5, model.config().d_model));
    assert_ne!(gf, gq);

    let s1 = model.encode_goal_bbox_mat(&Detection::NoDetection).unwrap();
    let s2 = model.encode_goal_bbox_mat(&Detection::NoDetection).unwrap();
    assert_eq!(s1, s2);
    let sentinel = model.params().get(model.params().id("goal.box.sentinel").unwrap());
    assert_eq!(&s1, sentinel);

    let bad = Detection::Box(BBox { x1: 0.0, y1: 0.0, x2: 1.5, y2: 1.0, area: 1.5 });
    assert!(matches!(model.encode_goal_bbox_mat(&bad), Err(Error::Argument(_))));
}

#[test]
fn mixed_box_batch_matches_single_frames() {
    let model = PolicyModel::<f64>::new(small_config(GoalMode::BBox)).unwrap();
    let dets = [
        Detection::NoDetection,
        Detection::Box(BBox::new(0.1, 0.2, 0.4, 0.9).unwrap()),
        Detection::NoDetection,
        Detection::Box(BBox::new(0.5, 0.5, 0.6, 0.7).unwrap()),
    ];
    let mut g = Graph::inference(model.params());
    let batch = model.encode_goal_bbox(&mut g, &dets).unwrap();
    let batch = g.value(batch).clone();
    for (f, d) in dets.iter().enumerate() {
        let single = model.encode_goal_bbox_mat(d).unwrap();
        assert!(batch.slice_rows(5 * f, 5 * f + 5).max_abs_diff(&single) < 1e-12);
    }
}

#[test]
fn sinusoid_of_zero_alternates() {
    let enc = sinusoid_encoding(0.0, 8);
    assert_eq!(enc, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn state_encoder_ignores_visual_token_order() {
    let model = PolicyModel::<f64>::new(small_config(GoalMode::Category)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = model.config().d_model;
    let v = random_features(&mut rng, 16, d);
    let gvec = model.encode_goal_category_mat(1).unwrap();
    let s = model.state_encode_mats(&v, Some(&gvec), None, 1).unwrap();
    let mut perm: Vec<usize> = (0..16).collect();
    perm.reverse();
    perm.swap(2, 9);
    let permuted = Mat::from_fn(16, d, |r, c| v.get(perm[r], c));
    let sp = model.state_encode_mats(&permuted, Some(&gvec), None, 1).unwrap();
    assert!(s.max_abs_diff(&sp) < 1e-12);
}

#[test]
fn state_feature_has_model_width() {
    let model = PolicyModel::<f32>::new(ModelConfig::default()).unwrap();
    let obs = Observation::zeros(56, 56, model.config().obs_channels());
    let r = model.patchify_encode(&obs).unwrap();
    let mut g = Graph::inference(model.params());
    let x = g.input(r);
    let s = model.frame_features(&mut g, x, &[GoalSpec::Category(0)]).unwrap();
    assert_eq!(g.shape(s), (1, 512));
}

#[test]
fn residual_only_encoder_returns_state_token() {
    let mut model = PolicyModel::<f64>::new(small_config(GoalMode::Category)).unwrap();
    let zeroed: Vec<_> = model
        .params()
        .iter()
        .filter(|(_, n, _)| n.starts_with("encoder.") && [".wo", ".bo", ".w2", ".b2"].iter().any(|s| n.ends_with(s)))
        .map(|(id, _, _)| id)
        .collect();
    assert_eq!(zeroed.len(), 4 * model.config().encoder_layers);
    for id in zeroed {
        model.params_mut().get_mut(id).fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let v = random_features(&mut rng, 16, model.config().d_model);
    let gvec = model.encode_goal_category_mat(0).unwrap();
    let s = model.state_encode_mats(&v, Some(&gvec), None, 1).unwrap();
    let token = model.params().get(model.params().id("encoder.state_token").unwrap());
    assert_eq!(&s, token);
}

#[test]
fn missing_goal_is_config_error() {
    let model = PolicyModel::<f32>::new(small_config(GoalMode::Both)).unwrap();
    let v = Mat::zeros(16, model.config().d_model);
    let gvec = model.encode_goal_category_mat(0).unwrap();
    assert!(matches!(model.state_encode_mats(&v, Some(&gvec), None, 1), Err(Error::Config(_))));
    let mut g = Graph::inference(model.params());
    assert!(matches!(model.encode_goals(&mut g, &[GoalSpec::Category(1)]), Err(Error::Config(_))));
}

fn cached_vs_full<F: crate::tensor::Scalar>(model: &PolicyModel<F>, s: &Mat<F>) -> F {
    let mut cache = model.new_cache();
    let mut stepped = Vec::new();
    for t in 0..s.rows() {
        stepped.push(model.decode_belief(&s.slice_rows(t, t + 1), &mut cache).unwrap());
    }
    let full = model.forward_training_batch(s, &EpisodicAttentionMask::causal(s.rows())).unwrap();
    let refs: Vec<&Mat<F>> = stepped.iter().collect();
    Mat::vstack(&refs).max_abs_diff(&full)
}

#[test]
fn first_step_equals_length_one_recompute() {
    let model = PolicyModel::<f64>::new(small_config(GoalMode::Category)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = random_features(&mut rng, 1, model.config().d_model);
    assert!(cached_vs_full(&model, &s) < 1e-12);
}

#[test]
fn kv_cache_matches_full_causal_forward() {
    let model32 = PolicyModel::<f32>::new(small_config(GoalMode::Category)).unwrap();
    let model64 = model32.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let s64 = random_features(&mut rng, 64, model64.config().d_model);
    assert!(cached_vs_full(&model64, &s64) <= 1e-10);
    let s32: Mat<f32> = s64.cast();
    assert!(cached_vs_full(&model32, &s32) <= 1e-5);
}

#[test]
fn cache_reset_replays_identically() {
    let model = PolicyModel::<f32>::new(small_config(GoalMode::Category)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s: Mat<f32> = random_features(&mut rng, 6, model.config().d_model).cast();
    let mut cache = model.new_cache();
    let run = |cache: &mut DecoderCache<f32>| {
        (0..6).map(|t| model.decode_belief(&s.slice_rows(t, t + 1), cache).unwrap()).collect::<Vec<_>>()
    };
    let first = run(&mut cache);
    cache.reset();
    assert_eq!(first, run(&mut cache));
}

#[test]
fn cache_capacity_is_enforced() {
    let cfg = ModelConfig { cache_capacity: 3, ..small_config(GoalMode::Category) };
    let model = PolicyModel::<f32>::new(cfg).unwrap();
    let s = Mat::zeros(1, model.config().d_model);
    let mut cache = model.new_cache();
    for _ in 0..3 {
        model.decode_belief(&s, &mut cache).unwrap();
    }
    assert!(matches!(model.decode_belief(&s, &mut cache), Err(Error::CacheRollover { capacity: 3, .. })));
}

#[test]
fn heads_are_linear() {
    let mut model = PolicyModel::<f32>::new(small_config(GoalMode::Category)).unwrap();
    let id = model.params().id("head.actor.b").unwrap();
    model.params_mut().get_mut(id).data_mut().copy_from_slice(&[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]);
    let out = model.actor_critic_mat(&Mat::zeros(1, model.config().d_model));
    assert_eq!(out[0].logits, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]);
    assert_eq!(out[0].value, 0.0);

    let stretch = ModelConfig { embodiment: Embodiment::Stretch, ..small_config(GoalMode::Category) };
    let model = PolicyModel::<f32>::new(stretch).unwrap();
    assert_eq!(model.actor_critic_mat(&Mat::zeros(2, model.config().d_model))[1].logits.len(), 7);
}

#[test]
fn single_episode_batch_uses_causal_mask() {
    let model = PolicyModel::<f64>::new(small_config(GoalMode::Category)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let s = random_features(&mut rng, 5, model.config().d_model);
    let flags = [true, false, false, false, false];
    let a = model.forward_training_batch(&s, &EpisodicAttentionMask::from_episode_starts(&flags, 1, 5)).unwrap();
    let b = model.forward_training_batch(&s, &EpisodicAttentionMask::causal(5)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn later_episode_is_isolated_from_earlier_one() {
    let model = PolicyModel::<f32>::new(small_config(GoalMode::Category)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let d = model.config().d_model;
    let flags = [true, false, false, true, false];
    let mask = EpisodicAttentionMask::from_episode_starts(&flags, 1, 5);
    let s: Mat<f32> = random_features(&mut rng, 5, d).cast();
    let before = model.forward_training_batch(&s, &mask).unwrap();
    let mut changed = s.clone();
    for r in 0..3 {
        for c in 0..d {
            changed.set(r, c, rng.gen_range(-3.0..3.0));
        }
    }
    let after = model.forward_training_batch(&changed, &mask).unwrap();
    assert_eq!(before.slice_rows(3, 5), after.slice_rows(3, 5));
    assert_ne!(before.slice_rows(0, 3), after.slice_rows(0, 3));
}

#[test]
fn fixed_seeds_are_bit_deterministic() {
    let cfg = small_config(GoalMode::Both);
    let a = PolicyModel::<f32>::new(cfg.clone()).unwrap();
    let b = PolicyModel::<f32>::new(cfg).unwrap();
    assert!(a.params().bit_equal(b.params()));
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let obs = random_obs(&mut rng, a.config());
    let goal = GoalSpec::CategoryAndBBox(1, Detection::Box(BBox::new(0.2, 0.2, 0.3, 0.6).unwrap()));
    let run = |m: &PolicyModel<f32>| {
        let r = m.patchify_encode(&obs).unwrap();
        let mut g = Graph::inference(m.params());
        let x = g.input(r);
        let (l, v) = m.forward_sequence(&mut g, x, &[goal], &EpisodicAttentionMask::causal(1)).unwrap();
        (g.value(l).clone(), g.value(v).clone())
    };
    assert_eq!(run(&a), run(&b));
}
