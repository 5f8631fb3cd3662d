use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DecoderCache, Detection, EpisodicAttentionMask, FrozenPatchEncoder, GoalSpec, ModelConfig, Observation};
use crate::error::{Error, Result};
use crate::tensor::{init_linear, normal_mat, rope_row, softmax_scores, Graph, Mat, ParamId, ParamStore, Scalar, Span, Var};

const NORM_EPS: f64 = 1e-5;
/// Multiplier applied to normalized box values before the sinusoid table.
const BOX_VALUE_SCALE: f64 = 100.0;

/// Counts of module forwards, used to check recompute scope analytically.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    /// Frames pushed through the frozen backbone.
    pub backbone_calls: u64,
    /// Frames whose visual/goal features were computed.
    pub feature_calls: u64,
    /// Frames pushed through the state encoder.
    pub encoder_calls: u64,
    /// Decoder invocations (one per step, full or incremental).
    pub decoder_calls: u64,
    /// Query–key pairs scored by the decoder, counted once per forward
    /// rather than per layer or head.
    pub decoder_score_ops: u64,
}

impl OpCounters {
    pub fn add(&mut self, other: &OpCounters) {
        self.backbone_calls += other.backbone_calls;
        self.feature_calls += other.feature_calls;
        self.encoder_calls += other.encoder_calls;
        self.decoder_calls += other.decoder_calls;
        self.decoder_score_ops += other.decoder_score_ops;
    }
}

/// Action logits and value estimate for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput<F> {
    pub logits: Vec<F>,
    pub value: F,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    attn_norm: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    mlp_norm: ParamId,
    w_gate: ParamId,
    w_up: ParamId,
    w_down: ParamId,
}

#[derive(Clone, Debug)]
struct CategoryEncoder {
    table: ParamId,
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct BoxEncoder {
    type_embedding: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    sentinel: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    vis_w: ParamId,
    vis_b: ParamId,
    category: Option<CategoryEncoder>,
    bbox: Option<BoxEncoder>,
    state_token: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    final_norm: ParamId,
    actor_w: ParamId,
    actor_b: ParamId,
    critic_w: ParamId,
    critic_b: ParamId,
}

/// Goal-conditioned transformer policy: frozen patch backbone, goal
/// encoders, non-causal state encoder, causal decoder, linear heads.
#[derive(Clone, Debug)]
pub struct PolicyModel<F: Scalar> {
    config: ModelConfig,
    backbone: FrozenPatchEncoder<F>,
    params: ParamStore<F>,
    layout: Layout,
}

impl<F: Scalar> PolicyModel<F> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut p = ParamStore::new();
        let d = config.d_model;
        let h = config.backbone_width;
        let e = config.box_encoding_dim;

        let vis_w = p.add("visual.w", init_linear(&mut rng, h, d));
        let vis_b = p.add("visual.b", Mat::zeros(1, d));
        let category = config.goal_mode.uses_category().then(|| CategoryEncoder {
            table: p.add("goal.category.table", normal_mat(&mut rng, config.num_classes, d, 1.0)),
            w: p.add("goal.category.w", init_linear(&mut rng, d, d)),
            b: p.add("goal.category.b", Mat::zeros(1, d)),
        });
        let bbox = config.goal_mode.uses_bbox().then(|| BoxEncoder {
            type_embedding: p.add("goal.box.type", normal_mat(&mut rng, 5, e, 1.0)),
            w1: p.add("goal.box.w1", init_linear(&mut rng, e, d)),
            b1: p.add("goal.box.b1", Mat::zeros(1, d)),
            w2: p.add("goal.box.w2", init_linear(&mut rng, d, d)),
            b2: p.add("goal.box.b2", Mat::zeros(1, d)),
            sentinel: p.add("goal.box.sentinel", normal_mat(&mut rng, 5, d, 1.0)),
        });
        let state_token = p.add("encoder.state_token", normal_mat(&mut rng, 1, d, 1.0));
        let out_scale = 1.0 / (2.0 * config.encoder_layers.max(1) as f64).sqrt();
        let encoder = (0..config.encoder_layers)
            .map(|l| {
                let n = |s: &str| format!("encoder.{l}.{s}");
                let mut wo = init_linear(&mut rng, d, d);
                wo.scale_in_place(F::lit(out_scale));
                let mut w2 = init_linear(&mut rng, config.encoder_ffn, d);
                w2.scale_in_place(F::lit(out_scale));
                EncoderLayer {
                    ln1_g: p.add(n("ln1.g"), Mat::filled(1, d, F::one())),
                    ln1_b: p.add(n("ln1.b"), Mat::zeros(1, d)),
                    wq: p.add(n("wq"), init_linear(&mut rng, d, d)),
                    bq: p.add(n("bq"), Mat::zeros(1, d)),
                    wk: p.add(n("wk"), init_linear(&mut rng, d, d)),
                    bk: p.add(n("bk"), Mat::zeros(1, d)),
                    wv: p.add(n("wv"), init_linear(&mut rng, d, d)),
                    bv: p.add(n("bv"), Mat::zeros(1, d)),
                    wo: p.add(n("wo"), wo),
                    bo: p.add(n("bo"), Mat::zeros(1, d)),
                    ln2_g: p.add(n("ln2.g"), Mat::filled(1, d, F::one())),
                    ln2_b: p.add(n("ln2.b"), Mat::zeros(1, d)),
                    w1: p.add(n("w1"), init_linear(&mut rng, d, config.encoder_ffn)),
                    b1: p.add(n("b1"), Mat::zeros(1, config.encoder_ffn)),
                    w2: p.add(n("w2"), w2),
                    b2: p.add(n("b2"), Mat::zeros(1, d)),
                }
            })
            .collect();
        let out_scale = 1.0 / (2.0 * config.decoder_layers.max(1) as f64).sqrt();
        let decoder = (0..config.decoder_layers)
            .map(|l| {
                let n = |s: &str| format!("decoder.{l}.{s}");
                let mut wo = init_linear(&mut rng, d, d);
                wo.scale_in_place(F::lit(out_scale));
                let mut w_down = init_linear(&mut rng, config.decoder_ffn, d);
                w_down.scale_in_place(F::lit(out_scale));
                DecoderLayer {
                    attn_norm: p.add(n("attn_norm"), Mat::filled(1, d, F::one())),
                    wq: p.add(n("wq"), init_linear(&mut rng, d, d)),
                    wk: p.add(n("wk"), init_linear(&mut rng, d, d)),
                    wv: p.add(n("wv"), init_linear(&mut rng, d, d)),
                    wo: p.add(n("wo"), wo),
                    mlp_norm: p.add(n("mlp_norm"), Mat::filled(1, d, F::one())),
                    w_gate: p.add(n("w_gate"), init_linear(&mut rng, d, config.decoder_ffn)),
                    w_up: p.add(n("w_up"), init_linear(&mut rng, d, config.decoder_ffn)),
                    w_down: p.add(n("w_down"), w_down),
                }
            })
            .collect();
        let final_norm = p.add("decoder.final_norm", Mat::filled(1, d, F::one()));
        let a = config.num_actions();
        let actor_w = p.add("head.actor.w", normal_mat(&mut rng, d, a, 0.01 / (d as f64).sqrt()));
        let actor_b = p.add("head.actor.b", Mat::zeros(1, a));
        let critic_w = p.add("head.critic.w", init_linear(&mut rng, d, 1));
        let critic_b = p.add("head.critic.b", Mat::zeros(1, 1));

        let backbone = FrozenPatchEncoder::new(config.patch, config.obs_channels(), h, config.backbone_seed);
        let layout = Layout {
            vis_w,
            vis_b,
            category,
            bbox,
            state_token,
            encoder,
            decoder,
            final_norm,
            actor_w,
            actor_b,
            critic_w,
            critic_b,
        };
        Ok(Self { config, backbone, params: p, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn backbone(&self) -> &FrozenPatchEncoder<F> {
        &self.backbone
    }

    /// Copy of this model in another precision, with identical weights up to rounding.
    pub fn cast<G: Scalar>(&self) -> PolicyModel<G> {
        PolicyModel {
            config: self.config.clone(),
            backbone: FrozenPatchEncoder::new(
                self.config.patch,
                self.config.obs_channels(),
                self.config.backbone_width,
                self.config.backbone_seed,
            ),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn new_cache(&self) -> DecoderCache<F> {
        DecoderCache::new(self.config.decoder_layers, self.config.d_model, self.config.cache_capacity)
    }

    // ---- frozen backbone ---------------------------------------------------

    /// `ℓ × h` visual tokens from the frozen backbone.
    pub fn patchify_encode(&self, obs: &Observation) -> Result<Mat<F>> {
        if obs.height() != self.config.obs_height || obs.width() != self.config.obs_width {
            return Err(Error::Config(format!(
                "observation {}x{} does not match configured {}x{}",
                obs.height(),
                obs.width(),
                self.config.obs_height,
                self.config.obs_width
            )));
        }
        self.backbone.encode(obs)
    }

    // ---- graph builders ----------------------------------------------------

    /// Row-wise trainable projection `h → d`.
    pub fn project_visual(&self, g: &mut Graph<F>, r: Var) -> Var {
        g.linear(r, self.layout.vis_w, self.layout.vis_b)
    }

    /// `n × d` category goal embeddings.
    pub fn encode_goal_category(&self, g: &mut Graph<F>, class_ids: &[usize]) -> Result<Var> {
        let enc = self
            .layout
            .category
            .as_ref()
            .ok_or_else(|| Error::Config("category goal encoder disabled for this goal mode".into()))?;
        if let Some(&bad) = class_ids.iter().find(|&&c| c >= self.config.num_classes) {
            return Err(Error::Argument(format!("class id {bad} out of range (0..{})", self.config.num_classes)));
        }
        let table = g.param(enc.table);
        let rows = g.gather_rows(table, class_ids.to_vec());
        Ok(g.linear(rows, enc.w, enc.b))
    }

    /// `5n × d` box goal embeddings; frame `f` occupies rows `5f..5f+5`.
    pub fn encode_goal_bbox(&self, g: &mut Graph<F>, detections: &[Detection]) -> Result<Var> {
        let enc = self
            .layout
            .bbox
            .as_ref()
            .ok_or_else(|| Error::Config("box goal encoder disabled for this goal mode".into()))?;
        let e = self.config.box_encoding_dim;
        let mut present = Vec::new();
        for d in detections {
            if let Detection::Box(b) = d {
                b.validate()?;
                present.push(*b);
            }
        }
        let sentinel = g.param(enc.sentinel);
        let m = present.len();
        let mut table_rows = Vec::with_capacity(detections.len() * 5);
        let source = if m > 0 {
            let mut data = Vec::with_capacity(m * 5 * e);
            for b in &present {
                for v in b.values() {
                    data.extend(sinusoid_encoding(v, e).into_iter().map(F::lit));
                }
            }
            let enc_in = g.input(Mat::from_vec(5 * m, e, data));
            let types = g.param(enc.type_embedding);
            let types = g.gather_rows(types, (0..m).flat_map(|_| 0..5).collect());
            let x = g.add(enc_in, types);
            let hdn = g.linear(x, enc.w1, enc.b1);
            let hdn = g.gelu(hdn);
            let out = g.linear(hdn, enc.w2, enc.b2);
            g.concat_rows(&[out, sentinel])
        } else {
            sentinel
        };
        let sentinel_base = 5 * m;
        let mut next = 0;
        for d in detections {
            match d {
                Detection::Box(_) => {
                    table_rows.extend(next * 5..next * 5 + 5);
                    next += 1;
                }
                Detection::NoDetection => table_rows.extend(sentinel_base..sentinel_base + 5),
            }
        }
        Ok(g.gather_rows(source, table_rows))
    }

    /// Goal embeddings for a batch of per-step goals, as required by the goal mode.
    pub fn encode_goals(&self, g: &mut Graph<F>, goals: &[GoalSpec]) -> Result<(Option<Var>, Option<Var>)> {
        let mode = self.config.goal_mode;
        let category = if mode.uses_category() {
            let ids = goals
                .iter()
                .map(|gs| gs.category().ok_or_else(|| Error::Config("goal mode requires a category goal".into())))
                .collect::<Result<Vec<_>>>()?;
            Some(self.encode_goal_category(g, &ids)?)
        } else {
            None
        };
        let bbox = if mode.uses_bbox() {
            let dets = goals
                .iter()
                .map(|gs| gs.detection().copied().ok_or_else(|| Error::Config("goal mode requires a box goal".into())))
                .collect::<Result<Vec<_>>>()?;
            Some(self.encode_goal_bbox(g, &dets)?)
        } else {
            None
        };
        Ok((category, bbox))
    }

    /// Non-causal encoder over `[v; g; g_b; STATE]` per frame; returns the
    /// `n × d` outputs at the STATE positions.
    pub fn state_encode(&self, g: &mut Graph<F>, v: Var, category: Option<Var>, bbox: Option<Var>, frames: usize) -> Result<Var> {
        let mode = self.config.goal_mode;
        if mode.uses_category() && category.is_none() || mode.uses_bbox() && bbox.is_none() {
            return Err(Error::Config(format!("goal mode {} requires its goal embeddings", mode.name())));
        }
        if category.is_none() && bbox.is_none() {
            return Err(Error::Config("state encoder needs at least one goal embedding".into()));
        }
        let ell = self.config.tokens_per_frame();
        if g.shape(v).0 != frames * ell {
            return Err(Error::Argument(format!("expected {} visual rows, got {}", frames * ell, g.shape(v).0)));
        }
        let state = g.param(self.layout.state_token);
        let mut parts = vec![v];
        let cat_base = frames * ell;
        if let Some(c) = category {
            parts.push(c);
        }
        let box_base = cat_base + if category.is_some() { frames } else { 0 };
        if let Some(b) = bbox {
            parts.push(b);
        }
        let state_row = box_base + if bbox.is_some() { 5 * frames } else { 0 };
        parts.push(state);
        let pool = g.concat_rows(&parts);

        let seq = self.config.encoder_sequence_len();
        let mut order = Vec::with_capacity(frames * seq);
        for f in 0..frames {
            order.extend(f * ell..(f + 1) * ell);
            if category.is_some() {
                order.push(cat_base + f);
            }
            if bbox.is_some() {
                order.extend(box_base + 5 * f..box_base + 5 * f + 5);
            }
            order.push(state_row);
        }
        let mut x = g.gather_rows(pool, order);
        let spans: Vec<Span> = (0..frames).flat_map(|f| (0..seq).map(move |_| Span::new(f * seq, (f + 1) * seq))).collect();
        let heads = self.config.encoder_heads;
        let eps = F::lit(NORM_EPS);
        for layer in &self.layout.encoder {
            let h = g.layer_norm(x, layer.ln1_g, layer.ln1_b, eps);
            let q = g.linear(h, layer.wq, layer.bq);
            let k = g.linear(h, layer.wk, layer.bk);
            let vv = g.linear(h, layer.wv, layer.bv);
            let a = g.attention(q, k, vv, heads, spans.clone());
            let o = g.linear(a, layer.wo, layer.bo);
            x = g.add(x, o);
            let h = g.layer_norm(x, layer.ln2_g, layer.ln2_b, eps);
            let h = g.linear(h, layer.w1, layer.b1);
            let h = g.gelu(h);
            let o = g.linear(h, layer.w2, layer.b2);
            x = g.add(x, o);
        }
        Ok(g.gather_rows(x, (0..frames).map(|f| f * seq + seq - 1).collect()))
    }

    /// State features for `n` frames from their raw backbone tokens.
    pub fn frame_features(&self, g: &mut Graph<F>, visual: Var, goals: &[GoalSpec]) -> Result<Var> {
        let v = self.project_visual(g, visual);
        let (cat, bbox) = self.encode_goals(g, goals)?;
        self.state_encode(g, v, cat, bbox, goals.len())
    }

    /// Full causal decoder forward under `mask`; returns beliefs.
    pub fn decode_beliefs(&self, g: &mut Graph<F>, s: Var, mask: &EpisodicAttentionMask) -> Result<Var> {
        if g.shape(s).0 != mask.total() {
            return Err(Error::Internal(format!("mask covers {} steps, features have {}", mask.total(), g.shape(s).0)));
        }
        let spans = mask.spans();
        let positions = mask.positions().to_vec();
        let heads = self.config.decoder_heads;
        let eps = F::lit(NORM_EPS);
        let base = F::lit(self.config.rope_base);
        let mut x = s;
        for layer in &self.layout.decoder {
            let h = g.rms_norm(x, layer.attn_norm, eps);
            let wq = g.param(layer.wq);
            let wk = g.param(layer.wk);
            let wv = g.param(layer.wv);
            let q = g.matmul(h, wq);
            let k = g.matmul(h, wk);
            let v = g.matmul(h, wv);
            let q = g.rope(q, heads, positions.clone(), base);
            let k = g.rope(k, heads, positions.clone(), base);
            let a = g.attention(q, k, v, heads, spans.clone());
            let wo = g.param(layer.wo);
            let o = g.matmul(a, wo);
            x = g.add(x, o);
            x = self.gated_mlp(g, x, layer);
        }
        Ok(g.rms_norm(x, self.layout.final_norm, eps))
    }

    fn gated_mlp(&self, g: &mut Graph<F>, x: Var, layer: &DecoderLayer) -> Var {
        let h = g.rms_norm(x, layer.mlp_norm, F::lit(NORM_EPS));
        let wg = g.param(layer.w_gate);
        let wu = g.param(layer.w_up);
        let gate = g.matmul(h, wg);
        let gate = g.silu(gate);
        let up = g.matmul(h, wu);
        let hm = g.mul(gate, up);
        let wd = g.param(layer.w_down);
        let o = g.matmul(hm, wd);
        g.add(x, o)
    }

    /// Linear actor and critic heads: `(n × |A|, n × 1)`.
    pub fn actor_critic(&self, g: &mut Graph<F>, beliefs: Var) -> (Var, Var) {
        let logits = g.linear(beliefs, self.layout.actor_w, self.layout.actor_b);
        let value = g.linear(beliefs, self.layout.critic_w, self.layout.critic_b);
        (logits, value)
    }

    /// Whole-batch forward from backbone tokens to logits and values.
    pub fn forward_sequence(&self, g: &mut Graph<F>, visual: Var, goals: &[GoalSpec], mask: &EpisodicAttentionMask) -> Result<(Var, Var)> {
        let s = self.frame_features(g, visual, goals)?;
        let b = self.decode_beliefs(g, s, mask)?;
        Ok(self.actor_critic(g, b))
    }

    // ---- incremental decoding ---------------------------------------------

    /// One decoder step per row of `s`, each against its own cache. Every
    /// cache advances by one position.
    pub fn decode_step_batch(&self, s: &Mat<F>, caches: &mut [&mut DecoderCache<F>], counters: &mut OpCounters) -> Result<Mat<F>> {
        let n = s.rows();
        if caches.len() != n {
            return Err(Error::Argument(format!("{} caches for {n} state rows", caches.len())));
        }
        for c in caches.iter() {
            c.ensure_room()?;
        }
        let d = self.config.d_model;
        let heads = self.config.decoder_heads;
        let hd = d / heads;
        let scale = F::one() / F::lit(hd as f64).sqrt();
        let eps = F::lit(NORM_EPS);
        let base = F::lit(self.config.rope_base);
        let mut g = Graph::inference(&self.params);
        let mut x = g.input(s.clone());
        let mut probs = Vec::new();
        for (l, layer) in self.layout.decoder.iter().enumerate() {
            let h = g.rms_norm(x, layer.attn_norm, eps);
            let wq = g.param(layer.wq);
            let wk = g.param(layer.wk);
            let wv = g.param(layer.wv);
            let q = g.matmul(h, wq);
            let k = g.matmul(h, wk);
            let v = g.matmul(h, wv);
            let mut qm = g.value(q).clone();
            let mut km = g.value(k).clone();
            let vm = g.value(v);
            let mut out = Mat::zeros(n, d);
            for (i, cache) in caches.iter_mut().enumerate() {
                let pos = cache.position() as u32;
                rope_row(qm.row_mut(i), heads, pos, base, false);
                rope_row(km.row_mut(i), heads, pos, base, false);
                cache.write(l, km.row(i), vm.row(i));
                let span = Span::new(0, cache.len() + 1);
                let (ck, cv) = cache.layer(l);
                probs.resize(span.len(), F::zero());
                for hh in 0..heads {
                    let cols = hh * hd..(hh + 1) * hd;
                    softmax_scores(&qm.row(i)[cols.clone()], ck, &span, hh * hd, scale, &mut probs);
                    let orow = &mut out.row_mut(i)[cols.clone()];
                    for (j, &p) in probs.iter().enumerate() {
                        for (o, &vv) in orow.iter_mut().zip(&cv.row(j)[cols.clone()]) {
                            *o = *o + p * vv;
                        }
                    }
                }
            }
            let a = g.input(out);
            let wo = g.param(layer.wo);
            let o = g.matmul(a, wo);
            x = g.add(x, o);
            x = self.gated_mlp(&mut g, x, layer);
        }
        let b = g.rms_norm(x, self.layout.final_norm, eps);
        for cache in caches.iter_mut() {
            counters.decoder_calls += 1;
            counters.decoder_score_ops += cache.len() as u64 + 1;
            cache.advance();
        }
        Ok(g.value(b).clone())
    }

    /// Belief for the next step of one trajectory, advancing its cache.
    pub fn decode_belief(&self, s: &Mat<F>, cache: &mut DecoderCache<F>) -> Result<Mat<F>> {
        let mut counters = OpCounters::default();
        self.decode_step_batch(s, &mut [cache], &mut counters)
    }

    // ---- convenience single-item forwards ---------------------------------

    pub fn project_visual_mat(&self, r: &Mat<F>) -> Mat<F> {
        let mut g = Graph::inference(&self.params);
        let x = g.input(r.clone());
        let v = self.project_visual(&mut g, x);
        g.value(v).clone()
    }

    pub fn encode_goal_category_mat(&self, class_id: usize) -> Result<Mat<F>> {
        let mut g = Graph::inference(&self.params);
        let v = self.encode_goal_category(&mut g, &[class_id])?;
        Ok(g.value(v).clone())
    }

    pub fn encode_goal_bbox_mat(&self, detection: &Detection) -> Result<Mat<F>> {
        let mut g = Graph::inference(&self.params);
        let v = self.encode_goal_bbox(&mut g, std::slice::from_ref(detection))?;
        Ok(g.value(v).clone())
    }

    /// Goal embeddings `(g, g_b)` for one step as plain matrices.
    pub fn goal_embedding_mats(&self, goal: &GoalSpec) -> Result<(Option<Mat<F>>, Option<Mat<F>>)> {
        let mut g = Graph::inference(&self.params);
        let (c, b) = self.encode_goals(&mut g, std::slice::from_ref(goal))?;
        Ok((c.map(|v| g.value(v).clone()), b.map(|v| g.value(v).clone())))
    }

    /// State features for stacked per-frame `(v, g, g_b)` matrices.
    pub fn state_encode_mats(&self, v: &Mat<F>, category: Option<&Mat<F>>, bbox: Option<&Mat<F>>, frames: usize) -> Result<Mat<F>> {
        let mut g = Graph::inference(&self.params);
        let vv = g.input(v.clone());
        let c = category.map(|m| g.input(m.clone()));
        let b = bbox.map(|m| g.input(m.clone()));
        let s = self.state_encode(&mut g, vv, c, b, frames)?;
        Ok(g.value(s).clone())
    }

    /// `1 × d` state feature of a single observation.
    pub fn state_feature(&self, obs: &Observation, goal: &GoalSpec) -> Result<Mat<F>> {
        let r = self.patchify_encode(obs)?;
        let mut g = Graph::inference(&self.params);
        let v = g.input(r);
        let s = self.frame_features(&mut g, v, std::slice::from_ref(goal))?;
        Ok(g.value(s).clone())
    }

    pub fn actor_critic_mat(&self, beliefs: &Mat<F>) -> Vec<PolicyOutput<F>> {
        let mut g = Graph::inference(&self.params);
        let b = g.input(beliefs.clone());
        let (l, v) = self.actor_critic(&mut g, b);
        let (l, v) = (g.value(l), g.value(v));
        (0..l.rows()).map(|i| PolicyOutput { logits: l.row(i).to_vec(), value: v.get(i, 0) }).collect()
    }

    /// Beliefs for `R × T` stacked state features under an episodic mask.
    pub fn forward_training_batch(&self, features: &Mat<F>, mask: &EpisodicAttentionMask) -> Result<Mat<F>> {
        let mut g = Graph::inference(&self.params);
        let s = g.input(features.clone());
        let b = self.decode_beliefs(&mut g, s, mask)?;
        Ok(g.value(b).clone())
    }
}

/// Interleaved `(sin, cos)` encoding of a scalar at geometric frequencies.
pub fn sinusoid_encoding(value: f64, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / dim as f64);
        let angle = value * BOX_VALUE_SCALE * freq;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}
