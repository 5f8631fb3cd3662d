use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::ppo::{normalize, ppo_loss, LossReport, PpoTargets, PpoWeights};
use super::rollout::RolloutBuffer;
use crate::error::{Error, Result};
use crate::policy::{EpisodicAttentionMask, PolicyModel};
use crate::tensor::{clip_global_norm, Grads, Mat, Scalar};

/// Knobs for one PPO update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateSettings {
    pub weights: PpoWeights,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub repeats: usize,
    pub minibatches: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub shards: usize,
    pub rows_per_chunk: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    /// Mean loss terms over all passes, measured before each step.
    pub loss: LossReport,
    /// Global gradient norm of the last step, before and after clipping.
    pub grad_norm_pre: f64,
    pub grad_norm_post: f64,
    pub frames: usize,
    pub seconds: f64,
}

/// Loss and gradients for worker rows `rows` of `buffer`, with the loss
/// multiplied by `scale` before differentiation.
pub fn rows_loss_grads<F: Scalar>(
    model: &PolicyModel<F>,
    buffer: &RolloutBuffer<F>,
    targets: &PpoTargets,
    rows: Range<usize>,
    weights: &PpoWeights,
    scale: f64,
) -> Result<(Grads<F>, LossReport)> {
    let t = buffer.len;
    let frames = rows.start * t..rows.end * t;
    let mut g = crate::tensor::Graph::new(model.params());
    let refs: Vec<&Mat<F>> = buffer.tokens[frames.clone()].iter().collect();
    let visual = g.input(Mat::vstack(&refs));
    let mask = EpisodicAttentionMask::with_step_indices(
        &buffer.starts[frames.clone()],
        &buffer.steps[frames.clone()],
        rows.len(),
        t,
    )?;
    let (logits, values) = model.forward_sequence(&mut g, visual, &buffer.goals[frames.clone()], &mask)?;
    let sub = PpoTargets {
        actions: targets.actions[frames.clone()].to_vec(),
        old_logprobs: targets.old_logprobs[frames.clone()].to_vec(),
        advantages: targets.advantages[frames.clone()].to_vec(),
        returns: targets.returns[frames].to_vec(),
    };
    let (total, report) = ppo_loss(&mut g, logits, values, &sub, weights)?;
    let loss = g.scale(total, F::lit(scale));
    Ok((g.backward(loss), report))
}

/// Loss and gradient of one minibatch (a contiguous block of worker rows),
/// accumulated over row chunks and split across learner shards. The result
/// equals a single whole-minibatch backward pass up to rounding.
pub fn minibatch_grads<F: Scalar>(
    model: &PolicyModel<F>,
    buffer: &RolloutBuffer<F>,
    targets: &PpoTargets,
    rows: Range<usize>,
    s: &UpdateSettings,
) -> Result<(Grads<F>, LossReport)> {
    let total_rows = rows.len();
    let step = s.rows_per_chunk.max(1);
    let chunks: Vec<Range<usize>> =
        rows.clone().step_by(step).map(|lo| lo..(lo + step).min(rows.end)).collect();
    let shards = s.shards.clamp(1, chunks.len());
    let run_shard = |mine: &[Range<usize>]| -> Result<(Grads<F>, LossReport)> {
        let mut acc = model.params().zeros_like();
        let mut rep = LossReport::default();
        for c in mine {
            let w = c.len() as f64 / total_rows as f64;
            let (gr, r) = rows_loss_grads(model, buffer, targets, c.clone(), &s.weights, w)?;
            acc.add_assign(&gr);
            rep.accumulate(&r.scaled(w));
        }
        Ok((acc, rep))
    };
    let per = chunks.len().div_ceil(shards);
    let parts: Vec<Result<(Grads<F>, LossReport)>> = if shards == 1 {
        vec![run_shard(&chunks)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks.chunks(per).map(|mine| scope.spawn(move || run_shard(mine))).collect();
            handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Internal("learner shard panicked".into())))).collect()
        })
    };
    let mut grads = model.params().zeros_like();
    let mut report = LossReport::default();
    for p in parts {
        let (g, r) = p?;
        grads.add_assign(&g);
        report.accumulate(&r);
    }
    Ok((grads, report))
}

/// Several passes of clipped-gradient Adam steps over the buffer. The
/// frozen backbone lives outside the parameter store and never changes.
pub fn update<F: Scalar>(
    model: &mut PolicyModel<F>,
    opt: &mut Adam<F>,
    buffer: &RolloutBuffer<F>,
    s: &UpdateSettings,
) -> Result<UpdateReport> {
    let started = Instant::now();
    let (mut adv, ret) = buffer.advantages(s.gamma, s.gae_lambda)?;
    if s.normalize_advantages {
        normalize(&mut adv);
    }
    let targets = buffer.targets(adv, ret);
    let m = s.minibatches.clamp(1, buffer.rows);
    let per = buffer.rows.div_ceil(m);
    let mut report = UpdateReport { frames: buffer.frames(), ..Default::default() };
    let mut steps = 0usize;
    for _ in 0..s.repeats {
        for lo in (0..buffer.rows).step_by(per) {
            let rows = lo..(lo + per).min(buffer.rows);
            let (mut grads, loss) = minibatch_grads(model, buffer, &targets, rows, s)?;
            if !loss.total.is_finite() || !grads.all_finite() {
                return Err(Error::Numeric(format!("non-finite loss or gradient: {loss:?}")));
            }
            let pre = clip_global_norm(&mut grads, F::lit(s.max_grad_norm)).to_f64_lossy();
            report.grad_norm_pre = pre;
            report.grad_norm_post = grads.global_norm().to_f64_lossy();
            opt.step(model.params_mut(), &grads)?;
            report.loss.accumulate(&loss);
            steps += 1;
        }
    }
    report.loss = report.loss.scaled(1.0 / steps.max(1) as f64);
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}
