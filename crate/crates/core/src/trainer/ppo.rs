use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Mat, Scalar, Var};

/// Loss weights and clip range for the clipped surrogate objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpoWeights {
    pub clip: f64,
    pub value_loss_weight: f64,
    pub entropy_weight: f64,
}

/// Scalar loss terms. `value` is `0.5 * mean((v - R)^2)`; `total` adds it
/// with `value_loss_weight` and subtracts the weighted entropy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

impl LossReport {
    pub fn scaled(self, s: f64) -> Self {
        Self { policy: self.policy * s, value: self.value * s, entropy: self.entropy * s, total: self.total * s }
    }

    pub fn accumulate(&mut self, o: &LossReport) {
        self.policy += o.policy;
        self.value += o.value;
        self.entropy += o.entropy;
        self.total += o.total;
    }
}

/// Per-frame targets for one batch of rows.
#[derive(Clone, Debug, Default)]
pub struct PpoTargets {
    pub actions: Vec<usize>,
    pub old_logprobs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoTargets {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn column<F: Scalar>(xs: &[f64]) -> Mat<F> {
    Mat::from_vec(xs.len(), 1, xs.iter().map(|&x| F::lit(x)).collect())
}

/// Records the PPO loss on `g` and returns the scalar total node plus the
/// term values. `logits` is `n × |A|`, `values` is `n × 1`.
pub fn ppo_loss<F: Scalar>(
    g: &mut Graph<F>,
    logits: Var,
    values: Var,
    targets: &PpoTargets,
    w: &PpoWeights,
) -> Result<(Var, LossReport)> {
    let n = targets.len();
    let (lr, la) = g.shape(logits);
    let (vr, vc) = g.shape(values);
    if n == 0
        || lr != n
        || vr != n
        || vc != 1
        || targets.old_logprobs.len() != n
        || targets.advantages.len() != n
        || targets.returns.len() != n
    {
        return Err(Error::Argument(format!(
            "ppo shapes: logits {lr}x{la}, values {vr}x{vc}, {n} actions, {} logprobs, {} advantages, {} returns",
            targets.old_logprobs.len(),
            targets.advantages.len(),
            targets.returns.len()
        )));
    }
    if let Some(&a) = targets.actions.iter().find(|&&a| a >= la) {
        return Err(Error::Argument(format!("action {a} out of range for {la} logits")));
    }

    let logp = g.log_softmax(logits);
    let picked = g.pick(logp, targets.actions.clone());
    let old = g.input(column(&targets.old_logprobs));
    let diff = g.sub(picked, old);
    let ratio = g.exp(diff);
    let adv = g.input(column(&targets.advantages));
    let surr1 = g.mul(ratio, adv);
    let clipped = g.clamp(ratio, F::lit(1.0 - w.clip), F::lit(1.0 + w.clip));
    let surr2 = g.mul(clipped, adv);
    let surr = g.minimum(surr1, surr2);
    let surr_mean = g.mean_all(surr);
    let policy = g.scale(surr_mean, -F::one());

    let ret = g.input(column(&targets.returns));
    let err = g.sub(values, ret);
    let sq = g.square(err);
    let mse = g.mean_all(sq);
    let value = g.scale(mse, F::lit(0.5));

    let p = g.exp(logp);
    let plogp = g.mul(p, logp);
    let neg_entropy_rows = g.sum_rows(plogp);
    let neg_entropy = g.mean_all(neg_entropy_rows);

    let weighted_value = g.scale(value, F::lit(w.value_loss_weight));
    let total = g.add(policy, weighted_value);
    let weighted_ent = g.scale(neg_entropy, F::lit(w.entropy_weight));
    let total = g.add(total, weighted_ent);

    let get = |v: Var| g.value(v).get(0, 0).to_f64_lossy();
    let report = LossReport { policy: get(policy), value: get(value), entropy: -get(neg_entropy), total: get(total) };
    if !report.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {report:?}")));
    }
    Ok((total, report))
}

/// Log-probability of `action` under `logits`.
pub fn log_prob(logits: &[f64], action: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits[action] - lse
}

/// Zero-mean, unit-variance rescaling in place.
pub fn normalize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for x in xs {
        *x = (*x - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Mat, ParamStore};

    const W: PpoWeights = PpoWeights { clip: 0.1, value_loss_weight: 0.5, entropy_weight: 0.01 };

    fn eval(logits: Mat<f64>, values: Mat<f64>, t: &PpoTargets) -> LossReport {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let l = g.input(logits);
        let v = g.input(values);
        ppo_loss(&mut g, l, v, t, &W).unwrap().1
    }

    #[test]
    fn uniform_logits_have_log6_entropy_and_unit_ratio() {
        let logits = Mat::zeros(3, 6);
        let lp = (1.0f64 / 6.0).ln();
        let t = PpoTargets {
            actions: vec![0, 3, 5],
            old_logprobs: vec![lp; 3],
            advantages: vec![1.0, -2.0, 4.0],
            returns: vec![0.5, 0.5, 0.5],
        };
        let r = eval(logits, Mat::filled(3, 1, 0.5), &t);
        assert!((r.entropy - 6f64.ln()).abs() < 1e-12);
        assert!((r.policy + 1.0).abs() < 1e-12, "policy = -mean(A) = -1, got {}", r.policy);
        assert!(r.value.abs() < 1e-15);
        assert!((r.total - (r.policy - 0.01 * r.entropy)).abs() < 1e-12);
    }

    #[test]
    fn value_term_is_half_mse() {
        let t = PpoTargets { actions: vec![0, 1], old_logprobs: vec![0.0; 2], advantages: vec![0.0; 2], returns: vec![1.0, -1.0] };
        let r = eval(Mat::from_vec(2, 2, vec![0.0, -50.0, -50.0, 0.0]), Mat::from_vec(2, 1, vec![3.0, -1.0]), &t);
        assert!((r.value - 0.5 * (4.0 + 0.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_argument_error() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let l = g.input(Mat::zeros(2, 6));
        let v = g.input(Mat::zeros(3, 1));
        let t = PpoTargets { actions: vec![0, 1], old_logprobs: vec![0.0; 2], advantages: vec![0.0; 2], returns: vec![0.0; 2] };
        assert!(matches!(ppo_loss(&mut g, l, v, &t, &W), Err(Error::Argument(_))));
    }

    #[test]
    fn normalize_gives_zero_mean_unit_variance() {
        let mut xs = vec![1.0, 2.0, 3.0, 10.0];
        normalize(&mut xs);
        let mean: f64 = xs.iter().sum::<f64>() / 4.0;
        let var: f64 = xs.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}
