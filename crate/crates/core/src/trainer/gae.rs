use crate::error::{Error, Result};

/// Generalized advantage estimates and value targets for one worker row.
///
/// `episode_starts[t]` marks frame `t` as the first of a new episode, so no
/// value flows back across it. `bootstrap_value` is the value of the frame
/// after the last one; pass 0 when that frame starts a new episode.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    episode_starts: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || episode_starts.len() != n {
        return Err(Error::Argument(format!(
            "misaligned inputs: {} rewards, {} values, {} flags",
            n,
            values.len(),
            episode_starts.len()
        )));
    }
    if rewards.iter().chain(values).any(|v| !v.is_finite()) || !bootstrap_value.is_finite() {
        return Err(Error::Numeric("non-finite reward or value in advantage estimation".into()));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let (next_value, carry) = if t + 1 == n {
            (bootstrap_value, 1.0)
        } else if episode_starts[t + 1] {
            (0.0, 0.0)
        } else {
            (values[t + 1], 1.0)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * carry * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_td_when_lambda_is_zero() {
        let r = [1.0, 0.5, -0.2];
        let v = [0.3, 0.1, 0.7];
        let (a, ret) = compute_gae(&r, &v, 2.0, &[true, false, true], 0.9, 0.0).unwrap();
        assert!((a[0] - (1.0 + 0.9 * 0.1 - 0.3)).abs() < 1e-12);
        assert!((a[1] - (0.5 - 0.1)).abs() < 1e-12);
        assert!((a[2] - (-0.2 + 0.9 * 2.0 - 0.7)).abs() < 1e-12);
        assert!((ret[2] - (a[2] + 0.7)).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_when_lambda_is_one() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, -0.5, 0.25];
        let g: f64 = 0.9;
        let (a, _) = compute_gae(&r, &v, 4.0, &[true, false, false], g, 1.0).unwrap();
        let expect = 1.0 + g * 2.0 + g * g * 3.0 + g.powi(3) * 4.0 - 0.5;
        assert!((a[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn rejects_nan_and_misalignment() {
        assert!(matches!(compute_gae(&[f64::NAN], &[0.0], 0.0, &[true], 0.9, 0.9), Err(Error::Numeric(_))));
        assert!(matches!(compute_gae(&[0.0], &[], 0.0, &[true], 0.9, 0.9), Err(Error::Argument(_))));
    }
}
