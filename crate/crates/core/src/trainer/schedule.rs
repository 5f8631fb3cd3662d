/// Rollout length for the update starting at `global_step`: stage `k`
/// begins once `global_step` reaches `thresholds[k - 1]`, and the last stage
/// lasts forever.
pub fn schedule_rollout_length(global_step: u64, lengths: &[usize], thresholds: &[u64]) -> usize {
    let stage = thresholds.iter().take_while(|&&th| global_step >= th).count();
    lengths[stage.min(lengths.len() - 1)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staircase() {
        let (l, th) = ([32, 64, 128], [200_000, 400_000]);
        assert_eq!(schedule_rollout_length(0, &l, &th), 32);
        assert_eq!(schedule_rollout_length(199_999, &l, &th), 32);
        assert_eq!(schedule_rollout_length(200_000, &l, &th), 64);
        assert_eq!(schedule_rollout_length(250_000, &l, &th), 64);
        assert_eq!(schedule_rollout_length(400_001, &l, &th), 128);
        assert_eq!(schedule_rollout_length(u64::MAX, &l, &th), 128);
    }
}
