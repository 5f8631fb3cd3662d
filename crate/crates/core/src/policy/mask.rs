use crate::error::{Error, Result};
use crate::tensor::Span;

/// Block lower-triangular attention mask over `rows × len` flattened
/// timesteps. A query sees keys from the start of its own episode up to
/// itself; nothing crosses an episode boundary or a rollout row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpisodicAttentionMask {
    rows: usize,
    len: usize,
    segment_start: Vec<usize>,
    positions: Vec<u32>,
}

impl EpisodicAttentionMask {
    /// Plain causal mask over a single sequence.
    pub fn causal(len: usize) -> Self {
        let mut starts = vec![false; len];
        if let Some(first) = starts.first_mut() {
            *first = true;
        }
        Self::from_episode_starts(&starts, 1, len)
    }

    /// Builds the mask from per-step episode-start flags; positions restart at
    /// zero at each flagged step and at the start of each row.
    pub fn from_episode_starts(starts: &[bool], rows: usize, len: usize) -> Self {
        assert_eq!(starts.len(), rows * len, "flags must cover rows x len");
        let mut segment_start = Vec::with_capacity(rows * len);
        let mut positions = Vec::with_capacity(rows * len);
        for r in 0..rows {
            let mut seg = r * len;
            for t in 0..len {
                let i = r * len + t;
                if t == 0 || starts[i] {
                    seg = i;
                }
                segment_start.push(seg);
                positions.push((i - seg) as u32);
            }
        }
        Self { rows, len, segment_start, positions }
    }

    /// Like [`Self::from_episode_starts`] but with explicit within-episode step
    /// indices, for windows that begin mid-episode.
    pub fn with_step_indices(starts: &[bool], steps: &[u32], rows: usize, len: usize) -> Result<Self> {
        if starts.len() != rows * len || steps.len() != rows * len {
            return Err(Error::Internal(format!(
                "mask inputs cover {} flags / {} steps, expected {}",
                starts.len(),
                steps.len(),
                rows * len
            )));
        }
        let mut mask = Self::from_episode_starts(starts, rows, len);
        for r in 0..rows {
            for t in 0..len {
                let i = r * len + t;
                if starts[i] && steps[i] != 0 {
                    return Err(Error::Internal(format!("row {r} step {t}: episode start with step index {}", steps[i])));
                }
                if t > 0 && !starts[i] && steps[i] != steps[i - 1] + 1 {
                    return Err(Error::Internal(format!(
                        "row {r} step {t}: step index {} does not continue {}",
                        steps[i],
                        steps[i - 1]
                    )));
                }
            }
        }
        mask.positions = steps.to_vec();
        Ok(mask)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0 || self.rows == 0
    }

    pub fn total(&self) -> usize {
        self.rows * self.len
    }

    pub fn allows(&self, query: usize, key: usize) -> bool {
        key <= query && key >= self.segment_start[query]
    }

    /// Key range visible to each flattened query.
    pub fn spans(&self) -> Vec<Span> {
        self.segment_start.iter().enumerate().map(|(i, &s)| Span::new(s, i + 1)).collect()
    }

    /// Rotary positions (within-episode step index) for each flattened step.
    pub fn positions(&self) -> &[u32] {
        &self.positions
    }

    /// Number of query–key pairs scored under this mask.
    pub fn score_pairs(&self) -> u64 {
        self.segment_start.iter().enumerate().map(|(i, &s)| (i + 1 - s) as u64).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        let n = self.total();
        (0..n).map(|q| (0..n).map(|k| self.allows(q, k)).collect()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_episode_is_causal() {
        let m = EpisodicAttentionMask::from_episode_starts(&[true, false, false, false], 1, 4);
        let dense = m.to_dense();
        for q in 0..4 {
            for k in 0..4 {
                assert_eq!(dense[q][k], k <= q);
            }
        }
        assert_eq!(m, EpisodicAttentionMask::causal(4));
    }

    #[test]
    fn two_episodes_give_two_blocks() {
        let m = EpisodicAttentionMask::from_episode_starts(&[true, false, false, true, false], 1, 5);
        let expected = [
            [true, false, false, false, false],
            [true, true, false, false, false],
            [true, true, true, false, false],
            [false, false, false, true, false],
            [false, false, false, true, true],
        ];
        let dense = m.to_dense();
        for q in 0..5 {
            assert_eq!(dense[q], expected[q]);
        }
        assert_eq!(m.positions(), &[0, 1, 2, 0, 1]);
        assert_eq!(m.score_pairs(), 1 + 2 + 3 + 1 + 2);
    }

    #[test]
    fn rows_never_mix() {
        let m = EpisodicAttentionMask::from_episode_starts(&[false, false, false, false], 2, 2);
        assert!(!m.allows(2, 1));
        assert!(m.allows(3, 2));
    }

    #[test]
    fn inconsistent_step_indices_rejected() {
        assert!(EpisodicAttentionMask::with_step_indices(&[false, false, true], &[7, 8, 0], 1, 3).is_ok());
        assert!(matches!(
            EpisodicAttentionMask::with_step_indices(&[false, false, true], &[7, 9, 0], 1, 3),
            Err(Error::Internal(_))
        ));
        assert!(EpisodicAttentionMask::with_step_indices(&[true, false], &[1, 2], 1, 2).is_err());
    }
}
