use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome of one evaluated episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    /// Distance actually traveled, meters.
    pub path_length: f64,
    /// Actions issued, including a final `Done`.
    pub steps: usize,
    /// Geodesic distance from start to the success region, meters.
    pub shortest_path: f64,
    /// Minimum action count of the expert planner, if computed.
    pub expert_steps: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub success_rate: f64,
    pub spl: f64,
    pub sel: f64,
    pub episodes: usize,
}

fn ratio(best: f64, actual: f64) -> f64 {
    let m = best.max(actual);
    if m == 0.0 {
        1.0
    } else {
        best / m
    }
}

/// Success rate, success weighted by path length, and success weighted by
/// episode length. Failed episodes contribute zero to both weighted scores.
pub fn compute_metrics(results: &[EpisodeResult]) -> Result<Metrics> {
    if results.is_empty() {
        return Err(Error::Argument("cannot compute metrics over zero episodes".into()));
    }
    let n = results.len() as f64;
    let mut succ = 0.0;
    let mut spl = 0.0;
    let mut sel = 0.0;
    for r in results {
        let w = r.expert_steps.ok_or_else(|| Error::Argument("episode is missing its expert step count".into()))?;
        if r.success {
            succ += 1.0;
            spl += ratio(r.shortest_path, r.path_length);
            sel += ratio(w as f64, r.steps as f64);
        }
    }
    Ok(Metrics { success_rate: succ / n, spl: spl / n, sel: sel / n, episodes: results.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(success: bool, l: f64, p: f64, w: usize, e: usize) -> EpisodeResult {
        EpisodeResult { success, path_length: p, steps: e, shortest_path: l, expert_steps: Some(w) }
    }

    #[test]
    fn hand_values() {
        let m = compute_metrics(&[ep(true, 4.0, 5.0, 20, 25)]).unwrap();
        assert!((m.spl - 0.8).abs() <= 1e-12 && (m.sel - 0.8).abs() <= 1e-12);
        let m = compute_metrics(&[ep(false, 4.0, 5.0, 20, 25), ep(false, 1.0, 9.0, 3, 90)]).unwrap();
        assert_eq!((m.spl, m.sel, m.success_rate), (0.0, 0.0, 0.0));
        let m = compute_metrics(&[ep(true, 3.0, 3.0, 12, 12)]).unwrap();
        assert_eq!((m.spl, m.sel), (1.0, 1.0));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(compute_metrics(&[]), Err(Error::Argument(_))));
    }
}
