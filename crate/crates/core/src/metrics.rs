//! Discrimination and calibration diagnostics: Harrell's C-index and the
//! inverse-probability-of-censoring weighted Brier score.

use serde::{Deserialize, Serialize};

use crate::curve::OutcomeKind;
use crate::error::{Error, Result};
use crate::nonparametric::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concordance {
    pub c_index: f64,
    pub comparable_pairs: u64,
    pub concordant_pairs: u64,
    pub tied_pairs: u64,
}

/// Fenwick tree over counts.
struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0; n + 1] }
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count at positions `< i`.
    fn prefix(&self, i: usize) -> u64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's C over pairs `(i, j)` with `T_i < T_j` and an event at `T_i`;
/// concordant when the earlier failure has the higher score, score ties
/// counting one half. Runs in O(n log n).
pub fn c_index(times: &[f64], events: &[bool], scores: &[f64]) -> Result<Concordance> {
    let n = times.len();
    if events.len() != n || scores.len() != n {
        return Err(Error::invalid("times, events and scores differ in length"));
    }
    if scores.iter().chain(times).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite time or score"));
    }
    let mut sorted_scores = scores.to_vec();
    sorted_scores.sort_by(f64::total_cmp);
    sorted_scores.dedup();
    let rank = |s: f64| sorted_scores.partition_point(|&v| v < s);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut later = Fenwick::new(sorted_scores.len());
    let mut inserted = 0u64;
    let (mut pairs, mut concordant, mut tied) = (0u64, 0u64, 0u64);
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let mut j = i;
        while j < n && times[order[j]] == t {
            j += 1;
        }
        for &r in &order[i..j] {
            if events[r] {
                let k = rank(scores[r]);
                let below = later.prefix(k);
                let at_or_below = later.prefix(k + 1);
                pairs += inserted;
                concordant += below;
                tied += at_or_below - below;
            }
        }
        for &r in &order[i..j] {
            later.add(rank(scores[r]));
            inserted += 1;
        }
        i = j;
    }
    if pairs == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(Concordance {
        c_index: (concordant as f64 + 0.5 * tied as f64) / pairs as f64,
        comparable_pairs: pairs,
        concordant_pairs: concordant,
        tied_pairs: tied,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrierPoint {
    pub time: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrierResult {
    pub integrated: f64,
    pub tau: f64,
    pub curve: Vec<BrierPoint>,
}

/// Integrated Brier score of survival predictions. `predictions[i][k]` is the
/// predicted S(grid[k] | x_i); `grid` must start at 0 and end at tau > 0;
/// `censoring` is the censoring survival estimate.
pub fn integrated_brier(
    predictions: &[Vec<f64>],
    times: &[f64],
    events: &[bool],
    grid: &[f64],
    censoring: &StepFunction,
) -> Result<BrierResult> {
    let status: Vec<u32> = events.iter().map(|&e| u32::from(e)).collect();
    brier(predictions, times, &status, None, grid, censoring)
}

/// Integrated Brier score of cumulative incidence predictions for `cause`.
/// Competing events keep weight 1/G(T_i-) with target 0.
pub fn integrated_brier_cif(
    predictions: &[Vec<f64>],
    times: &[f64],
    status: &[u32],
    cause: u32,
    grid: &[f64],
    censoring: &StepFunction,
) -> Result<BrierResult> {
    brier(predictions, times, status, Some(cause), grid, censoring)
}

fn brier(
    predictions: &[Vec<f64>],
    times: &[f64],
    status: &[u32],
    cause: Option<u32>,
    grid: &[f64],
    censoring: &StepFunction,
) -> Result<BrierResult> {
    let n = times.len();
    if n == 0 || status.len() != n || predictions.len() != n {
        return Err(Error::invalid("predictions, times and status differ in length"));
    }
    if grid.first() != Some(&0.0) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("Brier grid must be strictly ascending from 0"));
    }
    let tau = *grid.last().expect("non-empty grid");
    if !(tau > 0.0) {
        return Err(Error::invalid("evaluation window must have positive length"));
    }
    if predictions.iter().any(|p| p.len() != grid.len()) {
        return Err(Error::invalid("each prediction row must cover the grid"));
    }
    let g_left: Vec<f64> = times.iter().map(|&t| censoring.eval_left(t)).collect();
    let mut curve = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        let g_t = censoring.eval(t);
        let mut sum = 0.0;
        for i in 0..n {
            let (weight_denominator, target) = if times[i] > t {
                (g_t, if cause.is_some() { 0.0 } else { 1.0 })
            } else if status[i] > 0 {
                let target = match cause {
                    None => 0.0,
                    Some(c) => f64::from(u8::from(status[i] == c)),
                };
                (g_left[i], target)
            } else {
                continue;
            };
            if !(weight_denominator > 0.0) {
                return Err(Error::CensoringExhausted);
            }
            let r = target - predictions[i][k];
            sum += r * r / weight_denominator;
        }
        curve.push(BrierPoint {
            time: t,
            score: sum / n as f64,
        });
    }
    let area: f64 = curve
        .windows(2)
        .map(|w| 0.5 * (w[0].score + w[1].score) * (w[1].time - w[0].time))
        .sum();
    Ok(BrierResult {
        integrated: area / tau,
        tau,
        curve,
    })
}

/// Default window end: the largest event time at which the censoring
/// survival still exceeds 0.05.
pub fn default_tau(times: &[f64], events: &[bool], censoring: &StepFunction) -> Result<f64> {
    times
        .iter()
        .zip(events)
        .filter(|&(&t, &e)| e && t > 0.0 && censoring.eval(t) > 0.05)
        .map(|(&t, _)| t)
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |v| v.max(t))))
        .ok_or(Error::CensoringExhausted)
}

/// Evaluation grid on [0, tau]: 0, the distinct event times inside the
/// window, and tau, thinned evenly to at most `max_points`.
pub fn brier_grid(times: &[f64], events: &[bool], tau: f64, max_points: usize) -> Vec<f64> {
    let mut pts: Vec<f64> = times
        .iter()
        .zip(events)
        .filter(|&(&t, &e)| e && t > 0.0 && t < tau)
        .map(|(&t, _)| t)
        .collect();
    pts.push(0.0);
    pts.push(tau);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    thin_evenly(&pts, max_points.max(2))
}

/// Keeps the first and last points and an evenly spaced selection between.
pub(crate) fn thin_evenly(points: &[f64], max_points: usize) -> Vec<f64> {
    if points.len() <= max_points {
        return points.to_vec();
    }
    let last = points.len() - 1;
    let mut out: Vec<f64> = (0..max_points)
        .map(|k| points[(k * last + (max_points - 1) / 2) / (max_points - 1)])
        .collect();
    out[0] = points[0];
    out[max_points - 1] = points[last];
    out.dedup();
    out
}

/// Diagnostics for a fitted model on its training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub outcome_kind: OutcomeKind,
    pub c_index: f64,
    pub comparable_pairs: u64,
    pub integrated_brier: f64,
    /// Evaluation window is [0, tau].
    pub tau: f64,
    pub brier_curve: Vec<BrierPoint>,
    /// How risk scores were formed for the C-index.
    pub risk_score: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_tied_scores() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let e = [true; 4];
        let c = c_index(&t, &e, &[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(c.c_index, 1.0);
        assert_eq!(c.comparable_pairs, 6);
        assert_eq!(c_index(&t, &e, &[1.0; 4]).unwrap().c_index, 0.5);
        assert_eq!(c_index(&t, &e, &[1.0, 2.0, 3.0, 4.0]).unwrap().c_index, 0.0);
    }

    #[test]
    fn censored_subject_only_compared_as_later() {
        // pairs: (1,2),(1,3),(1,4),(3,4); subject 2 censored at 2
        let t = [1.0, 2.0, 3.0, 4.0];
        let e = [true, false, true, true];
        let c = c_index(&t, &e, &[0.9, 0.1, 0.5, 0.7]).unwrap();
        assert_eq!(c.comparable_pairs, 4);
        assert_eq!(c.concordant_pairs, 3);
        assert_eq!(c.c_index, 0.75);
    }

    #[test]
    fn no_comparable_pairs() {
        assert!(matches!(
            c_index(&[1.0, 2.0], &[false, true], &[1.0, 2.0]),
            Err(Error::NoComparablePairs)
        ));
        // equal times are not comparable
        assert!(c_index(&[1.0, 1.0], &[true, true], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn brier_constant_half_without_censoring() {
        let t = [1.0, 2.0, 3.0];
        let e = [true; 3];
        let grid = [0.0, 0.5, 1.5, 2.5];
        let preds = vec![vec![0.5; 4]; 3];
        let r = integrated_brier(&preds, &t, &e, &grid, &StepFunction::constant(1.0)).unwrap();
        for p in &r.curve {
            assert!((p.score - 0.25).abs() < 1e-15);
        }
        assert!((r.integrated - 0.25).abs() < 1e-15);
    }

    #[test]
    fn brier_zero_when_no_events_before_tau() {
        let t = [5.0, 6.0];
        let e = [true, false];
        let grid = [0.0, 1.0, 2.0];
        let preds = vec![vec![1.0; 3]; 2];
        let r = integrated_brier(&preds, &t, &e, &grid, &StepFunction::constant(1.0)).unwrap();
        assert_eq!(r.integrated, 0.0);
        assert_eq!(r.tau, 2.0);
    }

    #[test]
    fn exhausted_censoring_is_an_error() {
        let g = StepFunction::new(vec![1.0], vec![0.0], 1.0).unwrap();
        let preds = vec![vec![1.0, 1.0]; 2];
        let err = integrated_brier(&preds, &[3.0, 1.0], &[true, false], &[0.0, 2.0], &g).unwrap_err();
        assert!(matches!(err, Error::CensoringExhausted));
        assert_eq!(err.to_string(), "censoring support exhausted; shrink tau");
    }

    #[test]
    fn thinning_keeps_endpoints() {
        let pts: Vec<f64> = (0..1000).map(f64::from).collect();
        let t = thin_evenly(&pts, 200);
        assert_eq!(t.len(), 200);
        assert_eq!(t[0], 0.0);
        assert_eq!(*t.last().unwrap(), 999.0);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }
}
