//! Product-limit and cumulative-hazard estimators shared by every model family.
//!
//! At tied times, events are processed before censorings.

use serde::{Deserialize, Serialize};

use crate::data::{lower_median, SurvivalDataset};
use crate::error::{Error, Result};

/// Right-continuous step function with strictly ascending knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    initial: f64,
}

impl StepFunction {
    pub fn new(knots: Vec<f64>, values: Vec<f64>, initial: f64) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::invalid("step function knots and values differ in length"));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("step function knots must be strictly ascending"));
        }
        Ok(StepFunction {
            knots,
            values,
            initial,
        })
    }

    pub fn constant(initial: f64) -> Self {
        StepFunction {
            knots: Vec::new(),
            values: Vec::new(),
            initial,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn last_knot(&self) -> Option<f64> {
        self.knots.last().copied()
    }

    /// Value at `t`, including a jump located exactly at `t`.
    pub fn eval(&self, t: f64) -> f64 {
        match self.knots.partition_point(|&k| k <= t) {
            0 => self.initial,
            i => self.values[i - 1],
        }
    }

    /// Left limit at `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        match self.knots.partition_point(|&k| k < t) {
            0 => self.initial,
            i => self.values[i - 1],
        }
    }

    pub fn eval_many(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.eval(t)).collect()
    }
}

/// Distinct times with at-risk, event and censoring counts.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RiskTable {
    pub times: Vec<f64>,
    pub at_risk: Vec<f64>,
    pub events: Vec<f64>,
    pub censored: Vec<f64>,
}

pub(crate) fn risk_table(times: &[f64], events: &[bool]) -> RiskTable {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut table = RiskTable {
        times: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        censored: Vec::new(),
    };
    let n = times.len();
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let mut d = 0.0;
        let mut c = 0.0;
        let mut j = i;
        while j < n && times[order[j]] == t {
            if events[order[j]] {
                d += 1.0;
            } else {
                c += 1.0;
            }
            j += 1;
        }
        table.times.push(t);
        table.at_risk.push((n - i) as f64);
        table.events.push(d);
        table.censored.push(c);
        i = j;
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmEstimate {
    pub survival: StepFunction,
    /// Greenwood variance of the survival estimate at each knot.
    pub greenwood_variance: Vec<f64>,
    pub at_risk: Vec<f64>,
    pub events: Vec<f64>,
    /// Set when the input had no events, in which case the curve is identically 1.
    pub all_censored: bool,
}

impl KmEstimate {
    /// Greenwood variance at an arbitrary time (0 before the first event).
    pub fn variance_at(&self, t: f64) -> f64 {
        match self.survival.knots().partition_point(|&k| k <= t) {
            0 => 0.0,
            i => self.greenwood_variance[i - 1],
        }
    }
}

pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<KmEstimate> {
    check_inputs(times, events.len())?;
    let table = risk_table(times, events);
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut variance = Vec::new();
    let mut at_risk = Vec::new();
    let mut ev = Vec::new();
    let mut s = 1.0;
    let mut greenwood_sum = 0.0;
    for k in 0..table.times.len() {
        let (n, d) = (table.at_risk[k], table.events[k]);
        if d == 0.0 {
            continue;
        }
        s *= 1.0 - d / n;
        let var = if n > d {
            greenwood_sum += d / (n * (n - d));
            s * s * greenwood_sum
        } else {
            0.0
        };
        knots.push(table.times[k]);
        values.push(s);
        variance.push(var);
        at_risk.push(n);
        ev.push(d);
    }
    let all_censored = knots.is_empty();
    Ok(KmEstimate {
        survival: StepFunction::new(knots, values, 1.0)?,
        greenwood_variance: variance,
        at_risk,
        events: ev,
        all_censored,
    })
}

/// Nelson-Aalen cumulative hazard.
pub fn nelson_aalen(times: &[f64], events: &[bool]) -> Result<StepFunction> {
    check_inputs(times, events.len())?;
    let table = risk_table(times, events);
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut h = 0.0;
    for k in 0..table.times.len() {
        if table.events[k] > 0.0 {
            h += table.events[k] / table.at_risk[k];
            knots.push(table.times[k]);
            values.push(h);
        }
    }
    StepFunction::new(knots, values, 0.0)
}

/// Kaplan-Meier of the censoring distribution. `events` marks observed events
/// (any cause); events at a shared time leave the risk set before censorings.
pub fn censoring_km(times: &[f64], events: &[bool]) -> Result<StepFunction> {
    check_inputs(times, events.len())?;
    let table = risk_table(times, events);
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut g = 1.0;
    for k in 0..table.times.len() {
        let c = table.censored[k];
        if c == 0.0 {
            continue;
        }
        let n = table.at_risk[k] - table.events[k];
        g *= 1.0 - c / n;
        knots.push(table.times[k]);
        values.push(g);
    }
    StepFunction::new(knots, values, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseCif {
    pub cause: u32,
    pub cif: StepFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeIncidence {
    /// One curve per cause 1..=K, all sharing the same knots.
    pub causes: Vec<CauseCif>,
    /// All-cause event-free survival.
    pub overall: StepFunction,
}

impl CumulativeIncidence {
    pub fn cause(&self, code: u32) -> Option<&StepFunction> {
        self.causes.iter().find(|c| c.cause == code).map(|c| &c.cif)
    }
}

/// Aalen-Johansen cumulative incidence for causes `1..=n_causes`; status 0 is censored.
pub fn aalen_johansen(times: &[f64], status: &[u32], n_causes: u32) -> Result<CumulativeIncidence> {
    check_inputs(times, status.len())?;
    if let Some(&bad) = status.iter().find(|&&s| s > n_causes) {
        return Err(Error::UnknownCause(bad));
    }
    let k = n_causes as usize;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let n = times.len();
    let mut knots = Vec::new();
    let mut overall = Vec::new();
    let mut cif_values: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut cif = vec![0.0; k];
    let mut s = 1.0;
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let at_risk = (n - i) as f64;
        let mut d = vec![0.0; k];
        let mut j = i;
        while j < n && times[order[j]] == t {
            let code = status[order[j]] as usize;
            if code > 0 {
                d[code - 1] += 1.0;
            }
            j += 1;
        }
        let total: f64 = d.iter().sum();
        if total > 0.0 {
            for c in 0..k {
                cif[c] += s * d[c] / at_risk;
                cif_values[c].push(cif[c]);
            }
            s *= 1.0 - total / at_risk;
            knots.push(t);
            overall.push(s);
        }
        i = j;
    }
    let causes = cif_values
        .into_iter()
        .enumerate()
        .map(|(c, values)| {
            Ok(CauseCif {
                cause: c as u32 + 1,
                cif: StepFunction::new(knots.clone(), values, 0.0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CumulativeIncidence {
        causes,
        overall: StepFunction::new(knots, overall, 1.0)?,
    })
}

fn check_inputs(times: &[f64], status_len: usize) -> Result<()> {
    if times.is_empty() {
        return Err(Error::invalid("at least one observation is required"));
    }
    if times.len() != status_len {
        return Err(Error::invalid("times and status differ in length"));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::invalid("times must be finite and nonnegative"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmGroup {
    pub label: String,
    pub n: usize,
    pub estimate: KmEstimate,
}

/// Kaplan-Meier curves for the predictor split at its median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianSplit {
    pub predictor: String,
    pub threshold: f64,
    pub low: KmGroup,
    pub high: KmGroup,
}

/// Splits at the lower median of the predictor; values equal to the median go low.
pub fn median_split_km(data: &SurvivalDataset) -> Result<MedianSplit> {
    let x = data.predictor_values();
    let threshold = lower_median(x);
    let events = data.events_of_interest();
    let (low, high): (Vec<usize>, Vec<usize>) = (0..data.n()).partition(|&i| x[i] <= threshold);
    if low.is_empty() || high.is_empty() {
        return Err(Error::DegenerateSplit);
    }
    let group = |rows: &[usize], label: String| -> Result<KmGroup> {
        let t: Vec<f64> = rows.iter().map(|&i| data.time()[i]).collect();
        let e: Vec<bool> = rows.iter().map(|&i| events[i]).collect();
        Ok(KmGroup {
            label,
            n: rows.len(),
            estimate: kaplan_meier(&t, &e)?,
        })
    };
    let name = &data.roles().predictor;
    Ok(MedianSplit {
        predictor: name.clone(),
        threshold,
        low: group(&low, format!("{name} <= {threshold}"))?,
        high: group(&high, format!("{name} > {threshold}"))?,
    })
}
