use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Event-free survival probability, non-increasing in time.
    Survival,
    /// Cumulative incidence of the cause of interest, non-decreasing in time.
    Cif,
}

/// Model prediction over a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedCurve {
    pub values: Vec<f64>,
    /// True where the time lies beyond the model's last estimated jump and the
    /// value is a constant extrapolation.
    pub extrapolated: Vec<bool>,
    /// True where a value had to be clamped into [0, 1].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clamped: Vec<bool>,
}

pub(crate) fn check_grid(times: &[f64]) -> crate::Result<()> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(crate::Error::invalid("time grid must be finite and nonnegative"));
    }
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(crate::Error::invalid("time grid must be ascending"));
    }
    Ok(())
}
