//! Parametric accelerated-failure-time regression:
//! `log T = x'b + sigma * W` with W standard extreme-value (Weibull,
//! exponential), normal (log-normal) or logistic (log-logistic).
//!
//! Parameters are `(intercept, slopes..., log sigma)`; the exponential family
//! and fits with a fixed scale drop the last coordinate.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::bootstrap::{bootstrap, Bootstrap, BootstrapOptions};
use crate::curve::{check_grid, PredictedCurve};
use crate::data::{Covariates, SurvivalDataset};
use crate::design::{Design, Encoding};
use crate::error::{Error, Result};
use crate::newton::{covariance_from_hessian, maximize, Evaluation, NewtonOptions, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Exponential,
    Weibull,
    #[serde(rename = "lognormal", alias = "log_normal")]
    LogNormal,
    #[serde(rename = "loglogistic", alias = "log_logistic")]
    LogLogistic,
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(Distribution::Exponential),
            "weibull" => Ok(Distribution::Weibull),
            "lognormal" | "log_normal" => Ok(Distribution::LogNormal),
            "loglogistic" | "log_logistic" => Ok(Distribution::LogLogistic),
            other => Err(Error::invalid(format!("invalid distribution tag '{other}'"))),
        }
    }
}

/// Error distribution of W on the log-time scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ErrorLaw {
    ExtremeValue,
    Normal,
    Logistic,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

impl ErrorLaw {
    /// (log f, d/dz, d2/dz2)
    fn log_density(self, z: f64) -> (f64, f64, f64) {
        match self {
            ErrorLaw::ExtremeValue => {
                let ez = z.exp();
                (z - ez, 1.0 - ez, -ez)
            }
            ErrorLaw::Normal => (-0.5 * z * z - LN_SQRT_2PI, -z, -1.0),
            ErrorLaw::Logistic => {
                let p = sigmoid(z);
                (z - 2.0 * softplus(z), 1.0 - 2.0 * p, -2.0 * p * (1.0 - p))
            }
        }
    }

    /// (log S, d/dz, d2/dz2)
    fn log_survival(self, z: f64) -> (f64, f64, f64) {
        match self {
            ErrorLaw::ExtremeValue => {
                let ez = z.exp();
                (-ez, -ez, -ez)
            }
            ErrorLaw::Normal => {
                let m = mills_ratio(z);
                (log_normal_upper_tail(z), -m, -m * (m - z))
            }
            ErrorLaw::Logistic => {
                let p = sigmoid(z);
                (-softplus(z), -p, -p * (1.0 - p))
            }
        }
    }

    fn survival(self, z: f64) -> f64 {
        match self {
            ErrorLaw::ExtremeValue => (-z.exp()).exp(),
            ErrorLaw::Normal => 0.5 * erfc(z / std::f64::consts::SQRT_2),
            ErrorLaw::Logistic => 1.0 - sigmoid(z),
        }
    }

    fn median(self) -> f64 {
        match self {
            ErrorLaw::ExtremeValue => std::f64::consts::LN_2.ln(),
            ErrorLaw::Normal | ErrorLaw::Logistic => 0.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z)
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// log P(Z > z) for standard normal Z.
fn log_normal_upper_tail(z: f64) -> f64 {
    if z < 30.0 {
        (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        let z2 = z * z;
        -0.5 * z2 - z.ln() - LN_SQRT_2PI + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// phi(z) / P(Z > z).
fn mills_ratio(z: f64) -> f64 {
    if z < 30.0 {
        let tail = 0.5 * erfc(z / std::f64::consts::SQRT_2);
        (-0.5 * z * z - LN_SQRT_2PI).exp() / tail
    } else {
        let z2 = z * z;
        z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2))
    }
}

impl Distribution {
    fn law(self) -> ErrorLaw {
        match self {
            Distribution::Exponential | Distribution::Weibull => ErrorLaw::ExtremeValue,
            Distribution::LogNormal => ErrorLaw::Normal,
            Distribution::LogLogistic => ErrorLaw::Logistic,
        }
    }
}

/// Right-censored AFT log-likelihood in `(b, log sigma)`.
#[derive(Debug, Clone)]
pub struct ParametricProblem {
    law: ErrorLaw,
    /// Row-major design including the leading intercept column.
    x: Vec<f64>,
    q: usize,
    log_t: Vec<f64>,
    events: Vec<bool>,
    /// Known scale; when set, log sigma is not a parameter.
    fixed_scale: Option<f64>,
}

impl ParametricProblem {
    /// `x` holds covariates only (row-major, `p` columns); an intercept is added.
    pub fn new(
        dist: Distribution,
        times: &[f64],
        events: &[bool],
        x: &[f64],
        p: usize,
        fixed_scale: Option<f64>,
    ) -> Result<Self> {
        let n = times.len();
        if events.len() != n || x.len() != n * p {
            return Err(Error::invalid("inconsistent problem dimensions"));
        }
        if times.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::invalid("parametric families need positive times"));
        }
        let fixed_scale = match dist {
            Distribution::Exponential => Some(1.0),
            _ => fixed_scale,
        };
        if let Some(s) = fixed_scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid("fixed scale must be positive"));
            }
        }
        let q = p + 1;
        let mut xi = Vec::with_capacity(n * q);
        for i in 0..n {
            xi.push(1.0);
            xi.extend_from_slice(&x[i * p..(i + 1) * p]);
        }
        Ok(ParametricProblem {
            law: dist.law(),
            x: xi,
            q,
            log_t: times.iter().map(|t| t.ln()).collect(),
            events: events.to_vec(),
            fixed_scale,
        })
    }

    fn has_scale_param(&self) -> bool {
        self.fixed_scale.is_none()
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], f64) {
        let b = &theta[..self.q];
        let s = match self.fixed_scale {
            Some(sigma) => sigma.ln(),
            None => theta[self.q],
        };
        (b, s)
    }
}

impl Objective for ParametricProblem {
    fn dim(&self) -> usize {
        self.q + usize::from(self.has_scale_param())
    }

    fn evaluate(&self, theta: &[f64]) -> Evaluation {
        let dim = self.dim();
        let q = self.q;
        let (b, s) = self.split(theta);
        let sigma = s.exp();
        let mut loglik = 0.0;
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        for (i, (&y, &ev)) in self.log_t.iter().zip(&self.events).enumerate() {
            let x = &self.x[i * q..(i + 1) * q];
            let eta: f64 = x.iter().zip(b).map(|(a, c)| a * c).sum();
            let z = (y - eta) / sigma;
            let (g, g1, g2) = if ev {
                self.law.log_density(z)
            } else {
                self.law.log_survival(z)
            };
            let delta = if ev { 1.0 } else { 0.0 };
            // log f_T(t) = log f_W(z) - log sigma - log t
            loglik += g - delta * (s + y);
            for j in 0..q {
                grad[j] -= g1 * x[j] / sigma;
                for k in 0..q {
                    hess[j * dim + k] += g2 * x[j] * x[k] / (sigma * sigma);
                }
            }
            if self.has_scale_param() {
                grad[q] += -g1 * z - delta;
                for j in 0..q {
                    let v = x[j] / sigma * (g2 * z + g1);
                    hess[j * dim + q] += v;
                    hess[q * dim + j] += v;
                }
                hess[q * dim + q] += g2 * z * z + g1 * z;
            }
        }
        Evaluation {
            loglik,
            gradient: grad,
            hessian: hess,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametricOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Holds sigma fixed (sigma = 1 turns Weibull into exponential).
    pub fixed_scale: Option<f64>,
}

impl Default for ParametricOptions {
    fn default() -> Self {
        let n = NewtonOptions::default();
        ParametricOptions {
            max_iter: n.max_iter,
            tol: n.tol,
            fixed_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricFit {
    pub distribution: Distribution,
    pub encoding: Encoding,
    pub coefficient_names: Vec<String>,
    /// Intercept followed by covariate effects on log time.
    pub location: Vec<f64>,
    pub scale: f64,
    pub scale_fixed: bool,
    /// Covariance of (location..., log scale) or of location only when the
    /// scale is fixed; row-major.
    pub covariance: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_inf_norm: f64,
    /// Number of zero times replaced by half the smallest positive time.
    pub zero_times_shifted: usize,
    pub max_time: f64,
}

impl ParametricFit {
    pub fn linear_predictor(&self, x: &Covariates) -> Result<f64> {
        let enc = self.encoding.encode(x)?;
        Ok(self.location[0] + enc.iter().zip(&self.location[1..]).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn predict_survival(&self, x: &Covariates, times: &[f64]) -> Result<PredictedCurve> {
        check_grid(times)?;
        let eta = self.linear_predictor(x)?;
        let law = self.distribution.law();
        let values = times
            .iter()
            .map(|&t| {
                if t <= 0.0 {
                    1.0
                } else {
                    law.survival((t.ln() - eta) / self.scale)
                }
            })
            .collect();
        Ok(PredictedCurve {
            values,
            extrapolated: times.iter().map(|&t| t > self.max_time).collect(),
            clamped: Vec::new(),
        })
    }

    /// Median survival time at `x`.
    pub fn predicted_median(&self, x: &Covariates) -> Result<f64> {
        let eta = self.linear_predictor(x)?;
        Ok((eta + self.scale * self.distribution.law().median()).exp())
    }
}

/// Fits `dist` on the predictor and adjusters of the dataset's roles.
pub fn fit_parametric(
    data: &SurvivalDataset,
    dist: Distribution,
    options: &ParametricOptions,
) -> Result<ParametricFit> {
    let design = Design::from_dataset(data, &data.roles().covariate_names())?;
    fit_parametric_design(data.time(), &data.events_of_interest(), &design, dist, options)
}

pub fn fit_parametric_design(
    times: &[f64],
    events: &[bool],
    design: &Design,
    dist: Distribution,
    options: &ParametricOptions,
) -> Result<ParametricFit> {
    if !events.iter().any(|&e| e) {
        return Err(Error::NoEvents);
    }
    design.check_rank()?;
    let min_positive = times
        .iter()
        .copied()
        .filter(|&t| t > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !min_positive.is_finite() {
        return Err(Error::invalid("all survival times are zero"));
    }
    let zero_times_shifted = times.iter().filter(|&&t| t == 0.0).count();
    let shifted: Vec<f64> = times
        .iter()
        .map(|&t| if t == 0.0 { 0.5 * min_positive } else { t })
        .collect();
    let problem = ParametricProblem::new(dist, &shifted, events, &design.x, design.p, options.fixed_scale)?;

    let event_logs: Vec<f64> = shifted
        .iter()
        .zip(events)
        .filter(|(_, &e)| e)
        .map(|(t, _)| t.ln())
        .collect();
    let mean = event_logs.iter().sum::<f64>() / event_logs.len() as f64;
    let sd = if event_logs.len() > 1 {
        (event_logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (event_logs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut start = vec![0.0; problem.dim()];
    start[0] = mean;
    if problem.has_scale_param() {
        start[design.p + 1] = if sd > 0.0 { sd.ln() } else { 0.0 };
    }
    let mut scale = vec![1.0];
    scale.extend(design.std_devs());
    if problem.has_scale_param() {
        scale.push(1.0);
    }
    let newton = NewtonOptions {
        max_iter: options.max_iter,
        tol: options.tol,
        ..NewtonOptions::default()
    };
    let diverged = |theta: &[f64]| theta.iter().any(|v| !v.is_finite() || v.abs() > 1e3);
    let result = maximize(&problem, start, &newton, &scale, diverged)?;
    let covariance = covariance_from_hessian(&result.evaluation.hessian, problem.dim())?;
    let (b, s) = problem.split(&result.theta);
    Ok(ParametricFit {
        distribution: dist,
        encoding: design.encoding.clone(),
        coefficient_names: std::iter::once("(intercept)".to_string())
            .chain(design.names.iter().cloned())
            .collect(),
        location: b.to_vec(),
        scale: s.exp(),
        scale_fixed: !problem.has_scale_param(),
        covariance,
        log_likelihood: result.evaluation.loglik,
        converged: true,
        iterations: result.iterations,
        gradient_inf_norm: result.evaluation.gradient_inf_norm(),
        zero_times_shifted,
        max_time: shifted.iter().copied().fold(0.0, f64::max),
    })
}

pub fn bootstrap_ci(
    data: &SurvivalDataset,
    dist: Distribution,
    options: &ParametricOptions,
    boot: &BootstrapOptions,
) -> Result<Bootstrap<ParametricFit>> {
    bootstrap(data, boot, |d| fit_parametric(d, dist, options))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_closed_form_rate() {
        let t = [2.0, 3.5, 1.0, 7.0, 4.0, 0.5];
        let e = [true, false, true, true, false, true];
        let fit = fit_parametric_design(&t, &e, &Design::empty(6), Distribution::Exponential, &ParametricOptions::default())
            .unwrap();
        let rate = 4.0 / t.iter().sum::<f64>();
        assert!(((-fit.location[0]).exp() - rate).abs() < 1e-10);
        assert_eq!(fit.scale, 1.0);
        // S(1/rate) = e^-1
        let s = fit.predict_survival(&Covariates::new(), &[0.0, 1.0 / rate]).unwrap();
        assert_eq!(s.values[0], 1.0);
        assert!((s.values[1] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn lognormal_uncensored_matches_moments() {
        let t = [1.2, 0.7, 3.3, 2.1, 5.0, 0.9, 1.6];
        let fit = fit_parametric_design(&t, &[true; 7], &Design::empty(7), Distribution::LogNormal, &ParametricOptions::default())
            .unwrap();
        let logs: Vec<f64> = t.iter().map(|v: &f64| v.ln()).collect();
        let mean = logs.iter().sum::<f64>() / 7.0;
        let sd = (logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0).sqrt();
        assert!((fit.location[0] - mean).abs() < 1e-8);
        assert!((fit.scale - sd).abs() < 1e-8);
    }

    #[test]
    fn zero_times_are_shifted_and_flagged() {
        let t = [0.0, 1.0, 2.0, 4.0];
        let fit = fit_parametric_design(&t, &[true; 4], &Design::empty(4), Distribution::Weibull, &ParametricOptions::default())
            .unwrap();
        assert_eq!(fit.zero_times_shifted, 1);
    }

    #[test]
    fn distribution_tags() {
        assert_eq!("weibull".parse::<Distribution>().unwrap(), Distribution::Weibull);
        assert!("gompertz".parse::<Distribution>().is_err());
    }

    #[test]
    fn normal_tail_helpers_are_continuous_at_switch() {
        let below = log_normal_upper_tail(29.999_999);
        let above = log_normal_upper_tail(30.000_001);
        assert!((below - above).abs() < 1e-4);
        assert!((mills_ratio(29.999_999) - mills_ratio(30.000_001)).abs() < 1e-4);
    }
}
