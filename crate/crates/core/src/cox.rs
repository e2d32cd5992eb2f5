//! Cox proportional hazards: Newton-Raphson on the (optionally stratified) log
//! partial likelihood with Efron or Breslow ties, Breslow baseline hazard, and
//! conditional survival prediction.
//!
//! Covariates are centered at their sample means before fitting, so each
//! baseline cumulative hazard refers to the mean covariate vector.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap, Bootstrap, BootstrapOptions};
use crate::curve::{check_grid, PredictedCurve};
use crate::data::{Covariates, SurvivalDataset};
use crate::design::{Design, Encoding};
use crate::error::{Error, Result};
use crate::newton::{covariance_from_hessian, maximize, Evaluation, NewtonOptions, Objective};
use crate::nonparametric::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ties {
    #[default]
    Efron,
    Breslow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    pub ties: Ties,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        let n = NewtonOptions::default();
        CoxOptions {
            ties: Ties::Efron,
            max_iter: n.max_iter,
            tol: n.tol,
        }
    }
}

impl CoxOptions {
    pub(crate) fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            ..NewtonOptions::default()
        }
    }
}

/// Standardized coefficient magnitude treated as divergence.
pub const BETA_CAP: f64 = 50.0;

/// Outcome columns of a fit, independent of covariates.
#[derive(Debug, Clone, Copy)]
pub struct SurvivalFrame<'a> {
    pub time: &'a [f64],
    pub events: &'a [bool],
    /// Stratum level names and per-row codes.
    pub strata: Option<(&'a [String], &'a [usize])>,
}

impl<'a> SurvivalFrame<'a> {
    pub fn new(time: &'a [f64], events: &'a [bool]) -> Self {
        SurvivalFrame {
            time,
            events,
            strata: None,
        }
    }

    fn stratum_rows(&self) -> Vec<Vec<usize>> {
        match self.strata {
            None => vec![(0..self.time.len()).collect()],
            Some((levels, codes)) => {
                let mut rows = vec![Vec::new(); levels.len()];
                for (i, &c) in codes.iter().enumerate() {
                    rows[c].push(i);
                }
                rows
            }
        }
    }
}

/// Rows of one stratum grouped by distinct time, latest time first.
#[derive(Debug, Clone)]
struct TimeGroups {
    /// (time, rows at that time, event rows at that time)
    groups: Vec<(f64, Vec<usize>, Vec<usize>)>,
}

impl TimeGroups {
    fn build(rows: &[usize], time: &[f64], events: &[bool]) -> Self {
        let mut sorted = rows.to_vec();
        sorted.sort_by(|&a, &b| time[b].total_cmp(&time[a]));
        let mut groups: Vec<(f64, Vec<usize>, Vec<usize>)> = Vec::new();
        for r in sorted {
            match groups.last_mut() {
                Some((t, all, ev)) if *t == time[r] => {
                    all.push(r);
                    if events[r] {
                        ev.push(r);
                    }
                }
                _ => groups.push((time[r], vec![r], if events[r] { vec![r] } else { vec![] })),
            }
        }
        TimeGroups { groups }
    }
}

/// Log partial likelihood with analytic score and Hessian.
#[derive(Debug, Clone)]
pub struct CoxProblem {
    x: Vec<f64>,
    events: Vec<bool>,
    p: usize,
    ties: Ties,
    strata: Vec<TimeGroups>,
}

impl CoxProblem {
    /// `x` is the row-major (already centered, if desired) design with `p` columns.
    pub fn new(frame: &SurvivalFrame<'_>, x: Vec<f64>, p: usize, ties: Ties) -> Result<Self> {
        let n = frame.time.len();
        if frame.events.len() != n || x.len() != n * p {
            return Err(Error::invalid("inconsistent problem dimensions"));
        }
        let strata = frame
            .stratum_rows()
            .iter()
            .map(|rows| TimeGroups::build(rows, frame.time, frame.events))
            .collect();
        Ok(CoxProblem {
            x,
            events: frame.events.to_vec(),
            p,
            ties,
            strata,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn linear_predictor(&self, beta: &[f64], i: usize) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// Breslow cumulative hazard increments per stratum at `beta`.
    fn baselines(&self, beta: &[f64]) -> Result<Vec<StepFunction>> {
        self.strata
            .iter()
            .map(|tg| {
                let mut s0 = 0.0;
                let mut incs: Vec<(f64, f64)> = Vec::new();
                for (t, all, ev) in &tg.groups {
                    for &r in all {
                        s0 += self.linear_predictor(beta, r).exp();
                    }
                    if !ev.is_empty() {
                        incs.push((*t, ev.len() as f64 / s0));
                    }
                }
                incs.reverse();
                let mut h = 0.0;
                let (knots, values): (Vec<f64>, Vec<f64>) = incs
                    .into_iter()
                    .map(|(t, d)| {
                        h += d;
                        (t, h)
                    })
                    .unzip();
                StepFunction::new(knots, values, 0.0)
            })
            .collect()
    }
}

impl Objective for CoxProblem {
    fn dim(&self) -> usize {
        self.p
    }

    fn evaluate(&self, beta: &[f64]) -> Evaluation {
        let p = self.p;
        let mut loglik = 0.0;
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        let mut d1 = vec![0.0; p];
        let mut d2 = vec![0.0; p * p];
        let mut a1 = vec![0.0; p];
        for tg in &self.strata {
            let mut s0 = 0.0;
            s1.iter_mut().for_each(|v| *v = 0.0);
            s2.iter_mut().for_each(|v| *v = 0.0);
            for (_, all, ev) in &tg.groups {
                let mut d0 = 0.0;
                d1.iter_mut().for_each(|v| *v = 0.0);
                d2.iter_mut().for_each(|v| *v = 0.0);
                for &r in all {
                    let x = self.row(r);
                    let eta = self.linear_predictor(beta, r);
                    let w = eta.exp();
                    s0 += w;
                    for j in 0..p {
                        s1[j] += w * x[j];
                        for k in 0..=j {
                            s2[j * p + k] += w * x[j] * x[k];
                        }
                    }
                    if self.events[r] {
                        loglik += eta;
                        d0 += w;
                        for j in 0..p {
                            grad[j] += x[j];
                            d1[j] += w * x[j];
                            for k in 0..=j {
                                d2[j * p + k] += w * x[j] * x[k];
                            }
                        }
                    }
                }
                let d = ev.len();
                if d == 0 {
                    continue;
                }
                let (reps, mult) = match self.ties {
                    Ties::Breslow => (1, d as f64),
                    Ties::Efron => (d, 1.0),
                };
                for l in 0..reps {
                    let f = match self.ties {
                        Ties::Breslow => 0.0,
                        Ties::Efron => l as f64 / d as f64,
                    };
                    let a0 = s0 - f * d0;
                    for j in 0..p {
                        a1[j] = s1[j] - f * d1[j];
                    }
                    loglik -= mult * a0.ln();
                    for j in 0..p {
                        grad[j] -= mult * a1[j] / a0;
                        for k in 0..=j {
                            let a2 = s2[j * p + k] - f * d2[j * p + k];
                            hess[j * p + k] -= mult * (a2 / a0 - a1[j] * a1[k] / (a0 * a0));
                        }
                    }
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                hess[k * p + j] = hess[j * p + k];
            }
        }
        Evaluation {
            loglik,
            gradient: grad,
            hessian: hess,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataInfo {
    pub column: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub encoding: Encoding,
    pub coefficient_names: Vec<String>,
    pub beta: Vec<f64>,
    /// Inverse observed information at the estimate, row-major.
    pub covariance: Vec<f64>,
    pub centering: Vec<f64>,
    pub strata: Option<StrataInfo>,
    /// Breslow cumulative hazard per stratum (a single entry when unstratified),
    /// on the centered covariate scale.
    pub baselines: Vec<StepFunction>,
    pub log_pl_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub score_inf_norm: f64,
    pub ties: Ties,
    pub cause: u32,
}

impl CoxFit {
    pub fn log_partial_likelihood(&self) -> f64 {
        *self.log_pl_trace.last().expect("non-empty trace")
    }

    pub fn is_stratified(&self) -> bool {
        self.strata.is_some()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        let p = self.beta.len();
        (0..p).map(|j| self.covariance[j * p + j].sqrt()).collect()
    }

    /// Linear predictor relative to the centering means.
    pub fn linear_predictor(&self, x: &Covariates) -> Result<f64> {
        let enc = self.encoding.encode(x)?;
        Ok(enc
            .iter()
            .zip(&self.centering)
            .zip(&self.beta)
            .map(|((v, m), b)| (v - m) * b)
            .sum())
    }

    fn stratum_index(&self, stratum: Option<&str>) -> Result<usize> {
        match (&self.strata, stratum) {
            (None, None) => Ok(0),
            (None, Some(s)) => Err(Error::invalid(format!(
                "stratum '{s}' given for an unstratified fit"
            ))),
            (Some(_), None) => Err(Error::invalid("stratified fit needs a stratum level")),
            (Some(info), Some(s)) => info
                .levels
                .iter()
                .position(|l| l == s)
                .ok_or_else(|| Error::UnknownStratum(s.to_string())),
        }
    }

    pub fn baseline(&self, stratum: Option<&str>) -> Result<&StepFunction> {
        Ok(&self.baselines[self.stratum_index(stratum)?])
    }

    /// S(t | x) = exp(-H0(t) exp(lp)); constant beyond the last baseline jump.
    pub fn predict_survival(
        &self,
        x: &Covariates,
        times: &[f64],
        stratum: Option<&str>,
    ) -> Result<PredictedCurve> {
        check_grid(times)?;
        let base = self.baseline(stratum)?;
        let risk = self.linear_predictor(x)?.exp();
        let last = base.last_knot().unwrap_or(0.0);
        Ok(PredictedCurve {
            values: times.iter().map(|&t| (-base.eval(t) * risk).exp()).collect(),
            extrapolated: times.iter().map(|&t| t > last).collect(),
            clamped: Vec::new(),
        })
    }
}

/// Fits a Cox model using the dataset's roles: predictor and adjusters as
/// covariates, stratified when the roles name a strata column.
pub fn fit_cox(data: &SurvivalDataset, options: &CoxOptions) -> Result<CoxFit> {
    let roles = data.roles();
    let design = Design::from_dataset(data, &roles.covariate_names())?;
    let events = data.events_of_interest();
    let frame = SurvivalFrame {
        time: data.time(),
        events: &events,
        strata: data.strata(),
    };
    let mut fit = fit_cox_design(&frame, &design, options)?;
    fit.cause = roles.cause_of_interest;
    if let (Some(info), Some(col)) = (fit.strata.as_mut(), roles.strata.as_ref()) {
        info.column = col.clone();
    }
    Ok(fit)
}

/// Fits a Cox model on an explicit design (which may have zero columns).
pub fn fit_cox_design(frame: &SurvivalFrame<'_>, design: &Design, options: &CoxOptions) -> Result<CoxFit> {
    if !frame.events.iter().any(|&e| e) {
        return Err(Error::NoEvents);
    }
    design.check_rank()?;
    let (xc, centering) = design.centered();
    let problem = CoxProblem::new(frame, xc, design.p, options.ties)?;
    let sds = design.std_devs();
    let diverged = |b: &[f64]| b.iter().zip(&sds).any(|(bj, s)| (bj * s).abs() > BETA_CAP);
    let result = maximize(&problem, vec![0.0; design.p], &options.newton(), &sds, diverged)?;
    let covariance = covariance_from_hessian(&result.evaluation.hessian, design.p)?;
    let baselines = problem.baselines(&result.theta)?;
    Ok(CoxFit {
        encoding: design.encoding.clone(),
        coefficient_names: design.names.clone(),
        score_inf_norm: result.evaluation.gradient_inf_norm(),
        beta: result.theta,
        covariance,
        centering,
        strata: frame.strata.map(|(levels, _)| StrataInfo {
            column: String::new(),
            levels: levels.to_vec(),
        }),
        baselines,
        log_pl_trace: result.trace,
        converged: true,
        iterations: result.iterations,
        ties: options.ties,
        cause: 1,
    })
}

/// Nonparametric bootstrap of Cox refits; resampling is within strata when
/// the roles are stratified.
pub fn bootstrap_ci(
    data: &SurvivalDataset,
    options: &CoxOptions,
    boot: &BootstrapOptions,
) -> Result<Bootstrap<CoxFit>> {
    bootstrap(data, boot, |d| fit_cox(d, options))
}
