//! Fine-Gray subdistribution hazard regression.
//!
//! Subjects with a competing event stay in the risk set after their event time
//! with weight G(t-)/G(s-), where G is the censoring survival estimated by
//! [`censoring_km`] and `s` the competing event time. Tied event times use the
//! Breslow approximation.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap, Bootstrap, BootstrapOptions};
use crate::cox::BETA_CAP;
use crate::curve::{check_grid, PredictedCurve};
use crate::data::{Covariates, SurvivalDataset};
use crate::design::{Design, Encoding};
use crate::error::{Error, Result};
use crate::newton::{covariance_from_hessian, maximize, Evaluation, NewtonOptions, Objective};
use crate::nonparametric::{censoring_km, StepFunction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineGrayOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FineGrayOptions {
    fn default() -> Self {
        let n = NewtonOptions::default();
        FineGrayOptions {
            max_iter: n.max_iter,
            tol: n.tol,
        }
    }
}

/// Weighted log partial likelihood on the subdistribution risk set.
#[derive(Debug, Clone)]
pub struct FineGrayProblem {
    x: Vec<f64>,
    p: usize,
    /// Rows sorted by ascending time.
    order: Vec<usize>,
    /// Distinct times with at least one event of interest, ascending.
    event_times: Vec<f64>,
    /// Rows with an event of interest at each event time.
    deaths: Vec<Vec<usize>>,
    /// Position in `order` of the first row with time >= event time.
    risk_start: Vec<usize>,
    /// Competing-event rows ascending by time, with 1/G(s-) each.
    competing: Vec<(usize, f64)>,
    /// Number of competing rows with time < event time.
    competing_before: Vec<usize>,
    /// G(t-) at each event time.
    g_at_event: Vec<f64>,
}

impl FineGrayProblem {
    pub fn new(time: &[f64], status: &[u32], cause: u32, x: Vec<f64>, p: usize) -> Result<Self> {
        let n = time.len();
        if status.len() != n || x.len() != n * p {
            return Err(Error::invalid("inconsistent problem dimensions"));
        }
        let any_event: Vec<bool> = status.iter().map(|&s| s != 0).collect();
        let g = censoring_km(time, &any_event)?;
        Ok(Self::with_censoring(time, status, cause, x, p, &g))
    }

    fn with_censoring(
        time: &[f64],
        status: &[u32],
        cause: u32,
        x: Vec<f64>,
        p: usize,
        g: &StepFunction,
    ) -> Self {
        let n = time.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[a].total_cmp(&time[b]));

        let mut event_times: Vec<f64> = Vec::new();
        let mut deaths: Vec<Vec<usize>> = Vec::new();
        for &r in &order {
            if status[r] == cause {
                if event_times.last() == Some(&time[r]) {
                    deaths.last_mut().expect("paired").push(r);
                } else {
                    event_times.push(time[r]);
                    deaths.push(vec![r]);
                }
            }
        }
        let competing: Vec<(usize, f64)> = order
            .iter()
            .filter(|&&r| status[r] != 0 && status[r] != cause)
            .map(|&r| (r, 1.0 / g.eval_left(time[r])))
            .collect();
        let risk_start = event_times
            .iter()
            .map(|&t| order.partition_point(|&r| time[r] < t))
            .collect();
        let competing_before = event_times
            .iter()
            .map(|&t| competing.partition_point(|&(r, _)| time[r] < t))
            .collect();
        let g_at_event = event_times.iter().map(|&t| g.eval_left(t)).collect();
        FineGrayProblem {
            x,
            p,
            order,
            event_times,
            deaths,
            risk_start,
            competing,
            competing_before,
            g_at_event,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn eta(&self, beta: &[f64], i: usize) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// Weighted risk-set sums (S0, S1, S2 lower triangle) at each event time.
    fn risk_sums(&self, beta: &[f64], with_second: bool) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
        let p = self.p;
        let m = self.event_times.len();
        let w: Vec<f64> = (0..self.order.len())
            .map(|i| self.eta(beta, i).exp())
            .collect();
        let accumulate = |s0: &mut f64, s1: &mut [f64], s2: &mut [f64], r: usize, scale: f64| {
            let wr = w[r] * scale;
            *s0 += wr;
            let x = self.row(r);
            for j in 0..p {
                s1[j] += wr * x[j];
                if with_second {
                    for k in 0..=j {
                        s2[j * p + k] += wr * x[j] * x[k];
                    }
                }
            }
        };
        let p2 = if with_second { p * p } else { 0 };

        // Ordinary risk set: rows with time >= t, accumulated from the end.
        let mut out: Vec<(f64, Vec<f64>, Vec<f64>)> = vec![(0.0, vec![0.0; p], vec![0.0; p2]); m];
        let (mut s0, mut s1, mut s2) = (0.0, vec![0.0; p], vec![0.0; p2]);
        let mut pos = self.order.len();
        for k in (0..m).rev() {
            while pos > self.risk_start[k] {
                pos -= 1;
                accumulate(&mut s0, &mut s1, &mut s2, self.order[pos], 1.0);
            }
            out[k] = (s0, s1.clone(), s2.clone());
        }

        // Competing rows that left before t, reweighted by G(t-)/G(s-).
        let (mut c0, mut c1, mut c2) = (0.0, vec![0.0; p], vec![0.0; p2]);
        let mut next = 0;
        for k in 0..m {
            while next < self.competing_before[k] {
                let (r, inv_g) = self.competing[next];
                accumulate(&mut c0, &mut c1, &mut c2, r, inv_g);
                next += 1;
            }
            let g = self.g_at_event[k];
            let (o0, o1, o2) = &mut out[k];
            *o0 += g * c0;
            o1.iter_mut().zip(&c1).for_each(|(a, b)| *a += g * b);
            o2.iter_mut().zip(&c2).for_each(|(a, b)| *a += g * b);
        }
        out
    }

    fn baseline(&self, beta: &[f64]) -> Result<StepFunction> {
        let sums = self.risk_sums(beta, false);
        let mut h = 0.0;
        let values = sums
            .iter()
            .zip(&self.deaths)
            .map(|((s0, _, _), d)| {
                h += d.len() as f64 / s0;
                h
            })
            .collect();
        StepFunction::new(self.event_times.clone(), values, 0.0)
    }
}

impl Objective for FineGrayProblem {
    fn dim(&self) -> usize {
        self.p
    }

    fn evaluate(&self, beta: &[f64]) -> Evaluation {
        let p = self.p;
        let sums = self.risk_sums(beta, true);
        let mut loglik = 0.0;
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        for ((s0, s1, s2), deaths) in sums.iter().zip(&self.deaths) {
            let d = deaths.len() as f64;
            for &r in deaths {
                loglik += self.eta(beta, r);
                for (g, x) in grad.iter_mut().zip(self.row(r)) {
                    *g += x;
                }
            }
            loglik -= d * s0.ln();
            for j in 0..p {
                grad[j] -= d * s1[j] / s0;
                for k in 0..=j {
                    hess[j * p + k] -= d * (s2[j * p + k] / s0 - s1[j] * s1[k] / (s0 * s0));
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
pub struct FineGrayFit {
    pub encoding: Encoding,
    pub coefficient_names: Vec<String>,
    pub beta: Vec<f64>,
    pub covariance: Vec<f64>,
    pub centering: Vec<f64>,
    /// Breslow-type cumulative subdistribution hazard at the mean covariates.
    pub subdist_baseline: StepFunction,
    pub cause: u32,
    /// Censoring survival G used for the IPCW weights.
    pub censoring_survival: StepFunction,
    pub log_pl_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub score_inf_norm: f64,
}

impl FineGrayFit {
    /// Weight of a subject in the subdistribution risk set at time `t`.
    /// `status` is the subject's observed code and `subject_time` its time.
    pub fn ipcw_weight(&self, subject_time: f64, status: u32, t: f64) -> f64 {
        if t <= subject_time {
            1.0
        } else if status != 0 && status != self.cause {
            self.censoring_survival.eval_left(t) / self.censoring_survival.eval_left(subject_time)
        } else {
            0.0
        }
    }

    pub fn linear_predictor(&self, x: &Covariates) -> Result<f64> {
        let enc = self.encoding.encode(x)?;
        Ok(enc
            .iter()
            .zip(&self.centering)
            .zip(&self.beta)
            .map(|((v, m), b)| (v - m) * b)
            .sum())
    }

    /// CIF(t | x) = 1 - exp(-H1(t) exp(lp)), constant beyond the last jump.
    pub fn predict_cif(&self, x: &Covariates, times: &[f64]) -> Result<PredictedCurve> {
        check_grid(times)?;
        let risk = self.linear_predictor(x)?.exp();
        let last = self.subdist_baseline.last_knot().unwrap_or(0.0);
        let mut clamped = vec![false; times.len()];
        let values = times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let v = 1.0 - (-self.subdist_baseline.eval(t) * risk).exp();
                if v > 1.0 {
                    clamped[i] = true;
                    1.0
                } else {
                    v
                }
            })
            .collect();
        Ok(PredictedCurve {
            values,
            extrapolated: times.iter().map(|&t| t > last).collect(),
            clamped: if clamped.iter().any(|&c| c) { clamped } else { Vec::new() },
        })
    }
}

/// Fits the subdistribution hazard of `roles.cause_of_interest` on the
/// predictor and adjusters.
pub fn fit_fine_gray(data: &SurvivalDataset, options: &FineGrayOptions) -> Result<FineGrayFit> {
    let roles = data.roles();
    let design = Design::from_dataset(data, &roles.covariate_names())?;
    fit_fine_gray_design(data.time(), data.status(), roles.cause_of_interest, &design, options)
}

pub fn fit_fine_gray_design(
    time: &[f64],
    status: &[u32],
    cause: u32,
    design: &Design,
    options: &FineGrayOptions,
) -> Result<FineGrayFit> {
    if !status.contains(&cause) {
        return Err(Error::NoEvents);
    }
    design.check_rank()?;
    let (xc, centering) = design.centered();
    let any_event: Vec<bool> = status.iter().map(|&s| s != 0).collect();
    let g = censoring_km(time, &any_event)?;
    let problem = FineGrayProblem::with_censoring(time, status, cause, xc, design.p, &g);
    let sds = design.std_devs();
    let diverged = |b: &[f64]| b.iter().zip(&sds).any(|(bj, s)| (bj * s).abs() > BETA_CAP);
    let newton = NewtonOptions {
        max_iter: options.max_iter,
        tol: options.tol,
        ..NewtonOptions::default()
    };
    let result = maximize(&problem, vec![0.0; design.p], &newton, &sds, diverged)?;
    let covariance = covariance_from_hessian(&result.evaluation.hessian, design.p)?;
    Ok(FineGrayFit {
        encoding: design.encoding.clone(),
        coefficient_names: design.names.clone(),
        subdist_baseline: problem.baseline(&result.theta)?,
        score_inf_norm: result.evaluation.gradient_inf_norm(),
        beta: result.theta,
        covariance,
        centering,
        cause,
        censoring_survival: g,
        log_pl_trace: result.trace,
        converged: true,
        iterations: result.iterations,
    })
}

pub fn bootstrap_ci(
    data: &SurvivalDataset,
    options: &FineGrayOptions,
    boot: &BootstrapOptions,
) -> Result<Bootstrap<FineGrayFit>> {
    bootstrap(data, boot, |d| fit_fine_gray(d, options))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CovariateValue;

    #[test]
    fn no_cause_events_is_an_error() {
        let d = Design::from_columns(&["x"], &[vec![1.0, 2.0, 3.0]]).unwrap();
        let err = fit_fine_gray_design(&[1.0, 2.0, 3.0], &[2, 0, 2], 1, &d, &FineGrayOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::NoEvents));
    }

    #[test]
    fn weights_follow_censoring_survival() {
        let t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let s = [2, 0, 1, 0, 1, 1];
        let x = vec![0.1, 0.5, 0.2, 0.9, 0.4, 0.3];
        let d = Design::from_columns(&["x"], &[x]).unwrap();
        let fit = fit_fine_gray_design(&t, &s, 1, &d, &FineGrayOptions::default()).unwrap();
        // G drops to 4/5 after t=2 and to 4/5 * 2/3 after t=4.
        assert!((fit.ipcw_weight(1.0, 2, 1.0) - 1.0).abs() < 1e-15);
        assert!((fit.ipcw_weight(1.0, 2, 3.0) - 0.8).abs() < 1e-12);
        assert!((fit.ipcw_weight(1.0, 2, 5.0) - 0.8 * 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(fit.ipcw_weight(3.0, 1, 5.0), 0.0);
        for &u in &[0.5, 1.0, 2.5, 4.5, 6.0, 9.0] {
            let w = fit.ipcw_weight(1.0, 2, u);
            assert!(w > 0.0 && w <= 1.0);
        }
    }

    #[test]
    fn cif_starts_at_zero_and_increases() {
        let t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let s = [1, 2, 1, 0, 2, 1, 0, 1];
        let x = vec![0.3, 0.1, 0.8, 0.4, 0.2, 0.6, 0.9, 0.5];
        let d = Design::from_columns(&["x"], &[x]).unwrap();
        let fit = fit_fine_gray_design(&t, &s, 1, &d, &FineGrayOptions::default()).unwrap();
        assert!(fit.score_inf_norm < 1e-6);
        let mut cov = Covariates::new();
        cov.insert("x".into(), CovariateValue::Continuous(fit.centering[0]));
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let c = fit.predict_cif(&cov, &grid).unwrap();
        assert_eq!(c.values[0], 0.0);
        assert!(c.values.windows(2).all(|w| w[0] <= w[1]));
        for (v, &u) in c.values.iter().zip(&grid) {
            assert!((v - (1.0 - (-fit.subdist_baseline.eval(u)).exp())).abs() < 1e-15);
        }
    }
}
