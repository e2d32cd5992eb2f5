//! Model catalog: family selection from user answers, spec validation, fit
//! dispatch and a uniform prediction interface over every family.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap, Bootstrap, BootstrapOptions};
use crate::competing::{fit_fine_gray, FineGrayFit, FineGrayOptions};
use crate::cox::{fit_cox, CoxFit, CoxOptions, Ties};
use crate::curve::{OutcomeKind, PredictedCurve};
use crate::data::{ColumnRoles, Covariates, DatasetSummary, SurvivalDataset};
use crate::error::{Error, Result};
use crate::metrics::{
    brier_grid, c_index, default_tau, integrated_brier, integrated_brier_cif, MetricsReport,
};
use crate::newton::NewtonOptions;
use crate::nonparametric::{censoring_km, kaplan_meier, KmEstimate};
use crate::parametric::{fit_parametric, Distribution, ParametricFit, ParametricOptions};
use crate::rsf::{fit_rsf, ForestFit, RsfOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    KaplanMeier,
    Cox,
    StratifiedCox,
    Parametric {
        dist: Distribution,
    },
    FineGray {
        #[serde(default = "default_cause")]
        cause: u32,
    },
    Rsf,
}

fn default_cause() -> u32 {
    1
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::KaplanMeier => "kaplan_meier",
            Family::Cox => "cox",
            Family::StratifiedCox => "stratified_cox",
            Family::Parametric { .. } => "parametric",
            Family::FineGray { .. } => "fine_gray",
            Family::Rsf => "rsf",
        }
    }

    pub fn supports_ci(&self) -> bool {
        !matches!(self, Family::Rsf)
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        match self {
            Family::FineGray { .. } => OutcomeKind::Cif,
            _ => OutcomeKind::Survival,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    pub ties: Ties,
    pub max_iter: usize,
    pub tol: f64,
    /// Fixed AFT scale for parametric fits.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_scale: Option<f64>,
    /// Bootstrap replicates for confidence bands.
    pub replicates: usize,
    pub level: f64,
    /// Seeds both the bootstrap and the forest.
    pub seed: u64,
    pub n_trees: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtry: Option<usize>,
    pub nodesize: usize,
}

impl Default for ModelOptions {
    fn default() -> Self {
        let newton = NewtonOptions::default();
        let boot = BootstrapOptions::default();
        let forest = RsfOptions::default();
        ModelOptions {
            ties: Ties::default(),
            max_iter: newton.max_iter,
            tol: newton.tol,
            fixed_scale: None,
            replicates: boot.replicates,
            level: boot.level,
            seed: boot.seed,
            n_trees: forest.n_trees,
            mtry: forest.mtry,
            nodesize: forest.nodesize,
        }
    }
}

impl ModelOptions {
    pub fn bootstrap(&self) -> BootstrapOptions {
        BootstrapOptions {
            replicates: self.replicates,
            seed: self.seed,
            level: self.level,
        }
    }

    fn cox(&self) -> CoxOptions {
        CoxOptions {
            ties: self.ties,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }

    fn rsf(&self) -> RsfOptions {
        RsfOptions {
            n_trees: self.n_trees,
            mtry: self.mtry,
            nodesize: self.nodesize,
            seed: self.seed,
        }
    }
}

/// A model family with column roles and options; the body of a fit request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub family: Family,
    pub roles: ColumnRoles,
    #[serde(default)]
    pub options: ModelOptions,
}

impl ModelSpec {
    pub fn new(family: Family, roles: ColumnRoles) -> Self {
        ModelSpec {
            family,
            roles,
            options: ModelOptions::default(),
        }
    }

    /// Roles as used for fitting: Fine-Gray takes its cause from the family.
    pub fn effective_roles(&self) -> ColumnRoles {
        let mut roles = self.roles.clone();
        if let Family::FineGray { cause } = self.family {
            roles.cause_of_interest = cause;
        }
        roles
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Answers {
    pub competing_risks: bool,
    pub wants_inference: bool,
    pub wants_flexibility: bool,
    pub has_strata: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    /// Family tags, best first.
    pub ranked: Vec<String>,
    pub notes: Vec<String>,
    /// Branches of the decision tree this build does not implement.
    pub unsupported: Vec<String>,
}

const CATALOG: [&str; 6] = ["cox", "stratified_cox", "parametric", "rsf", "fine_gray", "kaplan_meier"];

/// Maps questionnaire answers to a ranked list of family tags.
pub fn recommend(summary: &DatasetSummary, answers: &Answers) -> Recommendation {
    let first = if answers.competing_risks {
        "fine_gray"
    } else if answers.has_strata {
        "stratified_cox"
    } else if answers.wants_flexibility && !answers.wants_inference {
        "rsf"
    } else if answers.wants_flexibility {
        "parametric"
    } else {
        "cox"
    };
    let mut ranked = vec![first.to_string()];
    ranked.extend(CATALOG.iter().filter(|&&f| f != first).map(|f| f.to_string()));
    let mut notes = Vec::new();
    if summary.events.len() >= 2 && !answers.competing_risks {
        notes.push(format!(
            "data has {} distinct event codes; consider fine_gray",
            summary.events.len()
        ));
    }
    if answers.competing_risks && summary.events.len() < 2 {
        notes.push("fine_gray needs at least 2 event codes in the data".to_string());
    }
    if answers.has_strata && summary.roles.strata.is_none() {
        notes.push("stratified_cox needs a strata column in the roles".to_string());
    }
    Recommendation {
        ranked,
        notes,
        unsupported: vec![
            "interval_censored: unsupported in this build".to_string(),
            "deep_learning: unsupported in this build".to_string(),
        ],
    }
}

/// Checks a spec against the data; returns every violation found.
pub fn validate(spec: &ModelSpec, data: &SurvivalDataset) -> Result<()> {
    let mut v = Vec::new();
    if let Err(e) = spec.roles.validate() {
        v.push(e.to_string());
    }
    for name in spec.roles.covariate_names().iter().chain(&spec.roles.strata) {
        if data.column(name).is_none() {
            v.push(format!("column '{name}' not found"));
        }
    }
    if v.is_empty() {
        if let Err(e) = data.with_roles(spec.effective_roles()) {
            v.push(e.to_string());
        }
    }
    let causes = data.causes();
    match spec.family {
        Family::StratifiedCox => {
            if spec.roles.strata.is_none() {
                v.push("stratified_cox requires a strata column".to_string());
            }
        }
        Family::FineGray { cause } => {
            if causes.len() < 2 {
                v.push(format!(
                    "fine_gray requires at least 2 event codes; data has {}",
                    causes.len()
                ));
            }
            if !causes.contains(&cause) {
                v.push(format!("cause {cause} does not occur in the data"));
            }
        }
        _ => {}
    }
    if spec.roles.strata.is_some() && spec.family != Family::StratifiedCox {
        v.push(format!("{} does not take a strata column", spec.family.tag()));
    }
    let o = &spec.options;
    if o.replicates < 2 {
        v.push("options.replicates must be at least 2".to_string());
    }
    if !(o.level > 0.0 && o.level < 1.0) {
        v.push("options.level must lie in (0, 1)".to_string());
    }
    if o.max_iter == 0 || !(o.tol > 0.0) {
        v.push("options.max_iter and options.tol must be positive".to_string());
    }
    if let Some(s) = o.fixed_scale {
        if !(s > 0.0 && s.is_finite()) {
            v.push("options.fixed_scale must be positive".to_string());
        }
    }
    if spec.family == Family::Rsf {
        let p = spec.roles.covariate_names().len();
        if o.n_trees < 1 {
            v.push("options.n_trees must be at least 1".to_string());
        }
        if o.nodesize < 1 {
            v.push("options.nodesize must be at least 1".to_string());
        }
        if let Some(m) = o.mtry {
            if m == 0 || m > p {
                v.push(format!("options.mtry must lie in 1..={p}"));
            }
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Violations(v))
    }
}

/// Marginal Kaplan-Meier; predictions ignore covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeierFit {
    pub estimate: KmEstimate,
    pub max_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "fit", rename_all = "snake_case")]
pub enum FamilyFit {
    KaplanMeier(KaplanMeierFit),
    Cox(CoxFit),
    Parametric(ParametricFit),
    FineGray(FineGrayFit),
    Rsf(ForestFit),
}

/// A fitted model together with the spec that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub fit: FamilyFit,
}

/// Prepares the data under the spec's roles, validates, and fits.
pub fn fit(spec: &ModelSpec, data: &SurvivalDataset) -> Result<FittedModel> {
    validate(spec, data)?;
    let prepared = data.with_roles(spec.effective_roles())?;
    fit_prepared(spec, &prepared)
}

fn fit_prepared(spec: &ModelSpec, data: &SurvivalDataset) -> Result<FittedModel> {
    let o = &spec.options;
    let fit = match spec.family {
        Family::KaplanMeier => FamilyFit::KaplanMeier(KaplanMeierFit {
            estimate: kaplan_meier(data.time(), &data.events_of_interest())?,
            max_time: data.time().iter().copied().fold(0.0, f64::max),
        }),
        Family::Cox | Family::StratifiedCox => FamilyFit::Cox(fit_cox(data, &o.cox())?),
        Family::Parametric { dist } => FamilyFit::Parametric(fit_parametric(
            data,
            dist,
            &ParametricOptions {
                max_iter: o.max_iter,
                tol: o.tol,
                fixed_scale: o.fixed_scale,
            },
        )?),
        Family::FineGray { .. } => FamilyFit::FineGray(fit_fine_gray(
            data,
            &FineGrayOptions {
                max_iter: o.max_iter,
                tol: o.tol,
            },
        )?),
        Family::Rsf => FamilyFit::Rsf(fit_rsf(data, &o.rsf())?),
    };
    Ok(FittedModel {
        spec: spec.clone(),
        fit,
    })
}

impl FittedModel {
    pub fn outcome_kind(&self) -> OutcomeKind {
        self.spec.family.outcome_kind()
    }

    pub fn supports_ci(&self) -> bool {
        self.spec.family.supports_ci()
    }

    /// Stratum levels of a stratified fit.
    pub fn strata_levels(&self) -> Option<&[String]> {
        match &self.fit {
            FamilyFit::Cox(c) => c.strata.as_ref().map(|s| s.levels.as_slice()),
            _ => None,
        }
    }

    /// Predicted survival (or CIF for Fine-Gray) over `times`.
    pub fn predict(&self, x: &Covariates, stratum: Option<&str>, times: &[f64]) -> Result<PredictedCurve> {
        match &self.fit {
            FamilyFit::KaplanMeier(km) => {
                crate::curve::check_grid(times)?;
                Ok(PredictedCurve {
                    values: km.estimate.survival.eval_many(times),
                    extrapolated: times.iter().map(|&t| t > km.max_time).collect(),
                    clamped: Vec::new(),
                })
            }
            FamilyFit::Cox(c) => c.predict_survival(x, times, stratum),
            FamilyFit::Parametric(p) => p.predict_survival(x, times),
            FamilyFit::FineGray(f) => f.predict_cif(x, times),
            FamilyFit::Rsf(r) => r.predict_survival(x, times),
        }
    }

    /// Higher means earlier failure. `tau` is the metrics window end.
    pub fn risk_score(&self, x: &Covariates, tau: f64) -> Result<f64> {
        match &self.fit {
            FamilyFit::KaplanMeier(_) => Ok(0.0),
            FamilyFit::Cox(c) => c.linear_predictor(x),
            FamilyFit::Parametric(p) => Ok(-p.predicted_median(x)?),
            FamilyFit::FineGray(f) => f.linear_predictor(x),
            FamilyFit::Rsf(r) => Ok(r.cumulative_hazard(x, &[0.5 * tau])?[0]),
        }
    }

    pub fn risk_score_rule(&self) -> &'static str {
        match self.fit {
            FamilyFit::KaplanMeier(_) => "constant",
            FamilyFit::Cox(_) | FamilyFit::FineGray(_) => "linear predictor",
            FamilyFit::Parametric(_) => "negative predicted median",
            FamilyFit::Rsf(_) => "ensemble cumulative hazard at tau/2",
        }
    }

    /// Bootstrap refits under the same spec; errors for families without
    /// confidence bands.
    pub fn bootstrap(&self, data: &SurvivalDataset) -> Result<Bootstrap<FittedModel>> {
        if !self.supports_ci() {
            return Err(Error::CiUnsupported);
        }
        let prepared = data.with_roles(self.spec.effective_roles())?;
        bootstrap(&prepared, &self.spec.options.bootstrap(), |d| fit_prepared(&self.spec, d))
    }

    /// C-index and integrated Brier score on the training data.
    pub fn metrics(&self, data: &SurvivalDataset) -> Result<MetricsReport> {
        let data = data.with_roles(self.spec.effective_roles())?;
        let times = data.time();
        let status = data.status();
        let events = data.events_of_interest();
        let kind = self.outcome_kind();
        let censor_events: Vec<bool> = match kind {
            OutcomeKind::Cif => status.iter().map(|&s| s != 0).collect(),
            OutcomeKind::Survival => events.clone(),
        };
        let g = censoring_km(times, &censor_events)?;
        let tau = default_tau(times, &events, &g)?;
        let grid = brier_grid(times, &events, tau, 100);
        let strata: Vec<Option<&str>> = match data.strata() {
            Some((levels, codes)) if self.strata_levels().is_some() => {
                codes.iter().map(|&c| Some(levels[c].as_str())).collect()
            }
            _ => vec![None; data.n()],
        };
        let mut scores = Vec::with_capacity(data.n());
        let mut predictions = Vec::with_capacity(data.n());
        for (i, stratum) in strata.iter().enumerate() {
            let x = data.row_covariates(i);
            scores.push(self.risk_score(&x, tau)?);
            predictions.push(self.predict(&x, *stratum, &grid)?.values);
        }
        let concordance = c_index(times, &events, &scores)?;
        let brier = match kind {
            OutcomeKind::Survival => integrated_brier(&predictions, times, &events, &grid, &g)?,
            OutcomeKind::Cif => integrated_brier_cif(
                &predictions,
                times,
                status,
                data.roles().cause_of_interest,
                &grid,
                &g,
            )?,
        };
        Ok(MetricsReport {
            outcome_kind: kind,
            c_index: concordance.c_index,
            comparable_pairs: concordance.comparable_pairs,
            integrated_brier: brier.integrated,
            tau: brier.tau,
            brier_curve: brier.curve,
            risk_score: self.risk_score_rule().to_string(),
        })
    }
}
