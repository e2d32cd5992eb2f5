//! Contour surfaces: predicted survival or cumulative incidence over a
//! (predictor x time) grid with the adjusters held at a fixed profile, plus
//! quantile curves, stratified panels and a 3D restructuring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{quantile_type7, Bootstrap};
use crate::curve::OutcomeKind;
use crate::data::{AdjusterProfile, SurvivalDataset};
use crate::error::{Error, Result};
use crate::metrics::thin_evenly;
use crate::registry::FittedModel;

pub const SCHEMA_VERSION: &str = "1.0";
pub const QUANTILE_LEVELS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContourOptions {
    pub n_pred: usize,
    pub n_time: usize,
    pub ci: bool,
    pub bins: usize,
}

impl Default for ContourOptions {
    fn default() -> Self {
        ContourOptions {
            n_pred: 50,
            n_time: 200,
            ci: false,
            bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SurfaceFlags {
    /// One entry per time-grid column: true beyond the model's estimated range.
    pub extrapolated: Vec<bool>,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub stratum: String,
    pub surface: ContourSurface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourSurface {
    pub schema_version: String,
    pub outcome_kind: OutcomeKind,
    pub predictor: String,
    pub time_grid: Vec<f64>,
    pub predictor_grid: Vec<f64>,
    /// Row-major, one row per predictor value.
    pub prob: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
    pub histogram: Histogram,
    pub adjusters: AdjusterProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panels: Option<Vec<Panel>>,
    pub flags: SurfaceFlags,
}

impl ContourSurface {
    pub fn rows(&self) -> usize {
        self.predictor_grid.len()
    }

    pub fn cols(&self) -> usize {
        self.time_grid.len()
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.prob[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.prob[row * c..(row + 1) * c]
    }

    /// Checks the surface invariants; returns the list of failures.
    pub fn check_invariants(&self, n: usize) -> Vec<String> {
        let mut out = Vec::new();
        let (r, c) = (self.rows(), self.cols());
        if self.prob.len() != r * c {
            out.push("prob has the wrong length".into());
            return out;
        }
        if self.prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            out.push("probability outside [0, 1]".into());
        }
        for i in 0..r {
            let row = self.row(i);
            let bad = row.windows(2).any(|w| match self.outcome_kind {
                OutcomeKind::Survival => w[1] > w[0] + 1e-12,
                OutcomeKind::Cif => w[1] < w[0] - 1e-12,
            });
            if bad {
                out.push(format!("row {i} is not monotone in time"));
            }
        }
        if let (Some(lo), Some(hi)) = (&self.lower, &self.upper) {
            let ok = lo.len() == r * c
                && hi.len() == r * c
                && (0..r * c).all(|k| lo[k] <= self.prob[k] && self.prob[k] <= hi[k]);
            if !ok {
                out.push("confidence band does not contain the estimate".into());
            }
        }
        if self.histogram.counts.iter().sum::<usize>() != n {
            out.push("histogram counts do not sum to n".into());
        }
        if self.flags.extrapolated.len() != c {
            out.push("one extrapolation flag per time column expected".into());
        }
        if self.time_grid.first() != Some(&0.0) {
            out.push("time grid must start at 0".into());
        }
        out
    }
}

/// Evenly spaced values with exact endpoints.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
            v[n - 1] = hi;
            v
        }
    }
}

fn predictor_range(data: &SurvivalDataset) -> Result<(f64, f64)> {
    let x = data.predictor_values();
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::invalid(format!(
            "predictor '{}' is constant",
            data.roles().predictor
        )));
    }
    Ok((lo, hi))
}

/// 0, the distinct event times and the maximum follow-up, thinned evenly to
/// at most `n_time` points.
pub fn time_grid(times: &[f64], status: &[u32], n_time: usize) -> Vec<f64> {
    let max_follow_up = times.iter().copied().fold(0.0, f64::max);
    let mut pts: Vec<f64> = times
        .iter()
        .zip(status)
        .filter(|(_, &s)| s != 0)
        .map(|(&t, _)| t)
        .collect();
    pts.push(0.0);
    pts.push(max_follow_up);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    thin_evenly(&pts, n_time.max(2))
}

/// Equal-width bins spanning [lo, hi]; the last bin is closed.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
    let bins = bins.max(1);
    let edges = linspace(lo, hi, bins + 1);
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let mut b = if width > 0.0 { ((v - lo) / width).floor() as isize } else { 0 };
        b = b.clamp(0, bins as isize - 1);
        let mut b = b as usize;
        // floating guards against the computed edges
        while b > 0 && v < edges[b] {
            b -= 1;
        }
        while b + 1 < bins && v >= edges[b + 1] {
            b += 1;
        }
        counts[b] += 1;
    }
    Histogram { edges, counts }
}

fn validate_options(options: &ContourOptions, model: &FittedModel) -> Result<()> {
    if options.n_pred < 2 || options.n_time < 2 || options.bins < 1 {
        return Err(Error::invalid("n_pred and n_time must be at least 2 and bins at least 1"));
    }
    if options.ci && !model.supports_ci() {
        return Err(Error::CiUnsupported);
    }
    Ok(())
}

fn check_profile(model: &FittedModel, profile: &AdjusterProfile) -> Result<()> {
    for name in &model.spec.roles.adjusters {
        if profile.get(name).is_none() {
            return Err(Error::invalid(format!("adjuster profile lacks '{name}'")));
        }
    }
    Ok(())
}

struct Grid {
    prob: Vec<f64>,
    extrapolated: Vec<bool>,
    clamped: bool,
}

fn evaluate_grid(
    model: &FittedModel,
    profile: &AdjusterProfile,
    stratum: Option<&str>,
    predictor_grid: &[f64],
    time_grid: &[f64],
) -> Result<Grid> {
    let predictor = &model.spec.roles.predictor;
    let rows = predictor_grid
        .par_iter()
        .map(|&x| model.predict(&profile.covariates(predictor, x), stratum, time_grid))
        .collect::<Result<Vec<_>>>()?;
    let mut extrapolated = vec![false; time_grid.len()];
    let mut clamped = false;
    let mut prob = Vec::with_capacity(rows.len() * time_grid.len());
    for r in rows {
        for (f, e) in extrapolated.iter_mut().zip(&r.extrapolated) {
            *f |= *e;
        }
        clamped |= r.clamped.iter().any(|&c| c);
        prob.extend(r.values);
    }
    Ok(Grid {
        prob,
        extrapolated,
        clamped,
    })
}

/// Pointwise percentile band over the replicate surfaces, widened where
/// needed so that it contains the point estimate.
fn band(
    boot: &Bootstrap<FittedModel>,
    profile: &AdjusterProfile,
    stratum: Option<&str>,
    predictor_grid: &[f64],
    time_grid: &[f64],
    prob: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut lo, mut hi) = boot.percentile_band(|m| {
        Ok(evaluate_grid(m, profile, stratum, predictor_grid, time_grid)?.prob)
    })?;
    for k in 0..prob.len() {
        lo[k] = lo[k].min(prob[k]);
        hi[k] = hi[k].max(prob[k]);
    }
    Ok((lo, hi))
}

struct Context<'a> {
    model: &'a FittedModel,
    data: SurvivalDataset,
    profile: &'a AdjusterProfile,
    options: &'a ContourOptions,
    boot: Option<Bootstrap<FittedModel>>,
    predictor_grid: Vec<f64>,
    range: (f64, f64),
}

impl<'a> Context<'a> {
    fn new(
        model: &'a FittedModel,
        data: &SurvivalDataset,
        profile: &'a AdjusterProfile,
        options: &'a ContourOptions,
    ) -> Result<Self> {
        validate_options(options, model)?;
        check_profile(model, profile)?;
        let data = data.with_roles(model.spec.effective_roles())?;
        let range = predictor_range(&data)?;
        let boot = if options.ci { Some(model.bootstrap(&data)?) } else { None };
        Ok(Context {
            model,
            predictor_grid: linspace(range.0, range.1, options.n_pred),
            data,
            profile,
            options,
            boot,
            range,
        })
    }

    /// Surface over the rows of `rows` (all rows when `None`).
    fn surface(&self, stratum: Option<&str>, rows: Option<&[usize]>) -> Result<ContourSurface> {
        let (times, status, xs): (Vec<f64>, Vec<u32>, Vec<f64>) = match rows {
            None => (
                self.data.time().to_vec(),
                self.data.status().to_vec(),
                self.data.predictor_values().to_vec(),
            ),
            Some(rows) => (
                rows.iter().map(|&r| self.data.time()[r]).collect(),
                rows.iter().map(|&r| self.data.status()[r]).collect(),
                rows.iter().map(|&r| self.data.predictor_values()[r]).collect(),
            ),
        };
        let time_grid = time_grid(&times, &status, self.options.n_time);
        let grid = evaluate_grid(self.model, self.profile, stratum, &self.predictor_grid, &time_grid)?;
        let (lower, upper) = match &self.boot {
            Some(b) => {
                let (lo, hi) = band(b, self.profile, stratum, &self.predictor_grid, &time_grid, &grid.prob)?;
                (Some(lo), Some(hi))
            }
            None => (None, None),
        };
        let mut messages = Vec::new();
        if grid.clamped {
            messages.push("some predictions were clamped into [0, 1]".to_string());
        }
        if let Some(b) = &self.boot {
            if b.failed > 0 {
                messages.push(format!("{} of {} bootstrap refits failed", b.failed, b.requested));
            }
        }
        Ok(ContourSurface {
            schema_version: SCHEMA_VERSION.to_string(),
            outcome_kind: self.model.outcome_kind(),
            predictor: self.model.spec.roles.predictor.clone(),
            time_grid,
            predictor_grid: self.predictor_grid.clone(),
            prob: grid.prob,
            lower,
            upper,
            histogram: histogram(&xs, self.range.0, self.range.1, self.options.bins),
            adjusters: self.profile.clone(),
            panels: None,
            flags: SurfaceFlags {
                extrapolated: grid.extrapolated,
                messages,
            },
        })
    }

    /// Strata present in the data, in level order, with their rows.
    fn strata_rows(&self) -> Result<(Vec<(String, Vec<usize>)>, Vec<String>)> {
        let (levels, codes) = self
            .data
            .strata()
            .ok_or_else(|| Error::invalid("stratified model without a strata column"))?;
        let mut present = Vec::new();
        let mut omitted = Vec::new();
        for (k, level) in levels.iter().enumerate() {
            let rows: Vec<usize> = (0..codes.len()).filter(|&i| codes[i] == k).collect();
            if rows.is_empty() {
                omitted.push(format!("stratum '{level}' has no rows; panel omitted"));
            } else {
                present.push((level.clone(), rows));
            }
        }
        if present.is_empty() {
            return Err(Error::NoUsableRows);
        }
        Ok((present, omitted))
    }
}

/// Contour surface for any fitted model. Stratified fits get one panel per
/// stratum; the top-level grids then repeat the first panel, while the
/// histogram covers all rows.
pub fn build_surface(
    model: &FittedModel,
    data: &SurvivalDataset,
    profile: &AdjusterProfile,
    options: &ContourOptions,
) -> Result<ContourSurface> {
    let ctx = Context::new(model, data, profile, options)?;
    if model.strata_levels().is_none() {
        return ctx.surface(None, None);
    }
    let (present, omitted) = ctx.strata_rows()?;
    let panels = present
        .iter()
        .map(|(level, rows)| {
            Ok(Panel {
                stratum: level.clone(),
                surface: ctx.surface(Some(level), Some(rows))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut top = panels[0].surface.clone();
    top.histogram = histogram(
        ctx.data.predictor_values(),
        ctx.range.0,
        ctx.range.1,
        options.bins,
    );
    top.flags.messages.extend(omitted);
    top.flags
        .messages
        .push(format!("top-level grids show stratum '{}'", panels[0].stratum));
    top.panels = Some(panels);
    Ok(top)
}

/// Stratified surface; errors unless the model is stratified.
pub fn build_stratified_panels(
    model: &FittedModel,
    data: &SurvivalDataset,
    profile: &AdjusterProfile,
    options: &ContourOptions,
) -> Result<ContourSurface> {
    if model.strata_levels().is_none() {
        return Err(Error::invalid("panels need a stratified model"));
    }
    build_surface(model, data, profile, options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileCurve {
    pub level: f64,
    pub predictor_value: f64,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePanel {
    pub stratum: String,
    pub time_grid: Vec<f64>,
    pub curves: Vec<QuantileCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileCurves {
    pub schema_version: String,
    pub outcome_kind: OutcomeKind,
    pub predictor: String,
    pub levels: Vec<f64>,
    pub predictor_values: Vec<f64>,
    pub time_grid: Vec<f64>,
    pub curves: Vec<QuantileCurve>,
    pub adjusters: AdjusterProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panels: Option<Vec<QuantilePanel>>,
    pub flags: SurfaceFlags,
}

/// Type-7 sample quantiles of the predictor at the fixed levels.
pub fn predictor_quantiles(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    QUANTILE_LEVELS.iter().map(|&p| quantile_type7(&sorted, p)).collect()
}

/// Predicted curves at five predictor quantiles, with bootstrap bands when
/// `options.ci` is set.
pub fn build_quantile_curves(
    model: &FittedModel,
    data: &SurvivalDataset,
    profile: &AdjusterProfile,
    options: &ContourOptions,
) -> Result<QuantileCurves> {
    let ctx = Context::new(model, data, profile, options)?;
    let qs = predictor_quantiles(ctx.data.predictor_values());
    let curves_for = |stratum: Option<&str>, rows: Option<&[usize]>| -> Result<(Vec<f64>, Vec<QuantileCurve>, Vec<bool>)> {
        let (times, status): (Vec<f64>, Vec<u32>) = match rows {
            None => (ctx.data.time().to_vec(), ctx.data.status().to_vec()),
            Some(rows) => rows
                .iter()
                .map(|&r| (ctx.data.time()[r], ctx.data.status()[r]))
                .unzip(),
        };
        let grid_t = time_grid(&times, &status, options.n_time);
        let grid = evaluate_grid(model, profile, stratum, &qs, &grid_t)?;
        let bands = match &ctx.boot {
            Some(b) => Some(band(b, profile, stratum, &qs, &grid_t, &grid.prob)?),
            None => None,
        };
        let c = grid_t.len();
        let curves = QUANTILE_LEVELS
            .iter()
            .zip(&qs)
            .enumerate()
            .map(|(i, (&level, &x))| QuantileCurve {
                level,
                predictor_value: x,
                values: grid.prob[i * c..(i + 1) * c].to_vec(),
                lower: bands.as_ref().map(|(lo, _)| lo[i * c..(i + 1) * c].to_vec()),
                upper: bands.as_ref().map(|(_, hi)| hi[i * c..(i + 1) * c].to_vec()),
            })
            .collect();
        Ok((grid_t, curves, grid.extrapolated))
    };
    let mut messages = Vec::new();
    let (time_grid, curves, extrapolated, panels) = if model.strata_levels().is_some() {
        let (present, omitted) = ctx.strata_rows()?;
        messages.extend(omitted);
        let mut panels = Vec::new();
        for (level, rows) in &present {
            let (t, c, _) = curves_for(Some(level), Some(rows))?;
            panels.push(QuantilePanel {
                stratum: level.clone(),
                time_grid: t,
                curves: c,
            });
        }
        let (t, c, e) = curves_for(Some(&present[0].0), Some(&present[0].1))?;
        messages.push(format!("top-level curves show stratum '{}'", present[0].0));
        (t, c, e, Some(panels))
    } else {
        let (t, c, e) = curves_for(None, None)?;
        (t, c, e, None)
    };
    Ok(QuantileCurves {
        schema_version: SCHEMA_VERSION.to_string(),
        outcome_kind: model.outcome_kind(),
        predictor: model.spec.roles.predictor.clone(),
        levels: QUANTILE_LEVELS.to_vec(),
        predictor_values: qs,
        time_grid,
        curves,
        adjusters: profile.clone(),
        panels,
        flags: SurfaceFlags {
            extrapolated,
            messages,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiLayers {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    /// Suggested opacity for rendering the bands.
    pub opacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface3DPanel {
    pub stratum: String,
    pub surface: Surface3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface3D {
    pub schema_version: String,
    pub outcome_kind: OutcomeKind,
    pub predictor: String,
    pub time_grid: Vec<f64>,
    pub predictor_grid: Vec<f64>,
    /// `z[i][j]` is the value at predictor_grid[i], time_grid[j].
    pub z: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_layers: Option<CiLayers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panels: Option<Vec<Surface3DPanel>>,
}

fn to_rows(flat: &[f64], cols: usize) -> Vec<Vec<f64>> {
    flat.chunks(cols.max(1)).map(<[f64]>::to_vec).collect()
}

pub fn to_surface3d(surface: &ContourSurface) -> Surface3D {
    let c = surface.cols();
    Surface3D {
        schema_version: surface.schema_version.clone(),
        outcome_kind: surface.outcome_kind,
        predictor: surface.predictor.clone(),
        time_grid: surface.time_grid.clone(),
        predictor_grid: surface.predictor_grid.clone(),
        z: to_rows(&surface.prob, c),
        ci_layers: match (&surface.lower, &surface.upper) {
            (Some(lo), Some(hi)) => Some(CiLayers {
                lower: to_rows(lo, c),
                upper: to_rows(hi, c),
                opacity: 0.35,
            }),
            _ => None,
        },
        panels: surface.panels.as_ref().map(|ps| {
            ps.iter()
                .map(|p| Surface3DPanel {
                    stratum: p.stratum.clone(),
                    surface: to_surface3d(&p.surface),
                })
                .collect()
        }),
    }
}

/// Canonical JSON bytes shared by the CLI and the service.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(value)?)
}
