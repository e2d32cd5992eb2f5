//! Survival datasets: CSV ingestion, column roles, adjuster defaults and summaries.
//!
//! A dataset only carries the columns named in its [`ColumnRoles`]. Rows with a
//! missing value in any role column are dropped at ingestion and counted in the
//! [`IngestionReport`]; nothing is imputed.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which CSV columns play which part in the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub time_column: String,
    pub status_column: String,
    pub predictor: String,
    #[serde(default)]
    pub adjusters: Vec<String>,
    #[serde(default)]
    pub strata: Option<String>,
    #[serde(default = "default_cause")]
    pub cause_of_interest: u32,
}

fn default_cause() -> u32 {
    1
}

impl ColumnRoles {
    pub fn new(time: &str, status: &str, predictor: &str) -> Self {
        ColumnRoles {
            time_column: time.to_string(),
            status_column: status.to_string(),
            predictor: predictor.to_string(),
            adjusters: Vec::new(),
            strata: None,
            cause_of_interest: 1,
        }
    }

    pub fn with_adjusters<S: AsRef<str>>(mut self, adjusters: &[S]) -> Self {
        self.adjusters = adjusters.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn with_strata(mut self, strata: &str) -> Self {
        self.strata = Some(strata.to_string());
        self
    }

    /// Predictor followed by the adjusters, in model order.
    pub fn covariate_names(&self) -> Vec<String> {
        std::iter::once(self.predictor.clone())
            .chain(self.adjusters.iter().cloned())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_column == self.status_column {
            return Err(Error::invalid("time and status columns must differ"));
        }
        if self.cause_of_interest == 0 {
            return Err(Error::invalid("cause of interest must be a nonzero event code"));
        }
        let mut seen = vec![self.time_column.as_str(), self.status_column.as_str()];
        for name in std::iter::once(&self.predictor)
            .chain(self.adjusters.iter())
            .chain(self.strata.iter())
        {
            if seen.contains(&name.as_str()) {
                return Err(Error::invalid(format!(
                    "column '{name}' is assigned more than one role"
                )));
            }
            seen.push(name);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    /// Abort on malformed time/status cells instead of dropping the row.
    #[serde(default)]
    pub strict: bool,
    /// Columns forced to be categorical even when every cell parses as a number.
    #[serde(default)]
    pub categorical: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DropReason {
    #[serde(rename = "missing time")]
    MissingTime,
    #[serde(rename = "missing status")]
    MissingStatus,
    #[serde(rename = "missing covariate")]
    MissingCovariate,
    #[serde(rename = "non-numeric time")]
    NonNumericTime,
    #[serde(rename = "negative time")]
    NegativeTime,
    #[serde(rename = "invalid status")]
    InvalidStatus,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::MissingTime => "missing time",
            DropReason::MissingStatus => "missing status",
            DropReason::MissingCovariate => "missing covariate",
            DropReason::NonNumericTime => "non-numeric time",
            DropReason::NegativeTime => "negative time",
            DropReason::InvalidStatus => "invalid status",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCount {
    pub reason: DropReason,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestionReport {
    pub rows_in: usize,
    pub rows_kept: usize,
    pub drops: Vec<DropCount>,
}

impl IngestionReport {
    pub fn dropped(&self) -> usize {
        self.drops.iter().map(|d| d.count).sum()
    }

    pub fn dropped_for(&self, reason: DropReason) -> usize {
        self.drops
            .iter()
            .find(|d| d.reason == reason)
            .map_or(0, |d| d.count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Column {
    Continuous { values: Vec<f64> },
    Categorical { levels: Vec<String>, codes: Vec<usize> },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Continuous { values } => values.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Column::Categorical { .. })
    }

    pub fn value(&self, row: usize) -> CovariateValue {
        match self {
            Column::Continuous { values } => CovariateValue::Continuous(values[row]),
            Column::Categorical { levels, codes } => {
                CovariateValue::Level(levels[codes[row]].clone())
            }
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Continuous { values } => Column::Continuous {
                values: rows.iter().map(|&r| values[r]).collect(),
            },
            Column::Categorical { levels, codes } => Column::Categorical {
                levels: levels.clone(),
                codes: rows.iter().map(|&r| codes[r]).collect(),
            },
        }
    }
}

/// A single covariate value: a real number or a categorical level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Continuous(f64),
    Level(String),
}

impl std::fmt::Display for CovariateValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CovariateValue::Continuous(v) => write!(f, "{v}"),
            CovariateValue::Level(l) => f.write_str(l),
        }
    }
}

/// Covariate assignment keyed by column name.
pub type Covariates = BTreeMap<String, CovariateValue>;

/// Validated, immutable table of survival outcomes and role columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    roles: ColumnRoles,
    time: Vec<f64>,
    status: Vec<u32>,
    columns: Vec<(String, Column)>,
}

impl SurvivalDataset {
    /// Builds a dataset from already-parsed columns. `columns` must hold the
    /// predictor, every adjuster and the strata column (if any).
    pub fn new(
        roles: ColumnRoles,
        time: Vec<f64>,
        status: Vec<u32>,
        columns: Vec<(String, Column)>,
    ) -> Result<Self> {
        roles.validate()?;
        let n = time.len();
        if n == 0 {
            return Err(Error::NoUsableRows);
        }
        if status.len() != n {
            return Err(Error::invalid("time and status lengths differ"));
        }
        if let Some(i) = time.iter().position(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidCell {
                row: i,
                column: roles.time_column.clone(),
                message: "time must be finite and nonnegative".into(),
            });
        }
        if status.iter().all(|&s| s == 0) {
            return Err(Error::invalid("status column has no nonzero event code"));
        }
        let ds = SurvivalDataset {
            roles,
            time,
            status,
            columns,
        };
        for name in ds.role_column_names() {
            let col = ds.column(&name).ok_or_else(|| Error::MissingColumn(name.clone()))?;
            if col.len() != n {
                return Err(Error::invalid(format!("column '{name}' has the wrong length")));
            }
            match col {
                Column::Continuous { values } => {
                    if values.iter().any(|v| !v.is_finite()) {
                        return Err(Error::invalid(format!("column '{name}' has non-finite values")));
                    }
                }
                Column::Categorical { levels, codes } => {
                    if levels.is_empty() || codes.iter().any(|&c| c >= levels.len()) {
                        return Err(Error::invalid(format!("column '{name}' has an invalid level set")));
                    }
                }
            }
        }
        if ds.column(&ds.roles.predictor).is_some_and(Column::is_categorical) {
            return Err(Error::invalid(format!(
                "predictor '{}' must be continuous",
                ds.roles.predictor
            )));
        }
        if let Some(s) = &ds.roles.strata {
            if !ds.column(s).is_some_and(Column::is_categorical) {
                return Err(Error::invalid(format!("strata column '{s}' must be categorical")));
            }
        }
        Ok(ds)
    }

    fn role_column_names(&self) -> Vec<String> {
        let mut names = self.roles.covariate_names();
        names.extend(self.roles.strata.iter().cloned());
        names
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn roles(&self) -> &ColumnRoles {
        &self.roles
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn status(&self) -> &[u32] {
        &self.status
    }

    pub fn columns(&self) -> &[(String, Column)] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    /// Values of the (continuous) predictor column.
    pub fn predictor_values(&self) -> &[f64] {
        match self.column(&self.roles.predictor) {
            Some(Column::Continuous { values }) => values,
            _ => unreachable!("predictor validated as continuous"),
        }
    }

    /// Largest status code present (K).
    pub fn max_cause(&self) -> u32 {
        self.status.iter().copied().max().unwrap_or(0)
    }

    /// Distinct nonzero event codes in ascending order.
    pub fn causes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.status.iter().copied().filter(|&s| s != 0).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Event indicator for the cause of interest; other causes count as censored.
    pub fn events_of_interest(&self) -> Vec<bool> {
        let cause = self.roles.cause_of_interest;
        self.status.iter().map(|&s| s == cause).collect()
    }

    /// Strata level names and per-row codes, when the roles name a strata column.
    pub fn strata(&self) -> Option<(&[String], &[usize])> {
        let name = self.roles.strata.as_ref()?;
        match self.column(name) {
            Some(Column::Categorical { levels, codes }) => Some((levels, codes)),
            _ => None,
        }
    }

    pub fn row_covariates(&self, row: usize) -> Covariates {
        self.roles
            .covariate_names()
            .into_iter()
            .filter_map(|name| {
                let v = self.column(&name)?.value(row);
                Some((name, v))
            })
            .collect()
    }

    /// Row subset (with repetition allowed); level sets are preserved.
    pub fn subset(&self, rows: &[usize]) -> SurvivalDataset {
        SurvivalDataset {
            roles: self.roles.clone(),
            time: rows.iter().map(|&r| self.time[r]).collect(),
            status: rows.iter().map(|&r| self.status[r]).collect(),
            columns: self
                .columns
                .iter()
                .map(|(n, c)| (n.clone(), c.select(rows)))
                .collect(),
        }
    }

    /// Same data under different roles over the already-present columns.
    pub fn with_roles(&self, roles: ColumnRoles) -> Result<SurvivalDataset> {
        SurvivalDataset::new(roles, self.time.clone(), self.status.clone(), self.columns.clone())
    }

    /// Ingestion options that reproduce this dataset's column kinds.
    pub fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            strict: true,
            categorical: self
                .columns
                .iter()
                .filter(|(_, c)| c.is_categorical())
                .map(|(n, _)| n.clone())
                .collect(),
        }
    }

    /// Writes the role columns back out in the ingestion CSV dialect.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header = vec![self.roles.time_column.clone(), self.roles.status_column.clone()];
        let names: Vec<String> = self.columns.iter().map(|(n, _)| n.clone()).collect();
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.time[i].to_string(), self.status[i].to_string()];
            rec.extend(self.columns.iter().map(|(_, c)| c.value(i).to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

enum RawTime {
    Ok(f64),
    Bad(DropReason),
}

fn parse_time(cell: &str) -> RawTime {
    match cell.parse::<f64>() {
        Ok(t) if !t.is_finite() => RawTime::Bad(DropReason::NonNumericTime),
        Ok(t) if t < 0.0 => RawTime::Bad(DropReason::NegativeTime),
        Ok(t) => RawTime::Ok(t),
        Err(_) => RawTime::Bad(DropReason::NonNumericTime),
    }
}

fn parse_status(cell: &str) -> Option<u32> {
    if let Ok(v) = cell.parse::<u32>() {
        return Some(v);
    }
    // Accept integral floats such as "1.0".
    match cell.parse::<f64>() {
        Ok(f) if f.is_finite() && f >= 0.0 && f.fract() == 0.0 && f <= u32::MAX as f64 => {
            Some(f as u32)
        }
        _ => None,
    }
}

/// Parses a CSV document (comma separated, header row, optional quoting, UTF-8)
/// into a validated dataset.
pub fn ingest_csv(
    bytes: &[u8],
    roles: &ColumnRoles,
    options: &IngestOptions,
) -> Result<(SurvivalDataset, IngestionReport)> {
    roles.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::invalid("CSV document has no header row"));
    }
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let time_idx = index_of(&roles.time_column)?;
    let status_idx = index_of(&roles.status_column)?;
    let mut cov_names = roles.covariate_names();
    cov_names.extend(roles.strata.iter().cloned());
    let cov_idx = cov_names
        .iter()
        .map(|n| index_of(n))
        .collect::<Result<Vec<_>>>()?;

    let records = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    let rows_in = records.len();

    // Column kinds are decided on every non-missing cell of the raw column.
    let categorical: Vec<bool> = cov_names
        .iter()
        .zip(&cov_idx)
        .map(|(name, &j)| {
            options.categorical.contains(name)
                || roles.strata.as_deref() == Some(name.as_str())
                || records.iter().any(|r| {
                    let cell = &r[j];
                    !is_missing(cell) && cell.parse::<f64>().map_or(true, |v| !v.is_finite())
                })
        })
        .collect();

    let mut drops: BTreeMap<DropReason, usize> = BTreeMap::new();
    let mut time = Vec::with_capacity(rows_in);
    let mut status = Vec::with_capacity(rows_in);
    let mut kept_rows: Vec<usize> = Vec::with_capacity(rows_in);

    for (i, rec) in records.iter().enumerate() {
        let reason = if is_missing(&rec[time_idx]) {
            Some(DropReason::MissingTime)
        } else if is_missing(&rec[status_idx]) {
            Some(DropReason::MissingStatus)
        } else if cov_idx.iter().any(|&j| is_missing(&rec[j])) {
            Some(DropReason::MissingCovariate)
        } else {
            None
        };
        if let Some(r) = reason {
            *drops.entry(r).or_default() += 1;
            continue;
        }
        let t = match parse_time(&rec[time_idx]) {
            RawTime::Ok(t) => t,
            RawTime::Bad(r) => {
                if options.strict {
                    return Err(Error::InvalidCell {
                        row: i + 1,
                        column: roles.time_column.clone(),
                        message: format!("{} '{}'", r.as_str(), &rec[time_idx]),
                    });
                }
                *drops.entry(r).or_default() += 1;
                continue;
            }
        };
        let s = match parse_status(&rec[status_idx]) {
            Some(s) => s,
            None => {
                if options.strict {
                    return Err(Error::InvalidCell {
                        row: i + 1,
                        column: roles.status_column.clone(),
                        message: format!("invalid status code '{}'", &rec[status_idx]),
                    });
                }
                *drops.entry(DropReason::InvalidStatus).or_default() += 1;
                continue;
            }
        };
        time.push(t);
        status.push(s);
        kept_rows.push(i);
    }

    if kept_rows.is_empty() {
        return Err(Error::NoUsableRows);
    }

    let mut columns = Vec::with_capacity(cov_names.len());
    for ((name, &j), &is_cat) in cov_names.iter().zip(&cov_idx).zip(&categorical) {
        let col = if is_cat {
            let mut levels: Vec<String> = Vec::new();
            let mut lookup: HashMap<&str, usize> = HashMap::new();
            let mut codes = Vec::with_capacity(kept_rows.len());
            for &r in &kept_rows {
                let cell = &records[r][j];
                let code = *lookup.entry(cell).or_insert_with(|| {
                    levels.push(cell.to_string());
                    levels.len() - 1
                });
                codes.push(code);
            }
            Column::Categorical { levels, codes }
        } else {
            let values = kept_rows
                .iter()
                .map(|&r| records[r][j].parse::<f64>().expect("checked numeric"))
                .collect();
            Column::Continuous { values }
        };
        columns.push((name.clone(), col));
    }

    let dataset = SurvivalDataset::new(roles.clone(), time, status, columns)?;
    let report = IngestionReport {
        rows_in,
        rows_kept: dataset.n(),
        drops: drops
            .into_iter()
            .map(|(reason, count)| DropCount { reason, count })
            .collect(),
    };
    Ok((dataset, report))
}

/// Lower-middle order statistic.
pub fn lower_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Most frequent code; ties go to the smallest code (first appearance).
pub(crate) fn modal_code(codes: &[usize], n_levels: usize) -> usize {
    let mut counts = vec![0usize; n_levels];
    for &c in codes {
        counts[c] += 1;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    UserSpecified,
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjusterEntry {
    pub name: String,
    pub value: CovariateValue,
    pub source: Provenance,
}

/// Fixed adjuster values at which conditional predictions are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjusterProfile {
    pub entries: Vec<AdjusterEntry>,
}

impl AdjusterProfile {
    pub fn get(&self, name: &str) -> Option<&CovariateValue> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.value)
    }

    /// Replaces entries with user-supplied raw values, parsed against the
    /// column kind. Unknown adjusters and levels are rejected.
    pub fn with_overrides(
        &self,
        data: &SurvivalDataset,
        overrides: &[(String, String)],
    ) -> Result<AdjusterProfile> {
        let mut out = self.clone();
        for (name, raw) in overrides {
            let entry = out
                .entries
                .iter_mut()
                .find(|e| &e.name == name)
                .ok_or_else(|| Error::invalid(format!("'{name}' is not an adjuster")))?;
            let value = match data.column(name) {
                Some(Column::Continuous { .. }) => {
                    let v: f64 = raw.trim().parse().map_err(|_| {
                        Error::invalid(format!("adjuster '{name}' needs a number, got '{raw}'"))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::invalid(format!("adjuster '{name}' must be finite")));
                    }
                    CovariateValue::Continuous(v)
                }
                Some(Column::Categorical { levels, .. }) => {
                    if !levels.iter().any(|l| l == raw) {
                        return Err(Error::UnknownLevel {
                            column: name.clone(),
                            level: raw.clone(),
                        });
                    }
                    CovariateValue::Level(raw.clone())
                }
                None => return Err(Error::MissingColumn(name.clone())),
            };
            entry.value = value;
            entry.source = Provenance::UserSpecified;
        }
        Ok(out)
    }

    /// Full covariate assignment with the predictor set to `x`.
    pub fn covariates(&self, predictor: &str, x: f64) -> Covariates {
        let mut c: Covariates = self
            .entries
            .iter()
            .map(|e| (e.name.clone(), e.value.clone()))
            .collect();
        c.insert(predictor.to_string(), CovariateValue::Continuous(x));
        c
    }
}

/// Median for continuous adjusters, most frequent level for categorical ones.
pub fn default_adjuster_profile(data: &SurvivalDataset) -> AdjusterProfile {
    let entries = data
        .roles()
        .adjusters
        .iter()
        .map(|name| {
            let value = match data.column(name).expect("validated adjuster") {
                Column::Continuous { values } => CovariateValue::Continuous(lower_median(values)),
                Column::Categorical { levels, codes } => {
                    CovariateValue::Level(levels[modal_code(codes, levels.len())].clone())
                }
            };
            AdjusterEntry {
                name: name.clone(),
                value,
                source: Provenance::Default,
            }
        })
        .collect();
    AdjusterProfile { entries }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnStats {
    Continuous { min: f64, max: f64, median: f64 },
    Categorical { levels: Vec<LevelCount> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub name: String,
    pub role: String,
    pub stats: ColumnStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseCount {
    pub code: u32,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub roles: ColumnRoles,
    pub columns: Vec<ColumnSummary>,
    pub censored: usize,
    pub events: Vec<CauseCount>,
    pub follow_up: (f64, f64),
}

pub fn summarize(data: &SurvivalDataset) -> DatasetSummary {
    let roles = data.roles();
    let role_of = |name: &str| -> &'static str {
        if name == roles.predictor {
            "predictor"
        } else if roles.strata.as_deref() == Some(name) {
            "strata"
        } else {
            "adjuster"
        }
    };
    let columns = data
        .columns()
        .iter()
        .map(|(name, col)| {
            let stats = match col {
                Column::Continuous { values } => ColumnStats::Continuous {
                    min: values.iter().copied().fold(f64::INFINITY, f64::min),
                    max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    median: lower_median(values),
                },
                Column::Categorical { levels, codes } => {
                    let mut counts = vec![0; levels.len()];
                    for &c in codes {
                        counts[c] += 1;
                    }
                    ColumnStats::Categorical {
                        levels: levels
                            .iter()
                            .zip(counts)
                            .map(|(l, count)| LevelCount {
                                level: l.clone(),
                                count,
                            })
                            .collect(),
                    }
                }
            };
            ColumnSummary {
                name: name.clone(),
                role: role_of(name).to_string(),
                stats,
            }
        })
        .collect();
    let events = data
        .causes()
        .into_iter()
        .map(|code| CauseCount {
            code,
            count: data.status().iter().filter(|&&s| s == code).count(),
        })
        .collect();
    let time = data.time();
    DatasetSummary {
        n: data.n(),
        roles: roles.clone(),
        columns,
        censored: data.status().iter().filter(|&&s| s == 0).count(),
        events,
        follow_up: (
            time.iter().copied().fold(f64::INFINITY, f64::min),
            time.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
    }
}
