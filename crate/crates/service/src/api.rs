use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::extract::rejection::QueryRejection;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::json;
use survcontour_core::contour::{
    build_quantile_curves, build_surface, to_json_bytes, to_surface3d, ContourOptions,
};
use survcontour_core::data::{
    default_adjuster_profile, ingest_csv, summarize, AdjusterProfile, ColumnRoles, IngestOptions,
    IngestionReport, SurvivalDataset,
};
use survcontour_core::nonparametric::median_split_km;
use survcontour_core::registry::{recommend, validate, Answers, FittedModel, ModelSpec};
use survcontour_core::Error as CoreError;

use crate::store::{dataset_id, data_for_spec, AppState, JobState, StoredDataset};

/// Largest time grid a client may request.
pub const MAX_TIME_POINTS: usize = 200;
pub const MAX_PREDICTOR_POINTS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub fields: Vec<FieldError>,
    pub violations: Vec<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            fields: Vec::new(),
            violations: Vec::new(),
        }
    }

    fn bad_request(field: &str, message: impl Into<String>) -> Self {
        let message = message.into();
        ApiError {
            fields: vec![FieldError {
                field: field.to_string(),
                message: message.clone(),
            }],
            ..ApiError::new(StatusCode::BAD_REQUEST, message)
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("{what} '{id}' not found"))
    }

    /// Errors from model validation, fitting or surface building.
    fn unprocessable(e: CoreError) -> Self {
        let violations = match &e {
            CoreError::Violations(v) => v.clone(),
            _ => Vec::new(),
        };
        ApiError {
            violations,
            ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
        }
    }

    /// Errors caused by malformed input data or parameters.
    fn from_input(field: &str, e: CoreError) -> Self {
        let field = match &e {
            CoreError::MissingColumn(c) => format!("{field}.{c}"),
            CoreError::InvalidCell { column, .. } => format!("{field}.{column}"),
            CoreError::UnknownLevel { column, .. } => format!("{field}.{column}"),
            _ => field.to_string(),
        };
        ApiError::bad_request(&field, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message, "status": self.status.as_u16() });
        if !self.fields.is_empty() {
            body["fields"] = serde_json::to_value(&self.fields).expect("fields serialize");
        }
        if !self.violations.is_empty() {
            body["violations"] = json!(self.violations);
        }
        (self.status, axum::Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn json_bytes(status: StatusCode, bytes: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

fn json_value<T: Serialize>(status: StatusCode, value: &T) -> ApiResult<Response> {
    let bytes = to_json_bytes(value).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(json_bytes(status, bytes))
}

/// Parses a JSON body, reporting the path of the offending field.
fn parse_body<T: for<'de> Deserialize<'de>>(bytes: &[u8], root: &str) -> ApiResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { root.to_string() } else { format!("{root}.{path}") };
        ApiError::bad_request(&field, e.inner().to_string())
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

pub fn router(state: AppState) -> Router {
    let limit = state.config().max_upload_mb * 1024 * 1024;
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/datasets", post(upload_dataset))
        .route("/datasets/{id}/summary", get(dataset_summary))
        .route("/datasets/{id}/profile", get(dataset_profile))
        .route("/recommend", post(recommend_families))
        .route("/models", post(create_model))
        .route("/jobs/{id}", get(job_status))
        .route("/models/{id}/contour", get(contour))
        .route("/models/{id}/quantile-curves", get(quantile_curves))
        .route("/models/{id}/surface3d", get(surface3d))
        .route("/models/{id}/metrics", get(metrics))
        .route("/models/{id}/km-split", get(km_split))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

#[derive(Debug, Serialize)]
pub struct UploadResponse {
    pub dataset_id: String,
    pub report: IngestionReport,
}

async fn upload_dataset(State(state): State<AppState>, mut multipart: Multipart) -> ApiResult<Response> {
    let mut csv: Option<Bytes> = None;
    let mut roles: Option<ColumnRoles> = None;
    let mut options = IngestOptions::default();
    loop {
        let field = multipart.next_field().await.map_err(|e| {
            if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
                ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, e.body_text())
            } else {
                ApiError::bad_request("multipart", e.body_text())
            }
        })?;
        let Some(field) = field else { break };
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| {
            if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
                ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, e.body_text())
            } else {
                ApiError::bad_request(&name, e.body_text())
            }
        })?;
        match name.as_str() {
            "file" | "data" => {
                if csv.is_some() {
                    return Err(ApiError::bad_request("file", "one dataset per upload"));
                }
                csv = Some(bytes);
            }
            "roles" => roles = Some(parse_body(&bytes, "roles")?),
            "options" => options = parse_body(&bytes, "options")?,
            other => return Err(ApiError::bad_request(other, "unexpected multipart field")),
        }
    }
    let csv = csv.ok_or_else(|| ApiError::bad_request("file", "missing CSV part"))?;
    let roles = roles.ok_or_else(|| ApiError::bad_request("roles", "missing roles part"))?;
    let st = state.clone();
    let ds = blocking(move || {
        let (data, report) = ingest_csv(&csv, &roles, &options).map_err(|e| ApiError::from_input("roles", e))?;
        let ds = StoredDataset {
            id: dataset_id(&csv, &roles, &options),
            csv: csv.to_vec(),
            roles,
            options,
            data,
            report,
        };
        st.insert_dataset(ds)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    })
    .await?;
    json_value(
        StatusCode::CREATED,
        &UploadResponse {
            dataset_id: ds.id.clone(),
            report: ds.report.clone(),
        },
    )
}

fn find_dataset(state: &AppState, id: &str) -> ApiResult<Arc<StoredDataset>> {
    state.dataset(id).ok_or_else(|| ApiError::not_found("dataset", id))
}

async fn dataset_summary(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let ds = find_dataset(&state, &id)?;
    json_value(StatusCode::OK, &summarize(&ds.data))
}

async fn dataset_profile(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let ds = find_dataset(&state, &id)?;
    json_value(StatusCode::OK, &default_adjuster_profile(&ds.data))
}

#[derive(Debug, Deserialize)]
pub struct RecommendRequest {
    pub dataset_id: String,
    #[serde(default)]
    pub answers: Answers,
}

async fn recommend_families(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: RecommendRequest = parse_body(&body, "body")?;
    let ds = find_dataset(&state, &req.dataset_id)?;
    json_value(StatusCode::OK, &recommend(&summarize(&ds.data), &req.answers))
}

#[derive(Debug, Deserialize)]
pub struct CreateModelRequest {
    pub dataset_id: String,
    pub spec: ModelSpec,
}

async fn create_model(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateModelRequest = parse_body(&body, "body")?;
    let ds = find_dataset(&state, &req.dataset_id)?;
    let spec = req.spec;
    let checked = {
        let ds = ds.clone();
        let spec = spec.clone();
        blocking(move || {
            let data = data_for_spec(&ds, &spec).map_err(ApiError::unprocessable)?;
            validate(&spec, &data).map_err(ApiError::unprocessable)
        })
        .await
    };
    checked?;
    let job_id = state.submit(&ds, spec);
    json_value(StatusCode::ACCEPTED, &json!({ "job_id": job_id }))
}

async fn job_status(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let job = state.job(&id).ok_or_else(|| ApiError::not_found("job", &id))?;
    json_value(StatusCode::OK, &job.record)
}

fn done_model(state: &AppState, id: &str) -> ApiResult<(Arc<FittedModel>, Arc<SurvivalDataset>)> {
    let job = state.job(id).ok_or_else(|| ApiError::not_found("model", id))?;
    match (job.record.state, job.model, job.data) {
        (JobState::Done, Some(m), Some(d)) => Ok((m, d)),
        (JobState::Failed, ..) => Err(ApiError::new(
            StatusCode::CONFLICT,
            format!(
                "job '{id}' failed: {}",
                job.record.error.unwrap_or_default()
            ),
        )),
        (s, ..) => Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("job '{id}' is {}", serde_json::to_value(s).expect("state serializes").as_str().unwrap_or("pending")),
        )),
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct SurfaceQuery {
    pub n_pred: Option<usize>,
    pub n_time: Option<usize>,
    pub ci: Option<bool>,
    pub bins: Option<usize>,
    /// `name:value` pairs separated by commas.
    pub adjusters: Option<String>,
}

impl SurfaceQuery {
    pub fn options(&self) -> ApiResult<ContourOptions> {
        let d = ContourOptions::default();
        let o = ContourOptions {
            n_pred: self.n_pred.unwrap_or(d.n_pred),
            n_time: self.n_time.unwrap_or(d.n_time),
            ci: self.ci.unwrap_or(d.ci),
            bins: self.bins.unwrap_or(d.bins),
        };
        if !(2..=MAX_PREDICTOR_POINTS).contains(&o.n_pred) {
            return Err(ApiError::bad_request("n_pred", format!("must lie in 2..={MAX_PREDICTOR_POINTS}")));
        }
        if !(2..=MAX_TIME_POINTS).contains(&o.n_time) {
            return Err(ApiError::bad_request("n_time", format!("must lie in 2..={MAX_TIME_POINTS}")));
        }
        if !(1..=1000).contains(&o.bins) {
            return Err(ApiError::bad_request("bins", "must lie in 1..=1000"));
        }
        Ok(o)
    }

    pub fn overrides(&self) -> ApiResult<Vec<(String, String)>> {
        let Some(raw) = &self.adjusters else {
            return Ok(Vec::new());
        };
        raw.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|pair| {
                pair.split_once(':')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .ok_or_else(|| ApiError::bad_request("adjusters", format!("expected name:value, got '{pair}'")))
            })
            .collect()
    }

    pub fn profile(&self, data: &SurvivalDataset) -> ApiResult<AdjusterProfile> {
        default_adjuster_profile(data)
            .with_overrides(data, &self.overrides()?)
            .map_err(|e| ApiError::from_input("adjusters", e))
    }
}

fn surface_query(q: Result<Query<SurfaceQuery>, QueryRejection>) -> ApiResult<SurfaceQuery> {
    q.map(|Query(q)| q)
        .map_err(|e| ApiError::bad_request("query", e.body_text()))
}

#[derive(Clone, Copy)]
enum View {
    Contour,
    Quantiles,
    Surface3D,
}

async fn view(state: AppState, id: String, q: SurfaceQuery, view: View) -> ApiResult<Response> {
    let (model, data) = done_model(&state, &id)?;
    let options = q.options()?;
    let profile = q.profile(&data)?;
    let bytes = blocking(move || {
        let out = match view {
            View::Contour => build_surface(&model, &data, &profile, &options).and_then(|s| to_json_bytes(&s)),
            View::Quantiles => build_quantile_curves(&model, &data, &profile, &options).and_then(|s| to_json_bytes(&s)),
            View::Surface3D => {
                build_surface(&model, &data, &profile, &options).and_then(|s| to_json_bytes(&to_surface3d(&s)))
            }
        };
        out.map_err(ApiError::unprocessable)
    })
    .await?;
    Ok(json_bytes(StatusCode::OK, bytes))
}

async fn contour(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<SurfaceQuery>, QueryRejection>,
) -> ApiResult<Response> {
    view(state, id, surface_query(q)?, View::Contour).await
}

async fn quantile_curves(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<SurfaceQuery>, QueryRejection>,
) -> ApiResult<Response> {
    view(state, id, surface_query(q)?, View::Quantiles).await
}

async fn surface3d(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<SurfaceQuery>, QueryRejection>,
) -> ApiResult<Response> {
    view(state, id, surface_query(q)?, View::Surface3D).await
}

async fn metrics(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let (model, data) = done_model(&state, &id)?;
    let bytes = blocking(move || {
        model
            .metrics(&data)
            .and_then(|m| to_json_bytes(&m))
            .map_err(ApiError::unprocessable)
    })
    .await?;
    Ok(json_bytes(StatusCode::OK, bytes))
}

async fn km_split(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let (_, data) = done_model(&state, &id)?;
    let split = median_split_km(&data).map_err(ApiError::unprocessable)?;
    json_value(StatusCode::OK, &split)
}
