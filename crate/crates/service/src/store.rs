//! In-memory index of datasets and jobs, mirrored to disk under content
//! addressed ids so that it can be rebuilt on startup.
//!
//! Layout under the data directory:
//! `datasets/<id>/data.csv`, `datasets/<id>/meta.json`, `jobs/<id>.json`,
//! `models/<id>.json`.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use survcontour_core::data::{ingest_csv, ColumnRoles, IngestOptions, IngestionReport, SurvivalDataset};
use survcontour_core::registry::{fit, FittedModel, ModelSpec};
use tokio::sync::Semaphore;

use crate::config::Config;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    roles: ColumnRoles,
    options: IngestOptions,
}

#[derive(Debug)]
pub struct StoredDataset {
    pub id: String,
    pub csv: Vec<u8>,
    pub roles: ColumnRoles,
    pub options: IngestOptions,
    pub data: SurvivalDataset,
    pub report: IngestionReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub dataset_id: String,
    pub state: JobState,
    pub spec: ModelSpec,
    /// Milliseconds since the Unix epoch.
    pub created: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Job {
    pub record: JobRecord,
    /// Data as seen by the fit (the dataset re-read under the spec's roles).
    pub data: Option<Arc<SurvivalDataset>>,
    pub model: Option<Arc<FittedModel>>,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

pub fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub fn dataset_id(csv: &[u8], roles: &ColumnRoles, options: &IngestOptions) -> String {
    let roles = serde_json::to_vec(roles).expect("roles serialize");
    let options = serde_json::to_vec(options).expect("options serialize");
    sha256_hex(&[csv, &roles, &options])
}

pub fn model_id(dataset_id: &str, spec: &ModelSpec) -> String {
    let spec = serde_json::to_vec(spec).expect("spec serializes");
    sha256_hex(&[dataset_id.as_bytes(), &spec])
}

/// The dataset re-read under a model spec's roles.
pub fn data_for_spec(ds: &StoredDataset, spec: &ModelSpec) -> survcontour_core::Result<SurvivalDataset> {
    Ok(ingest_csv(&ds.csv, &spec.roles, &ds.options)?.0)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

struct Inner {
    config: Config,
    datasets: Mutex<HashMap<String, Arc<StoredDataset>>>,
    jobs: Mutex<HashMap<String, Job>>,
    workers: Semaphore,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Opens (or creates) the data directory, rebuilds the index and requeues
    /// jobs that had not finished. Must run inside a Tokio runtime.
    pub async fn open(config: Config) -> io::Result<AppState> {
        for sub in ["datasets", "jobs", "models"] {
            fs::create_dir_all(config.data_dir.join(sub))?;
        }
        let state = AppState {
            inner: Arc::new(Inner {
                workers: Semaphore::new(config.workers),
                config,
                datasets: Mutex::new(HashMap::new()),
                jobs: Mutex::new(HashMap::new()),
            }),
        };
        state.load_datasets()?;
        let pending = state.load_jobs()?;
        for id in pending {
            state.spawn_job(id);
        }
        Ok(state)
    }

    pub fn config(&self) -> &Config {
        &self.inner.config
    }

    fn dir(&self, sub: &str) -> PathBuf {
        self.inner.config.data_dir.join(sub)
    }

    fn load_datasets(&self) -> io::Result<()> {
        for entry in fs::read_dir(self.dir("datasets"))? {
            let path = entry?.path();
            let (Ok(csv), Ok(meta)) = (fs::read(path.join("data.csv")), fs::read(path.join("meta.json"))) else {
                continue;
            };
            let Ok(meta) = serde_json::from_slice::<DatasetMeta>(&meta) else {
                tracing::warn!(?path, "unreadable dataset metadata; skipped");
                continue;
            };
            match ingest_csv(&csv, &meta.roles, &meta.options) {
                Ok((data, report)) => {
                    let id = dataset_id(&csv, &meta.roles, &meta.options);
                    let ds = StoredDataset {
                        id: id.clone(),
                        csv,
                        roles: meta.roles,
                        options: meta.options,
                        data,
                        report,
                    };
                    self.inner.datasets.lock().unwrap().insert(id, Arc::new(ds));
                }
                Err(e) => tracing::warn!(?path, error = %e, "stored dataset no longer ingests; skipped"),
            }
        }
        Ok(())
    }

    /// Returns ids of jobs that must be run again.
    fn load_jobs(&self) -> io::Result<Vec<String>> {
        let mut pending = Vec::new();
        for entry in fs::read_dir(self.dir("jobs"))? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let Ok(mut record) = fs::read(&path)
                .map_err(|e| e.to_string())
                .and_then(|b| serde_json::from_slice::<JobRecord>(&b).map_err(|e| e.to_string()))
            else {
                tracing::warn!(?path, "unreadable job record; skipped");
                continue;
            };
            let Some(ds) = self.dataset(&record.dataset_id) else {
                continue;
            };
            let mut job = Job {
                record: record.clone(),
                data: None,
                model: None,
            };
            if record.state == JobState::Done {
                let model = fs::read(self.dir("models").join(format!("{}.json", record.id)))
                    .ok()
                    .and_then(|b| serde_json::from_slice::<FittedModel>(&b).ok());
                match (model, data_for_spec(&ds, &record.spec)) {
                    (Some(model), Ok(data)) => {
                        job.model = Some(Arc::new(model));
                        job.data = Some(Arc::new(data));
                    }
                    _ => {
                        record.state = JobState::Queued;
                        record.finished = None;
                        job.record = record;
                    }
                }
            }
            if matches!(job.record.state, JobState::Queued | JobState::Running) {
                job.record.state = JobState::Queued;
                pending.push(job.record.id.clone());
            }
            self.inner.jobs.lock().unwrap().insert(job.record.id.clone(), job);
        }
        pending.sort();
        Ok(pending)
    }

    pub fn dataset(&self, id: &str) -> Option<Arc<StoredDataset>> {
        self.inner.datasets.lock().unwrap().get(id).cloned()
    }

    /// Stores an ingested dataset; uploading identical content is a no-op.
    pub fn insert_dataset(&self, ds: StoredDataset) -> io::Result<Arc<StoredDataset>> {
        if let Some(existing) = self.dataset(&ds.id) {
            return Ok(existing);
        }
        let dir = self.dir("datasets").join(&ds.id);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join("data.csv"), &ds.csv)?;
        let meta = DatasetMeta {
            roles: ds.roles.clone(),
            options: ds.options.clone(),
        };
        write_atomic(&dir.join("meta.json"), &serde_json::to_vec(&meta)?)?;
        let ds = Arc::new(ds);
        self.inner
            .datasets
            .lock()
            .unwrap()
            .entry(ds.id.clone())
            .or_insert_with(|| ds.clone());
        Ok(ds)
    }

    pub fn job(&self, id: &str) -> Option<Job> {
        self.inner.jobs.lock().unwrap().get(id).cloned()
    }

    fn persist_record(&self, record: &JobRecord) {
        let path = self.dir("jobs").join(format!("{}.json", record.id));
        if let Err(e) = serde_json::to_vec(record)
            .map_err(io::Error::other)
            .and_then(|b| write_atomic(&path, &b))
        {
            tracing::error!(id = %record.id, error = %e, "could not persist job record");
        }
    }

    /// Registers a fit job, or returns the existing one with the same id.
    pub fn submit(&self, dataset: &StoredDataset, spec: ModelSpec) -> String {
        let id = model_id(&dataset.id, &spec);
        {
            let mut jobs = self.inner.jobs.lock().unwrap();
            if jobs.contains_key(&id) {
                return id;
            }
            let record = JobRecord {
                id: id.clone(),
                dataset_id: dataset.id.clone(),
                state: JobState::Queued,
                spec,
                created: now_ms(),
                finished: None,
                error: None,
            };
            self.persist_record(&record);
            jobs.insert(
                id.clone(),
                Job {
                    record,
                    data: None,
                    model: None,
                },
            );
        }
        self.spawn_job(id.clone());
        id
    }

    fn update<F: FnOnce(&mut Job)>(&self, id: &str, f: F) {
        let record = {
            let mut jobs = self.inner.jobs.lock().unwrap();
            let Some(job) = jobs.get_mut(id) else { return };
            f(job);
            job.record.clone()
        };
        self.persist_record(&record);
    }

    fn spawn_job(&self, id: String) {
        let state = self.clone();
        tokio::spawn(async move {
            let Ok(_permit) = state.inner.workers.acquire().await else {
                return;
            };
            let Some(job) = state.job(&id) else { return };
            let Some(ds) = state.dataset(&job.record.dataset_id) else {
                state.update(&id, |j| {
                    j.record.state = JobState::Failed;
                    j.record.finished = Some(now_ms());
                    j.record.error = Some("dataset not found".into());
                });
                return;
            };
            state.update(&id, |j| j.record.state = JobState::Running);
            let spec = job.record.spec.clone();
            let outcome = tokio::task::spawn_blocking(move || {
                let data = data_for_spec(&ds, &spec)?;
                let model = fit(&spec, &data)?;
                Ok::<_, survcontour_core::Error>((data, model))
            })
            .await;
            match outcome {
                Ok(Ok((data, model))) => {
                    let path = state.dir("models").join(format!("{id}.json"));
                    if let Err(e) = serde_json::to_vec(&model)
                        .map_err(io::Error::other)
                        .and_then(|b| write_atomic(&path, &b))
                    {
                        tracing::error!(%id, error = %e, "could not persist model");
                    }
                    state.update(&id, |j| {
                        j.data = Some(Arc::new(data));
                        j.model = Some(Arc::new(model));
                        j.record.state = JobState::Done;
                        j.record.finished = Some(now_ms());
                    });
                    tracing::info!(%id, "fit done");
                }
                Ok(Err(e)) => {
                    tracing::info!(%id, error = %e, "fit failed");
                    state.update(&id, |j| {
                        j.record.state = JobState::Failed;
                        j.record.finished = Some(now_ms());
                        j.record.error = Some(e.to_string());
                    });
                }
                Err(e) => {
                    state.update(&id, |j| {
                        j.record.state = JobState::Failed;
                        j.record.finished = Some(now_ms());
                        j.record.error = Some(format!("fit task aborted: {e}"));
                    });
                }
            }
        });
    }
}
