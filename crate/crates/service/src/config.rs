use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    pub port: u16,
    pub data_dir: PathBuf,
    /// Concurrent fit jobs.
    pub workers: usize,
    pub max_upload_mb: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            port: 8080,
            data_dir: PathBuf::from("data"),
            workers: 2,
            max_upload_mb: 50,
        }
    }
}

impl Config {
    /// Reads PORT, DATA_DIR, WORKERS and MAX_UPLOAD_MB, falling back to defaults.
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let d = Config::default();
        fn num<T: std::str::FromStr>(key: &str, raw: Option<String>, default: T) -> Result<T, String> {
            match raw {
                None => Ok(default),
                Some(s) => s.trim().parse().map_err(|_| format!("{key} must be a number, got '{s}'")),
            }
        }
        let workers = num("WORKERS", get("WORKERS"), d.workers)?;
        if workers == 0 {
            return Err("WORKERS must be at least 1".into());
        }
        Ok(Config {
            port: num("PORT", get("PORT"), d.port)?,
            data_dir: get("DATA_DIR").map(PathBuf::from).unwrap_or(d.data_dir),
            workers,
            max_upload_mb: num("MAX_UPLOAD_MB", get("MAX_UPLOAD_MB"), d.max_upload_mb)?,
        })
    }
}
