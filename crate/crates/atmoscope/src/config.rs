//! Shared TOML configuration for `serve` and `worker`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

pub const CONFIG_ENV: &str = "ATMOSCOPE_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

/// How a process intends to open the catalog. Workers accept only
/// `read_only`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogIntent {
    ReadOnly,
    ReadWrite,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Catalog root. Relative paths resolve against the config file's directory.
    pub catalog: PathBuf,
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// Address the front-end accepts worker connections on.
    #[serde(default = "default_cluster_listen")]
    pub cluster_listen: SocketAddr,
    /// Address a worker connects to.
    #[serde(default = "default_frontend")]
    pub frontend: String,
    /// Local worker processes spawned by `serve`.
    #[serde(default)]
    pub workers: u32,
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default = "default_heartbeat")]
    pub heartbeat_interval_ms: u64,
    #[serde(default = "default_intent")]
    pub catalog_mode: CatalogIntent,
    /// Attempts a worker makes to reach the front-end before giving up.
    #[serde(default = "default_connect_retries")]
    pub connect_retries: u32,
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:8080".parse().expect("valid literal")
}
fn default_cluster_listen() -> SocketAddr {
    "127.0.0.1:7070".parse().expect("valid literal")
}
fn default_frontend() -> String {
    "127.0.0.1:7070".into()
}
fn default_heartbeat() -> u64 {
    2000
}
fn default_intent() -> CatalogIntent {
    CatalogIntent::ReadOnly
}
fn default_connect_retries() -> u32 {
    5
}

impl Config {
    pub fn for_catalog(catalog: impl Into<PathBuf>) -> Config {
        Config {
            catalog: catalog.into(),
            listen: default_listen(),
            cluster_listen: default_cluster_listen(),
            frontend: default_frontend(),
            workers: 0,
            static_dir: None,
            heartbeat_interval_ms: default_heartbeat(),
            catalog_mode: default_intent(),
            connect_retries: default_connect_retries(),
        }
    }

    pub fn parse(text: &str, base: &Path) -> Result<Config, String> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        if cfg.heartbeat_interval_ms == 0 {
            return Err("heartbeat_interval_ms must be positive".into());
        }
        if cfg.catalog.is_relative() {
            cfg.catalog = base.join(&cfg.catalog);
        }
        if let Some(s) = cfg.static_dir.as_mut() {
            if s.is_relative() {
                *s = base.join(&*s);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Config::parse(&text, base).map_err(|reason| ConfigError::Invalid { path: path.into(), reason })
    }

    /// `--config` if given, else `$ATMOSCOPE_CONFIG`.
    pub fn locate(flag: Option<&Path>) -> Option<PathBuf> {
        flag.map(Path::to_path_buf).or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
    }

    pub fn heartbeat_interval(&self) -> Duration {
        Duration::from_millis(self.heartbeat_interval_ms)
    }
}
