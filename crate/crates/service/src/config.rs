use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use cbir_core::descriptor::DescriptorConfig;
use cbir_core::retrieval::DEFAULT_K;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// Service settings, read from a JSON file by `cbir serve --config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub descriptor: DescriptorConfig,
    pub default_k: usize,
    /// Origins allowed by CORS. Empty disables cross-origin access.
    pub cors_allowlist: Vec<String>,
    pub max_upload_bytes: usize,
    /// Embedding head applied to every descriptor before indexing and querying.
    pub head_path: Option<PathBuf>,
    /// Directory of static UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("cbir-data"),
            descriptor: DescriptorConfig::default(),
            default_k: DEFAULT_K,
            cors_allowlist: Vec::new(),
            max_upload_bytes: 64 * 1024 * 1024,
            head_path: None,
            static_dir: None,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> ServiceResult<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::io(format!("reading config {}", path.display()), e))?;
        let cfg: ServiceConfig = serde_json::from_str(&text)
            .map_err(|e| ServiceError::BadRequest(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn with_data_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.data_dir = dir.into();
        self
    }

    /// Checks the numeric settings and that the data directory is writable.
    pub fn validate(&self) -> ServiceResult<()> {
        if self.default_k == 0 {
            return Err(ServiceError::BadRequest("default_k must be >= 1".into()));
        }
        if self.max_upload_bytes == 0 {
            return Err(ServiceError::BadRequest("max_upload_bytes must be > 0".into()));
        }
        self.descriptor.validate()?;
        let dir = &self.data_dir;
        std::fs::create_dir_all(dir)
            .map_err(|e| ServiceError::io(format!("creating data dir {}", dir.display()), e))?;
        let probe = dir.join(".write-probe");
        std::fs::write(&probe, b"ok")
            .and_then(|_| std::fs::remove_file(&probe))
            .map_err(|e| ServiceError::io(format!("data dir {} is not writable", dir.display()), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: ServiceConfig = serde_json::from_str(r#"{"data_dir": "/tmp/x", "default_k": 5}"#).unwrap();
        assert_eq!(cfg.default_k, 5);
        assert_eq!(cfg.data_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.descriptor, DescriptorConfig::default());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ServiceConfig {
            cors_allowlist: vec!["http://localhost:4200".into()],
            ..ServiceConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ServiceConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_zero_k_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ServiceConfig {
            default_k: 0,
            ..ServiceConfig::default().with_data_dir(dir.path())
        };
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<ServiceConfig>(r#"{"k": 3}"#).is_err());
    }
}
