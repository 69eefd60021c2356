//! Service configuration, read from TOML (or JSON when the file ends in
//! `.json`). Every key has a default, so an empty file is valid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use structa_core::llm::ModelRoutes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Background tasks (augment, train, extract) that may run at once.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Threads per extraction batch.
    #[serde(default = "default_extract_workers")]
    pub extract_workers: usize,
    /// Overrides the shipped pricing constants.
    #[serde(default)]
    pub pricing: Option<PathBuf>,
    /// Trainer command; `train|infer <jobdir>` is appended.
    #[serde(default = "default_trainer")]
    pub trainer: Vec<String>,
    #[serde(default)]
    pub llm: LlmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    /// `mock` or `http`.
    #[serde(default = "default_backend")]
    pub backend: String,
    /// Rule table for the mock backend.
    #[serde(default)]
    pub mock_rules: Option<PathBuf>,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_base_url")]
    pub base_url: String,
    #[serde(default = "default_llm_parallelism")]
    pub parallelism: usize,
    /// Requests per second, 0 for unlimited.
    #[serde(default)]
    pub rate_limit: f64,
    #[serde(default)]
    pub models: Option<ModelRoutes>,
}

fn default_port() -> u16 {
    8080
}
fn default_host() -> String {
    "127.0.0.1".into()
}
fn default_data_dir() -> PathBuf {
    PathBuf::from("structa-data")
}
fn default_workers() -> usize {
    2
}
fn default_extract_workers() -> usize {
    4
}
fn default_trainer() -> Vec<String> {
    vec!["trainer-shim".into()]
}
fn default_backend() -> String {
    "mock".into()
}
fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_base_url() -> String {
    "https://api.openai.com/v1".into()
}
fn default_llm_parallelism() -> usize {
    4
}

impl Default for LlmConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl Default for Config {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg: Config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        } else {
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        };
        cfg.check()?;
        Ok(cfg.relative_to(path.parent().unwrap_or(Path::new(""))))
    }

    /// Relative paths in a config file are relative to that file.
    fn relative_to(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        if let Some(p) = self.pricing.as_mut() {
            fix(p);
        }
        if let Some(p) = self.llm.mock_rules.as_mut() {
            fix(p);
        }
        self
    }

    pub fn check(&self) -> Result<(), String> {
        if self.workers == 0 || self.extract_workers == 0 {
            return Err("workers and extract_workers must be at least 1".into());
        }
        if self.trainer.is_empty() {
            return Err("trainer command must not be empty".into());
        }
        if !matches!(self.llm.backend.as_str(), "mock" | "http") {
            return Err(format!("llm.backend must be mock or http, not {:?}", self.llm.backend));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = Config::default();
        assert_eq!(cfg.port, 8080);
        assert_eq!(cfg.llm.backend, "mock");
        let cfg: Config = toml::from_str(
            "port = 9000\ntrainer = [\"python\", \"-m\", \"shim\"]\n[llm]\nbackend = \"http\"\nrate_limit = 2.5\n",
        )
        .unwrap();
        assert_eq!(cfg.port, 9000);
        assert_eq!(cfg.trainer.len(), 3);
        assert_eq!(cfg.llm.rate_limit, 2.5);
        assert!(toml::from_str::<Config>("prot = 1").is_err());
    }

    #[test]
    fn json_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"workers": 0}"#).unwrap();
        assert!(Config::load(&path).unwrap_err().contains("workers"));
        std::fs::write(&path, r#"{"data_dir": "/tmp/x", "llm": {"mock_rules": "rules.json"}}"#).unwrap();
        let cfg = Config::load(&path).unwrap();
        assert_eq!(cfg.data_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.llm.mock_rules, Some(dir.path().join("rules.json")));
    }
}
