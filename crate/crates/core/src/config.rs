//! TOML application config. Relative paths resolve against the config file's
//! directory; omitted corpus and rules fall back to the bundled data.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manual::{Corpus, Document, ManualError};
use crate::pipeline::{external_provider, EndpointConfig, Engine, InputSetting, PipelineError};
use crate::situation::{load_rules, SituationError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Manual {
        path: PathBuf,
        #[source]
        source: ManualError,
    },
    #[error("{path}: {source}")]
    Rules {
        path: PathBuf,
        #[source]
        source: SituationError,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProviderKind {
    #[default]
    RuleBased,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub corpus_paths: Vec<PathBuf>,
    #[serde(default)]
    pub rules_path: Option<PathBuf>,
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    #[serde(default)]
    pub provider: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_setting")]
    pub default_setting: InputSetting,
}

fn default_port() -> u16 {
    8080
}

fn default_setting() -> InputSetting {
    InputSetting::SnapshotPlusInstruction
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            corpus_paths: Vec::new(),
            rules_path: None,
            dataset_path: None,
            provider: ProviderKind::RuleBased,
            endpoint: None,
            port: default_port(),
            default_setting: default_setting(),
        }
    }
}

pub(crate) fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: AppConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Load a config file and make its relative paths absolute.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut config = Self::parse(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.corpus_paths.iter_mut().for_each(resolve);
        config.rules_path.iter_mut().for_each(resolve);
        config.dataset_path.iter_mut().for_each(resolve);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.port == 0 {
            return Err(ConfigError::Invalid("port must be in 1..=65535".into()));
        }
        if self.provider == ProviderKind::External && self.endpoint.is_none() {
            return Err(ConfigError::Invalid(
                "provider EXTERNAL requires an [endpoint] table".into(),
            ));
        }
        Ok(())
    }

    pub fn load_corpus(&self) -> Result<Corpus, ConfigError> {
        if self.corpus_paths.is_empty() {
            return Ok(crate::bundled::corpus());
        }
        let documents = self
            .corpus_paths
            .iter()
            .map(|path| {
                Document::parse(read(path)?).map_err(|source| ConfigError::Manual {
                    path: path.clone(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Corpus::new(documents))
    }

    /// Build the engine this config describes.
    pub fn engine(&self) -> Result<Engine, ConfigError> {
        let corpus = self.load_corpus()?;
        let rules = match &self.rules_path {
            None => crate::bundled::rules(),
            Some(path) => load_rules(&read(path)?).map_err(|source| ConfigError::Rules {
                path: path.clone(),
                source,
            })?,
        };
        let engine = Engine::new(corpus, rules)?;
        Ok(match (self.provider, &self.endpoint) {
            (ProviderKind::External, Some(endpoint)) => {
                let provider = external_provider(endpoint.clone(), engine.vocabulary());
                engine.with_provider(Arc::new(provider))
            }
            _ => engine,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = AppConfig::parse("").unwrap();
        assert_eq!(c, AppConfig::default());
        assert!(matches!(
            AppConfig::parse("port = 0"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            AppConfig::parse("provider = \"EXTERNAL\""),
            Err(ConfigError::Invalid(_))
        ));
        let ext = AppConfig::parse(
            "provider = \"EXTERNAL\"\n[endpoint]\nbase_url = \"http://127.0.0.1:9/\"\n",
        )
        .unwrap();
        assert_eq!(ext.endpoint.unwrap().timeout_ms, 10_000);
        assert!(AppConfig::parse("bogus = 1").is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vcop.toml");
        std::fs::write(
            &path,
            "corpus_paths = [\"m.qrh\"]\nrules_path = \"/abs/rules.txt\"\n",
        )
        .unwrap();
        let c = AppConfig::load(&path).unwrap();
        assert_eq!(c.corpus_paths, [dir.path().join("m.qrh")]);
        assert_eq!(c.rules_path.unwrap(), PathBuf::from("/abs/rules.txt"));
    }

    #[test]
    fn bundled_fallback_engine() {
        let engine = AppConfig::default().engine().unwrap();
        assert_eq!(engine.corpus().procedure_count(), 50);
        assert_eq!(engine.provider().name(), "rule-based");
    }
}
