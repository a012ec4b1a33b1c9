//! Toolkit configuration, read from TOML.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use vaxtract_core::annotation::StoreConfig;
use vaxtract_core::lexicon::LexiconError;
use vaxtract_core::llm::ModelEndpoint;
use vaxtract_core::rules::RuleConfig;
use vaxtract_core::Lexicon;

pub const CONFIG_ENV: &str = "VAXTRACT_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{what} {path} does not exist")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("listen address {0:?} is not host:port")]
    BadListen(String),
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error("lexicon {path}: {source}")]
    Lexicon { path: PathBuf, source: LexiconError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    /// Custom lexicon JSON; the built-in lexicon is used when absent.
    pub lexicon_path: Option<PathBuf>,
    /// Model endpoint; without one, extraction defaults to the rule engine.
    pub endpoint: Option<ModelEndpoint>,
    pub rules: RuleConfig,
    pub store_path: PathBuf,
    pub store: StoreConfig,
    pub listen: String,
    pub ui_assets: Option<PathBuf>,
    /// Static bearer token required on /api routes when set.
    pub api_token: Option<String>,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        ToolkitConfig {
            lexicon_path: None,
            endpoint: None,
            rules: RuleConfig::default(),
            store_path: PathBuf::from("annotation-store"),
            store: StoreConfig::default(),
            listen: "127.0.0.1:8080".to_string(),
            ui_assets: None,
            api_token: None,
        }
    }
}

impl ToolkitConfig {
    /// Parses TOML. Relative paths are resolved against `base`.
    pub fn from_toml_str(src: &str, origin: &Path, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ToolkitConfig = toml::from_str(src).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.lexicon_path.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.ui_assets.as_mut() {
            rebase(p);
        }
        rebase(&mut cfg.store_path);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&src, path, base)
    }

    /// The config named by the flag, else by `VAXTRACT_CONFIG`, else defaults.
    pub fn resolve(flag: Option<&Path>) -> Result<Self, ConfigError> {
        match flag {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn listen_addr(&self) -> Result<SocketAddr, ConfigError> {
        self.listen
            .parse()
            .map_err(|_| ConfigError::BadListen(self.listen.clone()))
    }

    /// Checks everything that can be checked before serving.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(p) = &self.lexicon_path {
            if !p.is_file() {
                return Err(ConfigError::MissingPath {
                    what: "lexicon",
                    path: p.clone(),
                });
            }
        }
        if let Some(p) = &self.ui_assets {
            if !p.is_dir() {
                return Err(ConfigError::MissingPath {
                    what: "ui asset directory",
                    path: p.clone(),
                });
            }
        }
        if let Some(e) = &self.endpoint {
            e.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let f = self.store.second_opinion_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(ConfigError::Invalid(format!(
                "second_opinion_fraction {f} is outside [0, 1]"
            )));
        }
        if self.store.lease_ttl_secs == 0 {
            return Err(ConfigError::Invalid("lease_ttl_secs must be positive".into()));
        }
        if self.rules.schedule_tolerance_weeks < 0.0 {
            return Err(ConfigError::Invalid(
                "schedule_tolerance_weeks must not be negative".into(),
            ));
        }
        self.listen_addr()?;
        Ok(())
    }

    pub fn load_lexicon(&self) -> Result<Lexicon, ConfigError> {
        match &self.lexicon_path {
            None => Ok(Lexicon::builtin()),
            Some(p) => {
                let file = std::fs::File::open(p).map_err(|source| ConfigError::Read {
                    path: p.clone(),
                    source,
                })?;
                Lexicon::from_reader(file).map_err(|source| ConfigError::Lexicon {
                    path: p.clone(),
                    source,
                })
            }
        }
    }
}
