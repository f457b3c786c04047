//! Run configuration file.
//!
//! ```toml
//! cache_dir = "/data/i2t2i-cache"
//!
//! [datasets]
//! flickr8k = "/data/flickr8k"
//! foil = "/data/foil/foilv1.0_test_2017.json"
//!
//! [policies]
//! failure = "skip_and_log"
//! workers = 8
//! seed = 0
//! tie_policy = "strict"
//!
//! [registry.generators.sd3-local]
//! name = "stable-diffusion-3-medium"
//! version = "1"
//! provider = "remote"
//! params = { endpoint = "http://10.0.0.5:8080", steps = 28, guidance = 7.0 }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use i2t2i_core::backends::registry::{ConfigFormat, Registry};
use i2t2i_core::pipeline::FailurePolicy;
use i2t2i_core::protocols::TiePolicy;
use i2t2i_core::{Error, Result};
use serde::Deserialize;

pub const DEFAULT_CACHE_DIR: &str = ".i2t2i-cache";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policies {
    #[serde(default)]
    pub failure: FailurePolicy,
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pairing_seed: u64,
    #[serde(default)]
    pub tie_policy: TiePolicy,
    /// Lenient ingestion drops and reports bad rows instead of failing.
    #[serde(default)]
    pub lenient: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub datasets: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub policies: Policies,
    /// Merged over the built-in registry.
    #[serde(default)]
    pub registry: Registry,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |e: String| Error::Configuration(format!("{}: {e}", path.display()));
        match ConfigFormat::from_path(path) {
            ConfigFormat::Json => serde_json::from_str(&text).map_err(|e| bad(e.to_string())),
            ConfigFormat::Toml => toml::from_str(&text).map_err(|e| bad(e.to_string())),
        }
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).transpose().map(Option::unwrap_or_default)
    }

    pub fn registry(&self) -> Registry {
        Registry::builtin().merged(self.registry.clone())
    }

    pub fn cache_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.cache_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
    }

    pub fn dataset(&self, name: &str) -> Option<&Path> {
        self.datasets.get(name).map(PathBuf::as_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use i2t2i_core::model::BackendKind;

    #[test]
    fn toml_config_merges_registry() {
        let cfg: Config = toml::from_str(
            r#"
            cache_dir = "/tmp/c"
            [datasets]
            flickr8k = "/data/f8k"
            [policies]
            failure = "fail_fast"
            tie_policy = "half_credit"
            [registry.encoders.mine]
            name = "pixel-stub"
            version = "1"
            provider = "stub"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.policies.failure, FailurePolicy::FailFast);
        assert_eq!(cfg.policies.tie_policy, TiePolicy::HalfCredit);
        assert_eq!(cfg.dataset("flickr8k"), Some(Path::new("/data/f8k")));
        let reg = cfg.registry();
        assert!(reg.names(BackendKind::Encoder).contains(&"mine"));
        assert!(reg.names(BackendKind::Encoder).contains(&"dinov2-vitb14"));
        assert_eq!(cfg.cache_dir(None), PathBuf::from("/tmp/c"));
        assert_eq!(cfg.cache_dir(Some(Path::new("x"))), PathBuf::from("x"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("cache = 1").is_err());
    }
}
