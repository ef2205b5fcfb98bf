//! Run configuration: built-in defaults, then a TOML file, then
//! `TASKCHECK_*` environment variables, then command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use taskcheck::sifta::SiftaConfig;

pub const ENV_PREFIX: &str = "TASKCHECK_";
pub const DEFAULT_TOKEN_ENV: &str = "TASKCHECK_API_KEY";

/// One source of settings. Unset fields leave lower layers alone.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Layer {
    pub out: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
    pub mock: Option<bool>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub token_env: Option<String>,
    pub request_timeout: Option<u64>,
    pub task_timeout: Option<u64>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub histogram_threshold: Option<usize>,
    pub sifta: Option<SiftaConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackendChoice {
    Unset,
    Mock { transcripts: PathBuf },
    Live { base_url: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    pub prompts: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub backend: BackendChoice,
    pub model: Option<String>,
    pub token_env: String,
    pub request_timeout: u64,
    /// Overrides every task's own timeout when set.
    pub task_timeout: Option<u64>,
    pub parallelism: usize,
    /// Overrides error-config and optimizer seeds when set.
    pub seed: Option<u64>,
    pub histogram_threshold: Option<usize>,
    pub sifta: SiftaConfig,
}

impl Layer {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, String> {
        let layer: Layer = toml::from_str(text).map_err(|e| format!("{}: {e}", origin.display()))?;
        layer.check(&origin.display().to_string())?;
        Ok(layer)
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text, path)
    }

    /// Reads `TASKCHECK_<FIELD>` entries out of `vars`.
    pub fn from_env(vars: &BTreeMap<String, String>) -> Result<Self, String> {
        let get = |k: &str| vars.get(&format!("{ENV_PREFIX}{k}")).filter(|v| !v.is_empty());
        let path = |k: &str| get(k).map(PathBuf::from);
        let text = |k: &str| get(k).cloned();
        let layer = Layer {
            out: path("OUT"),
            prompts: path("PROMPTS"),
            cache: path("CACHE"),
            transcripts: path("TRANSCRIPTS"),
            mock: get("MOCK").map(|v| parse_flag(v)).transpose()?,
            base_url: text("BASE_URL"),
            model: text("MODEL"),
            token_env: text("TOKEN_ENV"),
            request_timeout: parse_env(&get, "REQUEST_TIMEOUT")?,
            task_timeout: parse_env(&get, "TASK_TIMEOUT")?,
            parallelism: parse_env(&get, "PARALLELISM")?,
            seed: parse_env(&get, "SEED")?,
            histogram_threshold: parse_env(&get, "HISTOGRAM_THRESHOLD")?,
            sifta: None,
        };
        layer.check("environment")?;
        Ok(layer)
    }

    pub fn check(&self, origin: &str) -> Result<(), String> {
        if self.mock == Some(true) && self.base_url.is_some() {
            return Err(format!("{origin}: mock and base_url are mutually exclusive"));
        }
        if self.parallelism == Some(0) {
            return Err(format!("{origin}: parallelism must be positive"));
        }
        Ok(())
    }

    /// `self` over `lower`. Choosing one backend kind clears the other.
    pub fn over(self, lower: Layer) -> Layer {
        let mut mock = self.mock.or(lower.mock);
        let mut base_url = self.base_url.or(lower.base_url);
        if self.mock == Some(true) {
            base_url = None;
        } else if base_url.is_some() && mock == Some(true) {
            mock = Some(false);
        }
        Layer {
            out: self.out.or(lower.out),
            prompts: self.prompts.or(lower.prompts),
            cache: self.cache.or(lower.cache),
            transcripts: self.transcripts.or(lower.transcripts),
            mock,
            base_url,
            model: self.model.or(lower.model),
            token_env: self.token_env.or(lower.token_env),
            request_timeout: self.request_timeout.or(lower.request_timeout),
            task_timeout: self.task_timeout.or(lower.task_timeout),
            parallelism: self.parallelism.or(lower.parallelism),
            seed: self.seed.or(lower.seed),
            histogram_threshold: self.histogram_threshold.or(lower.histogram_threshold),
            sifta: self.sifta.or(lower.sifta),
        }
    }

    pub fn resolve(self) -> Result<RunConfig, String> {
        let backend = match (self.mock.unwrap_or(false), self.base_url) {
            (true, _) => match self.transcripts {
                Some(transcripts) => BackendChoice::Mock { transcripts },
                None => return Err("the mock backend needs a transcripts directory".into()),
            },
            (false, Some(base_url)) => BackendChoice::Live { base_url },
            (false, None) => BackendChoice::Unset,
        };
        let sifta = self.sifta.unwrap_or_default();
        let sifta = SiftaConfig {
            seed: self.seed.unwrap_or(sifta.seed),
            ..sifta
        };
        sifta.validate().map_err(|e| e.to_string())?;
        Ok(RunConfig {
            out: self.out.unwrap_or_else(|| PathBuf::from("taskcheck-out")),
            prompts: self.prompts,
            cache: self.cache,
            backend,
            model: self.model,
            token_env: self.token_env.unwrap_or_else(|| DEFAULT_TOKEN_ENV.into()),
            request_timeout: self.request_timeout.unwrap_or(120),
            task_timeout: self.task_timeout,
            parallelism: self.parallelism.unwrap_or(4),
            seed: self.seed,
            histogram_threshold: self.histogram_threshold,
            sifta,
        })
    }
}

fn parse_flag(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(format!("{ENV_PREFIX}MOCK: expected a boolean, got {v:?}")),
    }
}

fn parse_env<'a, T: FromStr>(get: &impl Fn(&str) -> Option<&'a String>, key: &str) -> Result<Option<T>, String>
where
    T::Err: std::fmt::Display,
{
    get(key)
        .map(|v| v.parse::<T>().map_err(|e| format!("{ENV_PREFIX}{key}={v:?}: {e}")))
        .transpose()
}
