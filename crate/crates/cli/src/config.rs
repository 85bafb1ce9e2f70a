use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use zsl_kep_core::bm25::Bm25Params;
use zsl_kep_core::llm_gateway::{GatewayConfig, GenerationSettings};
use zsl_kep_core::pipeline::PipelineConfig;
use zsl_kep_core::prompts::PromptOverrides;

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Http,
    Mock,
}

/// Everything a run needs. Loaded from TOML; command-line flags override
/// individual fields afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claims_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    pub backend: BackendKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock_script_path: Option<PathBuf>,
    pub claim_top_k: usize,
    pub keypoint_top_k: usize,
    pub truncate_claim: usize,
    pub truncate_keypoint: usize,
    pub k1: f64,
    pub b: f64,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens_keypoints: u32,
    pub max_tokens_prediction: u32,
    pub workers: usize,
    /// Prompts estimated above this many whitespace tokens are treated as a
    /// context overflow without being sent.
    pub prompt_budget_tokens: usize,
    /// Attempts per call when the backend reports rate limiting.
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    /// Minimum spacing between outbound calls across all workers.
    pub min_interval_ms: u64,
    pub request_timeout_secs: u64,
    pub prompt_overrides: PromptOverrides,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        let gateway = GatewayConfig::default();
        RunConfig {
            claims_path: None,
            store_dir: None,
            output_path: None,
            backend: BackendKind::default(),
            base_url: None,
            model_name: None,
            mock_script_path: None,
            claim_top_k: pipeline.claim_top_k,
            keypoint_top_k: pipeline.keypoint_top_k,
            truncate_claim: pipeline.truncate_claim,
            truncate_keypoint: pipeline.truncate_keypoint,
            k1: pipeline.bm25.k1,
            b: pipeline.bm25.b,
            temperature: pipeline.prediction_generation.temperature,
            top_p: pipeline.prediction_generation.top_p,
            max_tokens_keypoints: pipeline.keypoint_generation.max_new_tokens,
            max_tokens_prediction: pipeline.prediction_generation.max_new_tokens,
            workers: pipeline.workers,
            prompt_budget_tokens: gateway.prompt_budget_tokens,
            max_attempts: gateway.max_attempts,
            backoff_base_ms: gateway.backoff_base.as_millis() as u64,
            backoff_max_ms: gateway.backoff_max.as_millis() as u64,
            min_interval_ms: gateway.min_interval.as_millis() as u64,
            request_timeout_secs: 120,
            prompt_overrides: PromptOverrides::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct ConfigFlags {
    /// Claims file (JSON array).
    #[arg(long = "claims")]
    pub claims_path: Option<PathBuf>,
    /// Directory holding `{claim_id}.json` knowledge stores.
    #[arg(long)]
    pub store_dir: Option<PathBuf>,
    /// Predictions file to write.
    #[arg(long = "output")]
    pub output_path: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long = "model")]
    pub model_name: Option<String>,
    #[arg(long = "mock-script")]
    pub mock_script_path: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub claim_top_k: Option<usize>,
    #[arg(long)]
    pub keypoint_top_k: Option<usize>,
    #[arg(long)]
    pub truncate_claim: Option<usize>,
    #[arg(long)]
    pub truncate_keypoint: Option<usize>,
}

impl RunConfig {
    /// Parses a TOML config. Relative paths are taken relative to the file's
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.claims_path);
        fix(&mut self.store_dir);
        fix(&mut self.output_path);
        fix(&mut self.mock_script_path);
        let o = &mut self.prompt_overrides;
        fix(&mut o.keypoints_system);
        fix(&mut o.keypoints_user);
        fix(&mut o.prediction_system);
        fix(&mut o.prediction_user);
    }

    /// Loads `path` if given (defaults otherwise) and applies `flags`.
    pub fn resolve(path: Option<&Path>, flags: &ConfigFlags) -> Result<Self, CliError> {
        let mut config = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        config.apply(flags);
        Ok(config)
    }

    pub fn apply(&mut self, flags: &ConfigFlags) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &flags.$field {
                    self.$field = v.clone().into();
                })*
            };
        }
        set!(claims_path, store_dir, output_path, base_url, model_name, mock_script_path);
        set!(backend, workers, claim_top_k, keypoint_top_k, truncate_claim, truncate_keypoint);
    }

    /// Checks the fields every command needs. Output-related fields are
    /// checked separately by the commands that write files.
    pub fn validate(&self) -> Result<(), CliError> {
        self.validate_offline()?;
        match self.backend {
            BackendKind::Http => {
                require(&self.base_url, "base_url", "backend = \"http\"")?;
                require(&self.model_name, "model_name", "backend = \"http\"")?;
            }
            BackendKind::Mock => require(&self.mock_script_path, "mock_script_path", "backend = \"mock\"")?,
        }
        if self.max_attempts == 0 {
            return Err(CliError::Config("max_attempts must be at least 1".into()));
        }
        if self.prompt_budget_tokens == 0 {
            return Err(CliError::Config("prompt_budget_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Everything except the backend settings.
    pub fn validate_offline(&self) -> Result<(), CliError> {
        self.pipeline_config()
            .validate()
            .map_err(|e| CliError::Config(strip_prefix(e)))?;
        require(&self.claims_path, "claims_path", "every command")?;
        require(&self.store_dir, "store_dir", "every command")?;
        Ok(())
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let sampling = |max_new_tokens| GenerationSettings {
            temperature: self.temperature,
            top_p: self.top_p,
            max_new_tokens,
        };
        PipelineConfig {
            claim_top_k: self.claim_top_k,
            keypoint_top_k: self.keypoint_top_k,
            truncate_claim: self.truncate_claim,
            truncate_keypoint: self.truncate_keypoint,
            bm25: Bm25Params { k1: self.k1, b: self.b },
            keypoint_generation: sampling(self.max_tokens_keypoints),
            prediction_generation: sampling(self.max_tokens_prediction),
            workers: self.workers,
        }
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            max_attempts: self.max_attempts,
            backoff_base: Duration::from_millis(self.backoff_base_ms),
            backoff_max: Duration::from_millis(self.backoff_max_ms),
            prompt_budget_tokens: self.prompt_budget_tokens,
            min_interval: Duration::from_millis(self.min_interval_ms),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Path of the knowledge store for `claim_id`.
    pub fn store_path(&self, claim_id: usize) -> PathBuf {
        self.store_dir
            .as_deref()
            .unwrap_or(Path::new("."))
            .join(format!("{claim_id}.json"))
    }
}

fn require<T>(value: &Option<T>, field: &str, context: &str) -> Result<(), CliError> {
    match value {
        Some(_) => Ok(()),
        None => Err(CliError::Config(format!("`{field}` is required for {context}"))),
    }
}

fn strip_prefix(e: zsl_kep_core::Error) -> String {
    match e {
        zsl_kep_core::Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_config() -> RunConfig {
        RunConfig {
            claims_path: Some("c.json".into()),
            store_dir: Some("stores".into()),
            backend: BackendKind::Mock,
            mock_script_path: Some("m.json".into()),
            ..RunConfig::default()
        }
    }

    #[test]
    fn defaults_match_pipeline() {
        let c = RunConfig::default();
        assert_eq!(c.pipeline_config(), PipelineConfig::default());
        assert_eq!((c.claim_top_k, c.keypoint_top_k, c.truncate_claim, c.truncate_keypoint), (70, 12, 55, 9));
        assert_eq!((c.temperature, c.top_p), (0.0, 0.8));
        assert_eq!((c.max_tokens_keypoints, c.max_tokens_prediction, c.workers), (512, 1024, 4));
    }

    #[test]
    fn toml_round_trip() {
        let c = mock_config();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let printed = RunConfig::default().to_toml();
        for line in ["claim_top_k = 70", "keypoint_top_k = 12", "truncate_claim = 55", "k1 = 1.2", "top_p = 0.8"] {
            assert!(printed.contains(line), "{line} missing from:\n{printed}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("top_kk = 3").is_err());
    }

    #[test]
    fn flags_win() {
        let mut c = mock_config();
        c.apply(&ConfigFlags {
            workers: Some(9),
            backend: Some(BackendKind::Http),
            ..Default::default()
        });
        assert_eq!(c.workers, 9);
        assert_eq!(c.backend, BackendKind::Http);
        assert_eq!(c.claim_top_k, 70);
    }

    #[test]
    fn validation_names_fields() {
        mock_config().validate().unwrap();
        let err = RunConfig { truncate_claim: 80, ..mock_config() }.validate().unwrap_err().to_string();
        assert!(err.contains("truncate_claim") && err.contains("claim_top_k"), "{err}");
        let err = RunConfig { backend: BackendKind::Http, ..mock_config() }.validate().unwrap_err().to_string();
        assert!(err.contains("base_url"), "{err}");
        let err = RunConfig { mock_script_path: None, ..mock_config() }.validate().unwrap_err().to_string();
        assert!(err.contains("mock_script_path"), "{err}");
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "claims_path = \"claims.json\"\nstore_dir = \"/abs/stores\"\n").unwrap();
        let c = RunConfig::from_file(&path).unwrap();
        assert_eq!(c.claims_path.unwrap(), dir.path().join("claims.json"));
        assert_eq!(c.store_dir.unwrap(), PathBuf::from("/abs/stores"));
    }
}
