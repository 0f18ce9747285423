//! Layered pipeline configuration.
//!
//! Effective values are resolved with the precedence **flag > environment >
//! file > default**. The file layer is TOML mirroring the section/key
//! structure below; the environment layer reads `PERSONA_<SECTION>_<KEY>`
//! (e.g. `PERSONA_GDPO_BETA`); flags are applied last by each subcommand.

use std::path::{Path, PathBuf};

use persona_core::judge::JudgeConfig;
use persona_core::quality::RewardConfig;
use serde::{Deserialize, Serialize};

/// Preference-optimization section. `candidates_per_window` is the sampling
/// width n; `group_size` is the per-step subset G.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdpoSection {
    pub beta: f64,
    pub lambda_kl: f64,
    pub group_size: usize,
    pub candidates_per_window: usize,
    pub epsilon: f64,
    pub lr: f64,
    pub steps: u32,
    pub seed: u64,
    /// Snapshot cadence for trained policies (0 = final state only).
    pub checkpoint_every: u32,
}

impl Default for GdpoSection {
    fn default() -> Self {
        GdpoSection {
            beta: 0.5,
            lambda_kl: 0.005,
            group_size: 4,
            candidates_per_window: 8,
            epsilon: 1e-6,
            lr: 0.1,
            steps: 1000,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

/// Candidate-generation decoding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSection {
    pub temperature: f64,
    pub top_p: f64,
    /// Combined input+output token budget; prompts estimated beyond it are
    /// recorded and warned about, not truncated (the serving side owns
    /// truncation semantics).
    pub max_context: u32,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection { temperature: 0.9, top_p: 0.9, max_context: 30_720 }
    }
}

/// Embedding-service connection and cache location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingsSection {
    pub endpoint: String,
    pub model: String,
    /// Directory for the on-disk vector cache; empty disables caching.
    pub cache_dir: String,
}

impl Default for EmbeddingsSection {
    fn default() -> Self {
        EmbeddingsSection { endpoint: String::new(), model: String::new(), cache_dir: String::new() }
    }
}

/// Chat-model connection for candidate generation and summarization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatSection {
    pub endpoint: String,
    pub model: String,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl Default for ChatSection {
    fn default() -> Self {
        ChatSection { endpoint: String::new(), model: String::new(), max_retries: 2, timeout_secs: 120 }
    }
}

/// Input/output locations. Stage flags override per-file paths; this sets
/// the directory the conventional file names resolve against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    pub data_dir: String,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection { data_dir: "data".to_owned() }
    }
}

/// The full pipeline configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub reward: RewardConfig,
    pub gdpo: GdpoSection,
    pub generation: GenerationSection,
    pub judges: JudgeConfig,
    pub embeddings: EmbeddingsSection,
    pub chat: ChatSection,
    pub paths: PathsSection,
    /// Worker cap for per-user parallel work inside a stage.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            reward: RewardConfig::default(),
            gdpo: GdpoSection::default(),
            generation: GenerationSection::default(),
            judges: JudgeConfig::default(),
            embeddings: EmbeddingsSection::default(),
            chat: ChatSection::default(),
            paths: PathsSection::default(),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config file {path}: {message}")]
    Io { path: String, message: String },
    #[error("config file {path} is not valid TOML: {message}")]
    Toml { path: String, message: String },
    #[error("environment variable {name} has unusable value '{value}': {message}")]
    Env { name: String, value: String, message: String },
    #[error("invalid configuration: {message}")]
    Invalid { message: String },
}

impl PipelineConfig {
    /// Resolves the file and environment layers: defaults, then the TOML
    /// file at `file` (when given), then `PERSONA_*` variables looked up
    /// through `env`. Flags are layered on top by the caller.
    pub fn resolve(
        file: Option<&Path>,
        env: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                toml::from_str(&text).map_err(|e| ConfigError::Toml {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?
            }
            None => PipelineConfig::default(),
        };
        cfg.apply_env(env)?;
        Ok(cfg)
    }

    /// Overrides fields from `PERSONA_<SECTION>_<KEY>` variables.
    pub fn apply_env(&mut self, env: &dyn Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        fn set<T: std::str::FromStr>(
            env: &dyn Fn(&str) -> Option<String>,
            name: &str,
            slot: &mut T,
        ) -> Result<(), ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            if let Some(value) = env(name) {
                *slot = value.parse().map_err(|e: T::Err| ConfigError::Env {
                    name: name.to_owned(),
                    value,
                    message: e.to_string(),
                })?;
            }
            Ok(())
        }

        set(env, "PERSONA_REWARD_LAMBDA_VAR", &mut self.reward.lambda_var)?;
        set(env, "PERSONA_REWARD_E_MIN", &mut self.reward.e_min)?;
        set(env, "PERSONA_REWARD_E_MAX", &mut self.reward.e_max)?;
        set(env, "PERSONA_REWARD_ALPHA1", &mut self.reward.alpha1)?;
        set(env, "PERSONA_REWARD_ALPHA2", &mut self.reward.alpha2)?;
        set(env, "PERSONA_REWARD_ALPHA3", &mut self.reward.alpha3)?;
        set(env, "PERSONA_REWARD_ALPHA4", &mut self.reward.alpha4)?;
        set(env, "PERSONA_REWARD_COV_THRESHOLD", &mut self.reward.cov_threshold)?;
        set(env, "PERSONA_GDPO_BETA", &mut self.gdpo.beta)?;
        set(env, "PERSONA_GDPO_LAMBDA_KL", &mut self.gdpo.lambda_kl)?;
        set(env, "PERSONA_GDPO_GROUP_SIZE", &mut self.gdpo.group_size)?;
        set(env, "PERSONA_GDPO_CANDIDATES_PER_WINDOW", &mut self.gdpo.candidates_per_window)?;
        set(env, "PERSONA_GDPO_EPSILON", &mut self.gdpo.epsilon)?;
        set(env, "PERSONA_GDPO_LR", &mut self.gdpo.lr)?;
        set(env, "PERSONA_GDPO_STEPS", &mut self.gdpo.steps)?;
        set(env, "PERSONA_GDPO_SEED", &mut self.gdpo.seed)?;
        set(env, "PERSONA_GDPO_CHECKPOINT_EVERY", &mut self.gdpo.checkpoint_every)?;
        set(env, "PERSONA_GENERATION_TEMPERATURE", &mut self.generation.temperature)?;
        set(env, "PERSONA_GENERATION_TOP_P", &mut self.generation.top_p)?;
        set(env, "PERSONA_GENERATION_MAX_CONTEXT", &mut self.generation.max_context)?;
        set(env, "PERSONA_JUDGES_ENDPOINT", &mut self.judges.endpoint)?;
        set(env, "PERSONA_JUDGES_MODEL", &mut self.judges.model)?;
        set(env, "PERSONA_JUDGES_MAX_RETRIES", &mut self.judges.max_retries)?;
        set(env, "PERSONA_JUDGES_TEMPERATURE", &mut self.judges.temperature)?;
        set(env, "PERSONA_JUDGES_TIMEOUT_SECS", &mut self.judges.timeout_secs)?;
        set(env, "PERSONA_EMBEDDINGS_ENDPOINT", &mut self.embeddings.endpoint)?;
        set(env, "PERSONA_EMBEDDINGS_MODEL", &mut self.embeddings.model)?;
        set(env, "PERSONA_EMBEDDINGS_CACHE_DIR", &mut self.embeddings.cache_dir)?;
        set(env, "PERSONA_CHAT_ENDPOINT", &mut self.chat.endpoint)?;
        set(env, "PERSONA_CHAT_MODEL", &mut self.chat.model)?;
        set(env, "PERSONA_CHAT_MAX_RETRIES", &mut self.chat.max_retries)?;
        set(env, "PERSONA_CHAT_TIMEOUT_SECS", &mut self.chat.timeout_secs)?;
        set(env, "PERSONA_PATHS_DATA_DIR", &mut self.paths.data_dir)?;
        set(env, "PERSONA_WORKERS", &mut self.workers)?;
        Ok(())
    }

    /// Cross-field checks beyond what each section's own types enforce.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.reward
            .validate()
            .map_err(|e| ConfigError::Invalid { message: e.to_string() })?;
        if self.gdpo.candidates_per_window < self.gdpo.group_size {
            return Err(ConfigError::Invalid {
                message: format!(
                    "candidates_per_window ({}) must be at least group_size ({})",
                    self.gdpo.candidates_per_window, self.gdpo.group_size
                ),
            });
        }
        if self.gdpo.group_size == 0 {
            return Err(ConfigError::Invalid { message: "group_size must be at least 1".into() });
        }
        if !(self.gdpo.epsilon > 0.0) {
            return Err(ConfigError::Invalid { message: "epsilon must be positive".into() });
        }
        if !(self.gdpo.lr > 0.0) {
            return Err(ConfigError::Invalid { message: "lr must be positive".into() });
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid { message: "workers must be at least 1".into() });
        }
        for (value, name) in [
            (self.generation.temperature, "generation.temperature"),
            (self.generation.top_p, "generation.top_p"),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ConfigError::Invalid {
                    message: format!("{name} must be a positive finite number"),
                });
            }
        }
        Ok(())
    }

    /// A conventional artifact path under the configured data directory.
    pub fn data_path(&self, file_name: &str) -> PathBuf {
        Path::new(&self.paths.data_dir).join(file_name)
    }
}

/// Mirrors the trained-policy section into the core trainer's config shape.
pub fn toy_train_config(cfg: &PipelineConfig) -> persona_core::gdpo::ToyTrainConfig {
    persona_core::gdpo::ToyTrainConfig {
        steps: cfg.gdpo.steps,
        lr: cfg.gdpo.lr,
        beta: cfg.gdpo.beta,
        lambda_kl: cfg.gdpo.lambda_kl,
        group_size: cfg.gdpo.group_size,
        seed: cfg.gdpo.seed,
        epsilon: cfg.gdpo.epsilon,
        checkpoint_every: cfg.gdpo.checkpoint_every,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::io::Write;

    #[test]
    fn defaults_reproduce_the_training_recipe() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.gdpo.beta, 0.5);
        assert_eq!(cfg.gdpo.lambda_kl, 0.005);
        assert_eq!(cfg.gdpo.group_size, 4);
        assert_eq!(cfg.gdpo.candidates_per_window, 8);
        assert_eq!(cfg.generation.temperature, 0.9);
        assert_eq!(cfg.generation.top_p, 0.9);
        assert_eq!(cfg.generation.max_context, 30_720);
        assert_eq!(cfg.reward, RewardConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn file_overrides_defaults_and_env_overrides_file() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(
            file,
            "[gdpo]\nbeta = 0.25\nseed = 7\n\n[generation]\ntemperature = 0.5\n"
        )
        .unwrap();
        let env: HashMap<&str, &str> =
            HashMap::from([("PERSONA_GDPO_BETA", "0.75"), ("PERSONA_WORKERS", "3")]);
        let lookup = move |name: &str| env.get(name).map(|v| v.to_string());
        let cfg = PipelineConfig::resolve(Some(file.path()), &lookup).unwrap();
        assert_eq!(cfg.gdpo.beta, 0.75, "env beats file");
        assert_eq!(cfg.gdpo.seed, 7, "file beats default");
        assert_eq!(cfg.generation.temperature, 0.5);
        assert_eq!(cfg.workers, 3);
        assert_eq!(cfg.gdpo.lambda_kl, 0.005, "untouched keys keep defaults");
    }

    #[test]
    fn unusable_env_values_and_missing_files_error() {
        let lookup = |name: &str| {
            (name == "PERSONA_GDPO_STEPS").then(|| "not-a-number".to_string())
        };
        let err = PipelineConfig::resolve(None, &lookup).unwrap_err();
        assert!(matches!(err, ConfigError::Env { .. }), "{err}");
        let missing = Path::new("/nonexistent/persona-pipeline.toml");
        let none = |_: &str| None;
        assert!(matches!(
            PipelineConfig::resolve(Some(missing), &none).unwrap_err(),
            ConfigError::Io { .. }
        ));
    }

    #[test]
    fn validation_rejects_a_group_wider_than_the_pool() {
        let mut cfg = PipelineConfig::default();
        cfg.gdpo.candidates_per_window = 3;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("group_size"), "{err}");
    }
}
