//! Run configuration, layered as built-in defaults < config file < flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use szz_core::classic::DEFAULT_VSZZ_THRESHOLD;
use szz_core::llm::LiveConfig;
use szz_core::pipeline::PipelineConfig;
use szz_core::repo::DEFAULT_CONTEXT_LINES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Replay,
    Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Table,
}

/// Every setting, each optional so that layers can be merged. Flags and the
/// TOML file share these names (flags use dashes, the file underscores).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    /// Model backend.
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Model name passed to the live endpoint.
    #[arg(long)]
    pub model: Option<String>,
    /// OpenAI-compatible endpoint base URL.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Context lines around each diff hunk.
    #[arg(long)]
    pub context_lines: Option<u32>,
    /// Root-cause critique rounds.
    #[arg(long)]
    pub budget: Option<u32>,
    /// Tool executions allowed per agent call.
    #[arg(long)]
    pub max_tool_rounds: Option<u32>,
    /// Backtracking steps per anchor.
    #[arg(long)]
    pub max_depth: Option<u32>,
    /// Line-similarity threshold for V-SZZ.
    #[arg(long)]
    pub vszz_threshold: Option<f64>,
    /// Cases evaluated concurrently.
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Directory for repository clones.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Transcript file (trace, record) or directory of per-case transcripts (eval).
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
    /// Require replayed requests to follow the transcript order exactly.
    #[arg(long)]
    pub strict_replay: Option<bool>,
    /// Completion token cap per request.
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Live requests in flight at once.
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Live requests per minute.
    #[arg(long)]
    pub requests_per_minute: Option<u32>,
}

impl ConfigLayer {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("parsing {}: {e}", path.display()))
    }

    /// `self` with unset fields taken from `lower`.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            backend: self.backend.or(lower.backend),
            model: self.model.or(lower.model),
            base_url: self.base_url.or(lower.base_url),
            context_lines: self.context_lines.or(lower.context_lines),
            budget: self.budget.or(lower.budget),
            max_tool_rounds: self.max_tool_rounds.or(lower.max_tool_rounds),
            max_depth: self.max_depth.or(lower.max_depth),
            vszz_threshold: self.vszz_threshold.or(lower.vszz_threshold),
            parallelism: self.parallelism.or(lower.parallelism),
            cache_dir: self.cache_dir.or(lower.cache_dir),
            transcript: self.transcript.or(lower.transcript),
            prompts_dir: self.prompts_dir.or(lower.prompts_dir),
            strict_replay: self.strict_replay.or(lower.strict_replay),
            max_tokens: self.max_tokens.or(lower.max_tokens),
            max_in_flight: self.max_in_flight.or(lower.max_in_flight),
            requests_per_minute: self.requests_per_minute.or(lower.requests_per_minute),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub live: LiveConfig,
    pub context_lines: u32,
    pub pipeline: PipelineConfig,
    pub vszz_threshold: f64,
    pub parallelism: usize,
    pub cache_dir: PathBuf,
    pub transcript: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub strict_replay: bool,
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl RunConfig {
    pub fn resolve(layer: ConfigLayer) -> Result<Self, String> {
        let defaults = PipelineConfig::default();
        let mut live = LiveConfig::default();
        if let Some(m) = layer.model {
            live.model = m;
        }
        if let Some(u) = layer.base_url {
            live.base_url = u;
        }
        if layer.max_tokens.is_some() {
            live.max_tokens = layer.max_tokens;
        }
        if let Some(n) = layer.max_in_flight {
            live.max_in_flight = n;
        }
        if let Some(n) = layer.requests_per_minute {
            live.requests_per_minute = n;
        }
        let config = RunConfig {
            backend: layer.backend.unwrap_or(BackendKind::Live),
            live,
            context_lines: layer.context_lines.unwrap_or(DEFAULT_CONTEXT_LINES),
            pipeline: PipelineConfig {
                budget: layer.budget.unwrap_or(defaults.budget),
                max_tool_rounds: layer.max_tool_rounds.unwrap_or(defaults.max_tool_rounds),
                max_depth: layer.max_depth.unwrap_or(defaults.max_depth),
            },
            vszz_threshold: layer.vszz_threshold.unwrap_or(DEFAULT_VSZZ_THRESHOLD),
            parallelism: layer.parallelism.unwrap_or_else(default_parallelism),
            cache_dir: layer.cache_dir.unwrap_or_else(|| PathBuf::from(".szz-cache")),
            transcript: layer.transcript,
            prompts_dir: layer.prompts_dir,
            strict_replay: layer.strict_replay.unwrap_or(true),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), String> {
        if self.pipeline.budget < 1 {
            return Err("budget must be at least 1".into());
        }
        if self.pipeline.max_depth < 1 {
            return Err("max-depth must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.vszz_threshold) {
            return Err("vszz-threshold must lie in [0, 1]".into());
        }
        if self.parallelism < 1 {
            return Err("parallelism must be at least 1".into());
        }
        if self.live.max_in_flight < 1 || self.live.requests_per_minute < 1 {
            return Err("max-in-flight and requests-per-minute must be at least 1".into());
        }
        if matches!(self.backend, BackendKind::Replay | BackendKind::Record) && self.transcript.is_none() {
            return Err("replay and record backends need --transcript".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file: ConfigLayer = toml::from_str("budget = 5\nmax_depth = 9\nmodel = \"m-file\"").unwrap();
        let flags = ConfigLayer {
            budget: Some(2),
            ..ConfigLayer::default()
        };
        let cfg = RunConfig::resolve(flags.over(file)).unwrap();
        assert_eq!(cfg.pipeline.budget, 2);
        assert_eq!(cfg.pipeline.max_depth, 9);
        assert_eq!(cfg.live.model, "m-file");
        assert_eq!(cfg.context_lines, 5);
        assert_eq!(cfg.pipeline.max_tool_rounds, 6);
        assert_eq!(cfg.vszz_threshold, 0.75);
    }

    #[test]
    fn every_flag_has_a_file_key() {
        let full = ConfigLayer {
            backend: Some(BackendKind::Replay),
            model: Some("m".into()),
            base_url: Some("u".into()),
            context_lines: Some(1),
            budget: Some(1),
            max_tool_rounds: Some(1),
            max_depth: Some(1),
            vszz_threshold: Some(0.5),
            parallelism: Some(1),
            cache_dir: Some("c".into()),
            transcript: Some("t".into()),
            prompts_dir: Some("p".into()),
            strict_replay: Some(false),
            max_tokens: Some(1),
            max_in_flight: Some(1),
            requests_per_minute: Some(1),
        };
        let text = toml::to_string(&full).unwrap();
        let back: ConfigLayer = toml::from_str(&text).unwrap();
        assert_eq!(back, full);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = |layer: ConfigLayer| RunConfig::resolve(layer).is_err();
        assert!(bad(ConfigLayer { budget: Some(0), ..Default::default() }));
        assert!(bad(ConfigLayer { vszz_threshold: Some(1.5), ..Default::default() }));
        assert!(bad(ConfigLayer { backend: Some(BackendKind::Replay), ..Default::default() }));
        assert!(toml::from_str::<ConfigLayer>("no_such_key = 1").is_err());
    }
}
