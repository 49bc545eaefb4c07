//! Run configuration: one TOML file with `[paths]`, `[model]`, `[synth]`,
//! `[train]` and `[track]` tables. Every key is optional and falls back to
//! the library defaults.
//!
//! ```toml
//! [paths]
//! cache_dir = "cache"
//!
//! [model]
//! channels = 64
//! n_points = 64
//!
//! [train]
//! steps = 500
//! lr = 0.001
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hvtrack::model::ModelConfig;
use hvtrack::synth::SynthConfig;
use hvtrack::tracker::TrackOptions;
use hvtrack::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Environment variable that overrides `paths.cache_dir`.
pub const CACHE_ENV: &str = "HVTRACK_CACHE_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Tracklet cache read by `train` and `track`.
    pub data: Option<PathBuf>,
    /// Root for caches written by `build-hv` and `synth` when `--out` is omitted.
    pub cache_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

/// Synthetic generator settings plus the number of tracklets. Unknown keys
/// are rejected by the flattened `SynthConfig`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub count: usize,
    #[serde(flatten)]
    pub scene: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { count: 8, scene: SynthConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub synth: SynthSection,
    pub train: TrainConfig,
    pub track: TrackOptions,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Loads `path`, or the defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.synth.scene.validate()?;
        self.train.validate()?;
        if self.synth.count == 0 {
            bail!("synth.count must be at least 1");
        }
        if !(1..=8).contains(&self.track.k_test) {
            bail!("track.k_test {} outside 1..=8", self.track.k_test);
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// `$HVTRACK_CACHE_DIR`, else `paths.cache_dir`, else `./cache`.
    pub fn cache_dir(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .or_else(|| self.paths.cache_dir.clone())
            .unwrap_or_else(|| PathBuf::from("cache"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.model.channels = 64;
        c.synth.count = 3;
        c.synth.scene.n_frames = 12;
        c.paths.data = Some("cache/synth".into());
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml_str("[model]\nchanels = 3\n").is_err());
        assert!(RunConfig::from_toml_str("[model]\nchannels = 30\nheads = 4\n").is_err());
        assert!(RunConfig::from_toml_str("[track]\nk_test = 9\n").is_err());
    }
}
