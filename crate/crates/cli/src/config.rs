//! Optional TOML run configuration. Command-line flags win over the file,
//! and the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Thresholds {
    One(f64),
    Many(Vec<f64>),
}

impl Thresholds {
    pub fn into_vec(self) -> Vec<f64> {
        match self {
            Thresholds::One(t) => vec![t],
            Thresholds::Many(v) => v,
        }
    }
}

/// Every key is optional; each subcommand reads the ones it understands.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub proposals: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub iou_thresh: Option<Thresholds>,
    pub gate: Option<f64>,
    pub strict: Option<bool>,
    pub refine: Option<bool>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,

    pub scenes: Option<Vec<PathBuf>>,
    pub policy: Option<String>,
    pub frames: Option<usize>,
    pub target_fps: Option<f64>,
    pub min_k: Option<usize>,
    pub max_k: Option<usize>,
    pub match_iou: Option<f64>,

    pub height: Option<usize>,
    pub width: Option<usize>,
    pub patch: Option<usize>,
    pub channels: Option<usize>,
    pub hidden: Option<usize>,
    pub configs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// IoU thresholds must lie in (0, 1].
pub fn check_threshold(name: &str, t: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        bail!("{name} must be in (0, 1], got {t}");
    }
    Ok(t)
}

pub fn require_file(flag: &str, path: Option<PathBuf>) -> Result<PathBuf> {
    let path = path.with_context(|| format!("missing --{flag} (or `{}` in the config file)", flag.replace('-', "_")))?;
    if !path.is_file() {
        bail!("--{flag}: {} does not exist or is not a file", path.display());
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_accept_a_number_or_a_list() {
        let c: FileConfig = toml::from_str("iou_thresh = 0.5").unwrap();
        assert_eq!(c.iou_thresh.unwrap().into_vec(), vec![0.5]);
        let c: FileConfig = toml::from_str("iou_thresh = [0.25, 0.5]").unwrap();
        assert_eq!(c.iou_thresh.unwrap().into_vec(), vec![0.25, 0.5]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("iou_treshold = 0.5").is_err());
    }

    #[test]
    fn threshold_range() {
        assert!(check_threshold("t", 1.0).is_ok());
        for bad in [0.0, -0.1, 1.01, f64::NAN] {
            assert!(check_threshold("t", bad).is_err());
        }
    }
}
