//! Experiment configuration: a JSON file merged with command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use langid::data::NoiseSpec;
use langid::dsp::MfccConfig;
use langid::models::{ArchTag, Architecture};
use langid::tensor::Padding;
use langid::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const DEFAULT_SWEEP_KERNELS: [usize; 5] = [3, 7, 17, 32, 65];

/// Everything one run needs. Unknown keys are rejected; every key is
/// optional and falls back to the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub arch: ArchTag,
    /// Overrides every convolution kernel size.
    pub kernel: Option<usize>,
    pub padding: Padding,
    /// Kernel sizes visited by `sweep`.
    pub kernels: Vec<usize>,
    /// Train / val / test fractions used by `split`.
    pub split: [f64; 3],
    /// Noise mixed in at evaluation, e.g. `"white:10"`.
    pub noise: Option<String>,
    /// Restricts training and evaluation to these labels.
    pub cluster: Option<Vec<String>>,
    /// Caps every class of the training split at this many clips.
    pub per_class: Option<usize>,
    pub mfcc: MfccConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            cache_dir: None,
            out: None,
            arch: ArchTag::CrnnAttn,
            kernel: None,
            padding: Padding::Valid,
            kernels: DEFAULT_SWEEP_KERNELS.to_vec(),
            split: [0.8, 0.1, 0.1],
            noise: None,
            cluster: None,
            per_class: None,
            mfcc: MfccConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| UsageError(format!("invalid run config: {e}")).into())
    }

    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_json(&text).with_context(|| format!("in {}", p.display()))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn noise_spec(&self) -> Result<Option<NoiseSpec>> {
        self.noise
            .as_deref()
            .map(|s| s.parse::<NoiseSpec>().map_err(|e| UsageError(e.to_string()).into()))
            .transpose()
    }

    pub fn architecture(&self, n_classes: usize) -> Result<Architecture> {
        let mut a = Architecture::new(self.arch, n_classes);
        a.input_frames = self.mfcc.target_frames;
        a.input_coefs = self.mfcc.ncoef;
        a.padding = self.padding;
        if let Some(k) = self.kernel {
            a = a.with_kernel(k);
        }
        a.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(a)
    }

    pub fn require_manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| UsageError("a manifest is required (--manifest or \"manifest\" in the config)".into()).into())
    }

    pub fn require_cache(&self) -> Result<&Path> {
        self.cache_dir
            .as_deref()
            .ok_or_else(|| UsageError("a feature cache is required (--cache or \"cache_dir\" in the config)".into()).into())
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| UsageError("an output location is required (--out or \"out\" in the config)".into()).into())
    }
}

/// Parses `manual:N`.
pub fn parse_balance(s: &str) -> Result<usize> {
    let n = s
        .strip_prefix("manual:")
        .and_then(|n| n.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("balance '{s}' is not of the form manual:<positive count>")))?;
    Ok(n)
}

/// Parses a comma-separated label list.
pub fn parse_cluster(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json("{\"epochs\": 3}").unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        assert!(RunConfig::from_json("{\"train\": {\"epoch\": 3}}").is_err());
    }

    #[test]
    fn nested_values_parse() {
        let c = RunConfig::from_json(
            r#"{"arch": "CNN", "padding": "same", "kernel": 7, "train": {"epochs": 5},
                "mfcc": {"nfft": 1024}, "noise": "white:10", "cluster": ["as", "bn"]}"#,
        )
        .unwrap();
        assert_eq!(c.arch, ArchTag::Cnn);
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.mfcc.nfft, 1024);
        assert_eq!(c.noise_spec().unwrap().unwrap().snr_db, 10.0);
        let a = c.architecture(2).unwrap();
        assert!(a.conv_spec.iter().all(|s| s.kernel == 7));
        assert_eq!(a.padding, Padding::Same);
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig { per_class: Some(100), ..RunConfig::default() };
        assert_eq!(RunConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }

    #[test]
    fn balance_and_cluster_parsing() {
        assert_eq!(parse_balance("manual:571").unwrap(), 571);
        for bad in ["manual:0", "auto:5", "manual:x", "100"] {
            assert!(parse_balance(bad).is_err(), "{bad}");
        }
        assert_eq!(parse_cluster("as, bn,or"), ["as", "bn", "or"]);
    }

    #[test]
    fn wide_kernels_need_same_padding() {
        let c = RunConfig { kernel: Some(65), ..RunConfig::default() };
        assert!(c.architecture(4).is_err());
        let c = RunConfig { padding: Padding::Same, ..c };
        assert!(c.architecture(4).is_ok());
    }
}
