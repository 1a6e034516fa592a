use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::AudioClip;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
}

/// Additive noise at a target signal-to-noise ratio. `snr_db = +inf`
/// disables the noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub snr_db: f64,
}

impl NoiseSpec {
    pub fn white(snr_db: f64) -> Result<Self> {
        let spec = Self {
            kind: NoiseKind::White,
            snr_db,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(invalid(format!("invalid SNR {} dB", self.snr_db)));
        }
        Ok(())
    }

    pub fn is_disabled(&self) -> bool {
        self.snr_db == f64::INFINITY
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NoiseKind::White => write!(f, "white:{}", self.snr_db),
        }
    }
}

/// Parses `white:<snr_db>`, e.g. `white:10` or `white:inf`.
impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, snr) = s
            .split_once(':')
            .ok_or_else(|| invalid(format!("noise spec '{s}' is not of the form white:<snr_db>")))?;
        if !kind.eq_ignore_ascii_case("white") {
            return Err(invalid(format!("unknown noise kind '{kind}'")));
        }
        let snr_db: f64 = snr
            .trim()
            .parse()
            .map_err(|_| invalid(format!("noise SNR '{snr}' is not a number")))?;
        Self::white(snr_db)
    }
}

pub fn signal_power(samples: &[f64]) -> f64 {
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len().max(1) as f64
}

/// Adds zero-mean Gaussian noise with power `P_signal / 10^(snr_db / 10)`
/// and clips the result to `[-1, 1]`. Silent clips come back unchanged.
pub fn add_white_noise(clip: &AudioClip, spec: &NoiseSpec, seed: u64) -> Result<AudioClip> {
    spec.validate()?;
    if spec.is_disabled() {
        return Ok(clip.clone());
    }
    let power = signal_power(clip.samples());
    if power == 0.0 {
        log::warn!("silent clip: SNR undefined, noise not added");
        return Ok(clip.clone());
    }
    let sigma = (power / 10f64.powf(spec.snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = clip
        .samples()
        .iter()
        .map(|&s| {
            let n: f64 = StandardNormal.sample(&mut rng);
            (s + sigma * n).clamp(-1.0, 1.0)
        })
        .collect();
    AudioClip::new(noisy, clip.sample_rate())
}
