//! Synthetic stand-in corpus. Every class has its own spectral recipe: a
//! fundamental range, a harmonic count, an amplitude-modulation rate and a
//! band of coloured noise. Clips vary in duration, pitch, phase and
//! background noise level.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{add_white_noise, save_wav, write_manifest, Gender, Manifest, ManifestEntry, NoiseSpec, Split};
use crate::dsp::AudioClip;
use crate::error::{invalid, Result};

pub const TOY_MIN_CLASSES: usize = 2;
pub const TOY_MAX_CLASSES: usize = 16;

const F0_LOW: f64 = 90.0;
const F0_HIGH: f64 = 1400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub per_class: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(TOY_MIN_CLASSES..=TOY_MAX_CLASSES).contains(&self.n_classes) {
            return Err(invalid(format!(
                "need {TOY_MIN_CLASSES} to {TOY_MAX_CLASSES} classes, got {}",
                self.n_classes
            )));
        }
        if self.per_class == 0 {
            return Err(invalid("per_class must be positive"));
        }
        if self.sample_rate < 8000 {
            return Err(invalid(format!("sample rate {} is below 8000 Hz", self.sample_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRecipe {
    /// Fundamental frequency range in Hz, `[lo, hi)`.
    pub f0: (f64, f64),
    pub harmonics: usize,
    /// Amplitude-modulation rate in Hz.
    pub am_rate: f64,
    /// Centre of the noise band in Hz.
    pub band_center: f64,
}

/// Recipe of class `c` out of `n`. Fundamental ranges tile `[90, 1400)` Hz
/// geometrically without overlap; the noise bands are permuted over the
/// spectrum so neighbouring classes differ in more than one respect.
pub fn class_recipe(c: usize, n: usize, sample_rate: u32) -> ClassRecipe {
    let ratio = (F0_HIGH / F0_LOW).powf(1.0 / n as f64);
    let lo = F0_LOW * ratio.powi(c as i32);
    // Leave a gap between neighbouring ranges.
    let hi = lo * ratio.powf(0.6);
    let step = if n % 5 == 0 { 7 } else { 5 };
    let slot = (c * step + 2) % n;
    let top = 0.4 * sample_rate as f64;
    let band_center = 400.0 + (top - 400.0) * slot as f64 / n.max(2).saturating_sub(1) as f64;
    ClassRecipe {
        f0: (lo, hi),
        harmonics: 2 + (c * 3) % 7,
        am_rate: 2.0 + ((c * 7) % 11) as f64,
        band_center,
    }
}

/// Band-pass biquad with unit peak gain.
fn bandpass(x: &mut [f64], center: f64, q: f64, sample_rate: f64) {
    let w0 = 2.0 * PI * center / sample_rate;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b0 * *v + b2 * x2 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Renders one clip of the recipe with per-clip randomness from `rng`.
pub fn render_clip(recipe: &ClassRecipe, sample_rate: u32, rng: &mut impl RngCore) -> Result<AudioClip> {
    let sr = sample_rate as f64;
    let n = (rng.random_range(1.0..3.0) * sr).round() as usize;
    let f0 = rng.random_range(recipe.f0.0..recipe.f0.1);
    let vibrato_phase = rng.random_range(0.0..2.0 * PI);
    let am_phase = rng.random_range(0.0..2.0 * PI);
    let phases: Vec<f64> = (0..recipe.harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let nyquist = sr / 2.0;
    let mut tone = vec![0.0; n];
    let mut phase = 0.0;
    for (i, v) in tone.iter_mut().enumerate() {
        let t = i as f64 / sr;
        // Slow pitch drift of +-2 %.
        let f = f0 * (1.0 + 0.02 * (2.0 * PI * 5.0 * t + vibrato_phase).sin());
        phase += 2.0 * PI * f / sr;
        let mut s = 0.0;
        for (h, ph) in phases.iter().enumerate() {
            let k = (h + 1) as f64;
            if f * k < nyquist {
                s += (k * phase + ph).sin() / k;
            }
        }
        let am = 0.6 + 0.4 * (2.0 * PI * recipe.am_rate * t + am_phase).sin();
        *v = s * am;
    }
    let tone_rms = rms(&tone).max(1e-12);

    let mut band: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    bandpass(&mut band, recipe.band_center, 4.0, sr);
    let band_rms = rms(&band).max(1e-12);

    let mut mix: Vec<f64> = tone
        .iter()
        .zip(&band)
        .map(|(t, b)| 0.25 * t / tone_rms + 0.08 * b / band_rms)
        .collect();
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.9 {
        mix.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    let clean = AudioClip::new(mix, sample_rate)?;
    // Recording-like background noise between 15 and 30 dB SNR.
    let snr = rng.random_range(15.0..30.0);
    add_white_noise(&clean, &NoiseSpec::white(snr)?, rng.next_u64())
}

/// Label of toy class `c`.
pub fn toy_label(c: usize) -> String {
    format!("t{c:02}")
}

/// Writes `per_class` clips per class to `out_dir/<label>/<index>.wav` and a
/// manifest `out_dir/manifest.csv` with unassigned splits. Genders alternate
/// F, M within a class.
pub fn synth_toy_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::with_capacity(cfg.n_classes * cfg.per_class);
    for c in 0..cfg.n_classes {
        let recipe = class_recipe(c, cfg.n_classes, cfg.sample_rate);
        let label = toy_label(c);
        for i in 0..cfg.per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
            let clip = render_clip(&recipe, cfg.sample_rate, &mut rng)?;
            let rel: PathBuf = [label.as_str(), &format!("{i:04}.wav")].iter().collect();
            save_wav(&out_dir.join(&rel), &clip)?;
            entries.push(ManifestEntry {
                path: rel,
                label: label.clone(),
                gender: if i % 2 == 0 { Gender::F } else { Gender::M },
                split: Split::Unassigned,
            });
        }
    }
    write_manifest(&out_dir.join("manifest.csv"), &entries)?;
    Ok(Manifest {
        base: out_dir.to_path_buf(),
        entries,
    })
}
