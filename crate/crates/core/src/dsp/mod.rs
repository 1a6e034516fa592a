//! MFCC front end.
//!
//! The pipeline turns a mono clip into a fixed-size `target_frames x ncoef`
//! cepstral matrix:
//!
//! 1. first-order pre-emphasis,
//! 2. framing into `round(f_size * sr)`-sample frames every
//!    `round(f_stride * sr)` samples, zero-padding the tail,
//! 3. Hamming window, `nfft`-point FFT, power `|X|^2 / nfft`,
//! 4. triangular mel filterbank with edges spaced evenly on the mel scale
//!    between `lf` and the Nyquist mel,
//! 5. `20 log10` of the filter energies, orthonormal DCT-II, sinusoidal lifter,
//! 6. zero-row padding or tail truncation to `target_frames` rows.
//!
//! The stages are generic over [`Real`]. [`compute_mfcc`] always runs them in
//! `f64` and rounds once at the end: with lifter gains up to `1 + lifter/2`
//! the coefficients reach the thousands, and accumulating in `f32` costs
//! several hundredths of absolute error.

mod cache;
mod fft;
pub mod oracle;

use serde::{Deserialize, Serialize};

pub use cache::{read_feature_cache, write_feature_cache, FEATURE_CACHE_MAGIC};
pub use fft::FftPlan;

use crate::error::{invalid, Result};
use crate::real::Real;

/// Energies are floored here before the log so silent frames stay finite.
pub const ENERGY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub pre_emphasis: f64,
    /// Frame length in seconds.
    pub f_size: f64,
    /// Frame stride in seconds.
    pub f_stride: f64,
    pub nfft: usize,
    /// Lowest filterbank edge, in mel.
    pub lf: f64,
    pub nfilt: usize,
    pub ncoef: usize,
    pub lifter: usize,
    pub target_frames: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            pre_emphasis: 0.97,
            f_size: 0.025,
            f_stride: 0.015,
            nfft: 512,
            lf: 0.0,
            nfilt: 40,
            ncoef: 13,
            lifter: 22,
            target_frames: 1000,
        }
    }
}

impl MfccConfig {
    /// Checks the rate-independent invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.f_size > 0.0 && self.f_stride > 0.0) {
            return Err(invalid("frame size and stride must be positive"));
        }
        if self.f_stride > self.f_size {
            return Err(invalid(format!(
                "frame stride {} exceeds frame size {}",
                self.f_stride, self.f_size
            )));
        }
        if self.nfft == 0 || !self.nfft.is_power_of_two() {
            return Err(invalid(format!("nfft {} must be a power of two", self.nfft)));
        }
        if self.nfilt == 0 || self.ncoef == 0 || self.ncoef > self.nfilt {
            return Err(invalid(format!(
                "need 1 <= ncoef ({}) <= nfilt ({})",
                self.ncoef, self.nfilt
            )));
        }
        if self.lifter == 0 || self.target_frames == 0 {
            return Err(invalid("lifter and target_frames must be positive"));
        }
        if !self.pre_emphasis.is_finite() || !self.lf.is_finite() || self.lf < 0.0 {
            return Err(invalid("pre_emphasis and lf must be finite, lf >= 0"));
        }
        Ok(())
    }

    /// Samples per frame at `sample_rate`.
    pub fn frame_len(&self, sample_rate: u32) -> usize {
        (self.f_size * sample_rate as f64).round() as usize
    }

    /// Samples between frame starts at `sample_rate`.
    pub fn hop(&self, sample_rate: u32) -> usize {
        (self.f_stride * sample_rate as f64).round() as usize
    }

    /// Checks the invariants that depend on the clip's sample rate.
    pub fn validate_for_rate(&self, sample_rate: u32) -> Result<()> {
        self.validate()?;
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        let frame_len = self.frame_len(sample_rate);
        if frame_len < 2 || self.hop(sample_rate) == 0 {
            return Err(invalid(format!(
                "frame geometry degenerates at {sample_rate} Hz (frame_len {frame_len})"
            )));
        }
        if frame_len > self.nfft {
            return Err(invalid(format!(
                "frame length {frame_len} at {sample_rate} Hz exceeds nfft {}",
                self.nfft
            )));
        }
        if self.lf >= high_freq_mel(sample_rate)? {
            return Err(invalid("lf must lie below the Nyquist mel"));
        }
        Ok(())
    }
}

/// A mono clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("audio clip is empty"));
        }
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(invalid(format!(
                "sample {i} = {} outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Row-major real matrix used between pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Network input: exactly `target_frames` rows of `ncoef` cepstra. Rows at
/// and beyond `n_valid_frames` are zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
    pub n_valid_frames: usize,
}

impl<T: Real> FeatureMatrix<T> {
    pub fn row(&self, r: usize) -> &[T] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn cast<U: Real>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
            n_valid_frames: self.n_valid_frames,
        }
    }
}

/// Triangular mel filterbank.
#[derive(Debug, Clone)]
pub struct MelFilterbank<T> {
    pub mel_points: Vec<f64>,
    pub bins: Vec<usize>,
    /// `nfilt x (nfft/2 + 1)`.
    pub weights: Matrix<T>,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Mel value of the Nyquist frequency.
pub fn high_freq_mel(sample_rate: u32) -> Result<f64> {
    if sample_rate == 0 {
        return Err(invalid("sample rate must be positive"));
    }
    Ok(2595.0 * (1.0 + 0.5 * sample_rate as f64 / 700.0).log10())
}

/// `out[0] = x[0]`, `out[n] = x[n] - a * x[n-1]`.
pub fn pre_emphasize<T: Real>(clip: &AudioClip, cfg: &MfccConfig) -> Result<Vec<T>> {
    let sig = clip.samples();
    if sig.is_empty() {
        return Err(invalid("audio clip is empty"));
    }
    let a = T::from_f64_lossy(cfg.pre_emphasis);
    let x: Vec<T> = sig.iter().map(|&s| T::from_f64_lossy(s)).collect();
    let mut out = Vec::with_capacity(x.len());
    out.push(x[0]);
    out.extend(x.windows(2).map(|w| w[1] - a * w[0]));
    Ok(out)
}

/// Frame count for a signal of `sig_len` samples: `ceil(|sig_len - frame_len| / hop)`,
/// clamped to at least one frame.
pub fn frame_count(sig_len: usize, frame_len: usize, hop: usize) -> usize {
    sig_len.abs_diff(frame_len).div_ceil(hop).max(1)
}

/// Slices the zero-padded signal into overlapping frames.
pub fn frame_signal<T: Real>(emphasized: &[T], sample_rate: u32, cfg: &MfccConfig) -> Result<Matrix<T>> {
    if emphasized.is_empty() {
        return Err(invalid("cannot frame an empty signal"));
    }
    if sample_rate == 0 {
        return Err(invalid("sample rate must be positive"));
    }
    let frame_len = cfg.frame_len(sample_rate);
    let hop = cfg.hop(sample_rate);
    if frame_len == 0 || hop == 0 {
        return Err(invalid("frame length and hop must be at least one sample"));
    }
    let n_frames = frame_count(emphasized.len(), frame_len, hop);
    let pad_len = n_frames * hop + frame_len;
    let mut padded = emphasized.to_vec();
    padded.resize(pad_len.max(emphasized.len()), T::zero());

    let mut frames = Matrix::zeros(n_frames, frame_len);
    for r in 0..n_frames {
        frames
            .row_mut(r)
            .copy_from_slice(&padded[r * hop..r * hop + frame_len]);
    }
    Ok(frames)
}

/// `w[n] = 0.54 - 0.46 cos(2 pi n / (N - 1))`.
pub fn hamming<T: Real>(len: usize) -> Vec<T> {
    if len == 1 {
        return vec![T::one()];
    }
    (0..len)
        .map(|n| {
            let v = 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos();
            T::from_f64_lossy(v)
        })
        .collect()
}

/// Windowed periodogram `|FFT(w * frame, nfft)|^2 / nfft` for bins `0..=nfft/2`.
pub fn power_spectrum<T: Real>(frames: &Matrix<T>, cfg: &MfccConfig) -> Result<Matrix<T>> {
    let plan = FftPlan::new(cfg.nfft)?;
    power_spectrum_with(frames, &plan)
}

fn power_spectrum_with<T: Real>(frames: &Matrix<T>, plan: &FftPlan<T>) -> Result<Matrix<T>> {
    let nfft = plan.len();
    if frames.cols > nfft {
        return Err(invalid(format!(
            "frame length {} exceeds nfft {nfft}",
            frames.cols
        )));
    }
    let window = hamming::<T>(frames.cols);
    let n_bins = nfft / 2 + 1;
    let scale = T::one() / T::from_usize(nfft).unwrap();
    let mut out = Matrix::zeros(frames.rows, n_bins);
    let mut re = vec![T::zero(); nfft];
    let mut im = vec![T::zero(); nfft];
    for r in 0..frames.rows {
        re.fill(T::zero());
        im.fill(T::zero());
        for (dst, (&x, &w)) in re.iter_mut().zip(frames.row(r).iter().zip(&window)) {
            *dst = x * w;
        }
        plan.forward(&mut re, &mut im);
        for (k, dst) in out.row_mut(r).iter_mut().enumerate() {
            *dst = (re[k] * re[k] + im[k] * im[k]) * scale;
        }
    }
    Ok(out)
}

/// Builds the `nfilt` triangular filters over `nfft/2 + 1` bins.
pub fn build_filterbank<T: Real>(sample_rate: u32, cfg: &MfccConfig) -> Result<MelFilterbank<T>> {
    if cfg.nfilt == 0 {
        return Err(invalid("nfilt must be at least 1"));
    }
    let hf = high_freq_mel(sample_rate)?;
    let n_points = cfg.nfilt + 2;
    let step = (hf - cfg.lf) / (n_points - 1) as f64;
    let mel_points: Vec<f64> = (0..n_points)
        .map(|i| if i == n_points - 1 { hf } else { cfg.lf + step * i as f64 })
        .collect();
    let bins: Vec<usize> = mel_points
        .iter()
        .map(|&m| ((cfg.nfft + 1) as f64 * mel_to_hz(m) / sample_rate as f64).floor() as usize)
        .collect();

    let n_bins = cfg.nfft / 2 + 1;
    let mut weights = Matrix::zeros(cfg.nfilt, n_bins);
    for m in 1..=cfg.nfilt {
        let (left, center, right) = (bins[m - 1], bins[m], bins[m + 1]);
        let row = weights.row_mut(m - 1);
        for (k, w) in row.iter_mut().enumerate().take(center.min(n_bins)).skip(left) {
            *w = T::from_f64_lossy((k - left) as f64 / (center - left) as f64);
        }
        for (k, w) in row.iter_mut().enumerate().take(right.min(n_bins)).skip(center) {
            *w = T::from_f64_lossy((right - k) as f64 / (right - center) as f64);
        }
    }
    Ok(MelFilterbank {
        mel_points,
        bins,
        weights,
    })
}

/// Sinusoidal lifter gain for cepstral index `n`.
pub fn lifter_gain(n: usize, lifter: usize) -> f64 {
    1.0 + (lifter as f64 / 2.0) * (std::f64::consts::PI * n as f64 / lifter as f64).sin()
}

/// Full MFCC pipeline with length normalisation to `cfg.target_frames`.
pub fn compute_mfcc<T: Real>(clip: &AudioClip, cfg: &MfccConfig) -> Result<FeatureMatrix<T>> {
    let features = mfcc_in::<f64>(clip, cfg)?;
    Ok(features.cast())
}

fn mfcc_in<T: Real>(clip: &AudioClip, cfg: &MfccConfig) -> Result<FeatureMatrix<T>> {
    let sr = clip.sample_rate();
    cfg.validate_for_rate(sr)?;
    let emphasized = pre_emphasize::<T>(clip, cfg)?;
    let frames = frame_signal(&emphasized, sr, cfg)?;
    let plan = FftPlan::new(cfg.nfft)?;
    let power = power_spectrum_with(&frames, &plan)?;
    let fbank = build_filterbank::<T>(sr, cfg)?;

    // energies = power . fbank^T
    let (n_frames, n_bins, nfilt) = (power.rows, power.cols, cfg.nfilt);
    let mut energies = vec![T::zero(); n_frames * nfilt];
    T::gemm(
        n_frames,
        n_bins,
        nfilt,
        T::one(),
        &power.data,
        false,
        &fbank.weights.data,
        true,
        T::zero(),
        &mut energies,
    );
    let floor = T::from_f64_lossy(ENERGY_FLOOR);
    let twenty = T::from_f64_lossy(20.0);
    for e in energies.iter_mut() {
        *e = twenty * e.max(floor).log10();
    }

    // Orthonormal DCT-II basis restricted to the kept coefficients, with the
    // lifter folded in.
    let ncoef = cfg.ncoef;
    let mut basis = vec![T::zero(); ncoef * nfilt];
    for n in 0..ncoef {
        let s = if n == 0 { (1.0 / nfilt as f64).sqrt() } else { (2.0 / nfilt as f64).sqrt() };
        let gain = lifter_gain(n, cfg.lifter);
        for m in 0..nfilt {
            let c = (std::f64::consts::PI * n as f64 * (2 * m + 1) as f64 / (2 * nfilt) as f64).cos();
            basis[n * nfilt + m] = T::from_f64_lossy(s * c * gain);
        }
    }
    let mut cepstra = vec![T::zero(); n_frames * ncoef];
    T::gemm(
        n_frames,
        nfilt,
        ncoef,
        T::one(),
        &energies,
        false,
        &basis,
        true,
        T::zero(),
        &mut cepstra,
    );

    let rows = cfg.target_frames;
    let n_valid = n_frames.min(rows);
    let mut values = vec![T::zero(); rows * ncoef];
    values[..n_valid * ncoef].copy_from_slice(&cepstra[..n_valid * ncoef]);
    Ok(FeatureMatrix {
        rows,
        cols: ncoef,
        values,
        n_valid_frames: n_valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>, sr: u32) -> AudioClip {
        AudioClip::new(samples, sr).unwrap()
    }

    #[test]
    fn high_freq_mel_values() {
        assert!(high_freq_mel(0).is_err());
        let at_1400 = 2595.0 * 2f64.log10();
        assert!((high_freq_mel(1400).unwrap() - at_1400).abs() < 1e-12);
        assert!((at_1400 - 781.17).abs() < 0.01);
        let at_16k = 2595.0 * (1.0 + 8000.0 / 700.0f64).log10();
        assert!((high_freq_mel(16000).unwrap() - at_16k).abs() < 1e-12);
        assert!((at_16k - 2840.02).abs() < 0.01);
    }

    #[test]
    fn mel_hz_round_trip() {
        for hz in [0.0, 100.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn pre_emphasis_of_constant_signal() {
        let out = pre_emphasize::<f64>(&clip(vec![1.0; 3], 16000), &MfccConfig::default()).unwrap();
        assert_eq!(out[0], 1.0);
        assert!((out[1] - 0.03).abs() < 1e-15 && (out[2] - 0.03).abs() < 1e-15);
    }

    #[test]
    fn zero_pre_emphasis_is_identity() {
        let cfg = MfccConfig {
            pre_emphasis: 0.0,
            ..MfccConfig::default()
        };
        let sig: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin() * 0.5).collect();
        let out = pre_emphasize::<f64>(&clip(sig.clone(), 8000), &cfg).unwrap();
        assert_eq!(out, sig);
    }

    #[test]
    fn frame_geometry_examples() {
        let cfg = MfccConfig::default();
        assert_eq!(cfg.frame_len(16000), 400);
        assert_eq!(cfg.hop(16000), 240);
        assert_eq!(frame_count(16000, 400, 240), 65);
        assert_eq!(frame_count(640, 400, 240), 1);
        assert_eq!(frame_count(400, 400, 240), 1);

        let sig = vec![0.5f64; 640];
        let frames = frame_signal(&sig, 16000, &cfg).unwrap();
        assert_eq!((frames.rows, frames.cols), (1, 400));
        assert!(frame_signal::<f64>(&[], 16000, &cfg).is_err());
    }

    #[test]
    fn hamming_endpoints() {
        let w = hamming::<f64>(400);
        assert!((w[0] - 0.08).abs() < 1e-15);
        assert!((w[399] - 0.08).abs() < 1e-12);
    }

    #[test]
    fn zero_frame_has_zero_power() {
        let frames = Matrix::<f64>::zeros(2, 400);
        let p = power_spectrum(&frames, &MfccConfig::default()).unwrap();
        assert_eq!(p.cols, 257);
        assert!(p.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_longer_than_nfft_rejected() {
        let frames = Matrix::<f64>::zeros(1, 600);
        assert!(power_spectrum(&frames, &MfccConfig::default()).is_err());
    }

    #[test]
    fn filterbank_edges_at_16k() {
        let fb = build_filterbank::<f64>(16000, &MfccConfig::default()).unwrap();
        assert_eq!(fb.bins.len(), 42);
        assert_eq!(fb.bins[0], 0);
        assert_eq!(*fb.bins.last().unwrap(), 256);
        assert!(fb.bins.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn lifter_gain_is_one_at_zero() {
        assert_eq!(lifter_gain(0, 22), 1.0);
        assert_eq!(lifter_gain(0, 1_000_000), 1.0);
        // (L/2) sin(pi n / L) -> pi n / 2 as L grows, so the gain does not
        // approach 1 for n > 0.
        let limit = 1.0 + 1.5 * std::f64::consts::PI;
        assert!((lifter_gain(3, 1_000_000_000) - limit).abs() < 1e-9);
    }

    #[test]
    fn silence_rows_are_identical() {
        let c = clip(vec![0.0; 8000], 16000);
        let f = compute_mfcc::<f64>(&c, &MfccConfig::default()).unwrap();
        assert_eq!((f.rows, f.cols), (1000, 13));
        assert!(f.n_valid_frames > 1);
        for r in 1..f.n_valid_frames {
            assert_eq!(f.row(r), f.row(0));
        }
        assert!(f.row(f.n_valid_frames).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn long_clip_is_truncated() {
        let sr = 8000;
        let n = 20 * sr as usize;
        let sig: Vec<f64> = (0..n).map(|i| 0.3 * (i as f64 * 0.05).sin()).collect();
        let f = compute_mfcc::<f32>(&clip(sig, sr), &MfccConfig::default()).unwrap();
        assert_eq!(f.n_valid_frames, 1000);
        assert_eq!(f.values.len(), 13000);
    }

    #[test]
    fn config_validation() {
        let cfg = MfccConfig::default();
        assert!(cfg.validate_for_rate(16000).is_ok());
        assert!(cfg.validate_for_rate(22050).is_err());
        let bad = MfccConfig {
            f_stride: 0.03,
            ..MfccConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MfccConfig {
            ncoef: 41,
            ..MfccConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MfccConfig {
            nfft: 500,
            ..MfccConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn empty_or_out_of_range_clip_rejected() {
        assert!(AudioClip::new(vec![], 16000).is_err());
        assert!(AudioClip::new(vec![1.5], 16000).is_err());
        assert!(AudioClip::new(vec![0.1], 0).is_err());
    }
}
