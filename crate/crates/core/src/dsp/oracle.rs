//! Brute-force reference MFCC path.
//!
//! Everything here is evaluated term by term in `f64` from the defining sums:
//! an O(N^2) DFT, a direct-sum DCT-II, and filter weights computed per bin from
//! the triangle formula. It shares no code with the production pipeline apart
//! from the configuration struct, so the two can be checked against each other.

use std::f64::consts::PI;

use super::MfccConfig;

/// Power spectrum `|DFT(frame * hamming, nfft)|^2 / nfft` for `k = 0..=nfft/2`
/// by direct summation.
pub fn naive_power_spectrum(frame: &[f64], nfft: usize) -> Vec<f64> {
    let len = frame.len();
    assert!(len <= nfft, "frame longer than nfft");
    // cos/sin of 2 pi j / nfft; the DFT kernel for (k, n) is entry (k*n) mod nfft.
    let cos_tab: Vec<f64> = (0..nfft).map(|j| (2.0 * PI * j as f64 / nfft as f64).cos()).collect();
    let sin_tab: Vec<f64> = (0..nfft).map(|j| (2.0 * PI * j as f64 / nfft as f64).sin()).collect();
    let windowed: Vec<f64> = frame
        .iter()
        .enumerate()
        .map(|(n, &x)| {
            let w = if len == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()
            };
            x * w
        })
        .collect();
    (0..=nfft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &x) in windowed.iter().enumerate() {
                let j = (k * n) % nfft;
                re += x * cos_tab[j];
                im -= x * sin_tab[j];
            }
            (re * re + im * im) / nfft as f64
        })
        .collect()
}

/// Reference MFCC matrix, `target_frames x ncoef`, row-major. Also returns the
/// number of valid rows.
pub fn mfcc_oracle(samples: &[f64], sample_rate: u32, cfg: &MfccConfig) -> (Vec<f64>, usize) {
    assert!(!samples.is_empty() && sample_rate > 0);
    let sr = sample_rate as f64;

    let mut emph = vec![samples[0]];
    for n in 1..samples.len() {
        emph.push(samples[n] - cfg.pre_emphasis * samples[n - 1]);
    }

    let frame_len = (cfg.f_size * sr).round() as usize;
    let hop = (cfg.f_stride * sr).round() as usize;
    let diff = (emph.len() as f64 - frame_len as f64).abs();
    let n_frames = ((diff / hop as f64).ceil() as usize).max(1);
    let pad_len = n_frames * hop + frame_len;
    let sample_at = |i: usize| if i < emph.len() { emph[i] } else { 0.0 };
    assert!(pad_len >= emph.len());

    let hf = 2595.0 * (1.0 + 0.5 * sr / 700.0).log10();
    let n_points = cfg.nfilt + 2;
    let bins: Vec<i64> = (0..n_points)
        .map(|i| {
            let mel = cfg.lf + (hf - cfg.lf) * i as f64 / (n_points - 1) as f64;
            let hz = 700.0 * (10f64.powf(mel / 2595.0) - 1.0);
            ((cfg.nfft as f64 + 1.0) * hz / sr).floor() as i64
        })
        .collect();
    let weight = |m: usize, k: i64| -> f64 {
        // filter m in 1..=nfilt
        let (l, c, r) = (bins[m - 1], bins[m], bins[m + 1]);
        if k >= l && k < c {
            (k - l) as f64 / (c - l) as f64
        } else if k >= c && k < r {
            (r - k) as f64 / (r - c) as f64
        } else {
            0.0
        }
    };

    let rows = cfg.target_frames;
    let mut out = vec![0.0; rows * cfg.ncoef];
    let n_valid = n_frames.min(rows);
    for f in 0..n_valid {
        let frame: Vec<f64> = (0..frame_len).map(|i| sample_at(f * hop + i)).collect();
        let pow = naive_power_spectrum(&frame, cfg.nfft);
        let log_e: Vec<f64> = (1..=cfg.nfilt)
            .map(|m| {
                let e: f64 = pow
                    .iter()
                    .enumerate()
                    .map(|(k, p)| p * weight(m, k as i64))
                    .sum();
                20.0 * e.max(super::ENERGY_FLOOR).log10()
            })
            .collect();
        let nf = cfg.nfilt as f64;
        for n in 0..cfg.ncoef {
            let mut acc = 0.0;
            for (m, &x) in log_e.iter().enumerate() {
                acc += x * (PI * n as f64 * (2.0 * m as f64 + 1.0) / (2.0 * nf)).cos();
            }
            let scale = if n == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            let lift = 1.0 + cfg.lifter as f64 / 2.0 * (PI * n as f64 / cfg.lifter as f64).sin();
            out[f * cfg.ncoef + n] = acc * scale * lift;
        }
    }
    (out, n_valid)
}
