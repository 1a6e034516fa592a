//! Iterative radix-2 decimation-in-time FFT.

use crate::error::{invalid, Result};
use crate::real::Real;

/// Precomputed bit-reversal permutation and twiddles for one transform size.
#[derive(Debug, Clone)]
pub struct FftPlan<T> {
    n: usize,
    rev: Vec<usize>,
    // e^{-2 pi i k / n} for k < n/2, evaluated in f64.
    tw_re: Vec<T>,
    tw_im: Vec<T>,
}

impl<T: Real> FftPlan<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(invalid(format!("fft size {n} is not a power of two")));
        }
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let half = n / 2;
        let mut tw_re = Vec::with_capacity(half);
        let mut tw_im = Vec::with_capacity(half);
        for k in 0..half {
            let ang = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
            tw_re.push(T::from_f64_lossy(ang.cos()));
            tw_im.push(T::from_f64_lossy(ang.sin()));
        }
        Ok(Self { n, rev, tw_re, tw_im })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform of `(re, im)`.
    pub fn forward(&self, re: &mut [T], im: &mut [T]) {
        let n = self.n;
        assert!(re.len() == n && im.len() == n, "fft buffer length mismatch");
        for i in 0..n {
            let j = self.rev[i];
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let (wr, wi) = (self.tw_re[k * step], self.tw_im[k * step]);
                    let a = start + k;
                    let b = a + half;
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] = re[a] + tr;
                    im[a] = im[a] + ti;
                }
            }
            len <<= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_power_of_two() {
        assert!(FftPlan::<f64>::new(0).is_err());
        assert!(FftPlan::<f64>::new(12).is_err());
        assert!(FftPlan::<f64>::new(1).is_ok());
    }

    #[test]
    fn matches_direct_dft() {
        let n = 64;
        let plan = FftPlan::<f64>::new(n).unwrap();
        let x: Vec<f64> = (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let mut re = x.clone();
        let mut im = vec![0.0; n];
        plan.forward(&mut re, &mut im);
        for k in 0..n {
            let (mut sr, mut si) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                sr += v * ang.cos();
                si += v * ang.sin();
            }
            assert!((sr - re[k]).abs() < 1e-10 && (si - im[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let plan = FftPlan::<f32>::new(8).unwrap();
        let mut re = vec![0.0f32; 8];
        let mut im = vec![0.0f32; 8];
        re[0] = 1.0;
        plan.forward(&mut re, &mut im);
        assert!(re.iter().all(|&v| (v - 1.0).abs() < 1e-7));
        assert!(im.iter().all(|&v| v.abs() < 1e-7));
    }
}
