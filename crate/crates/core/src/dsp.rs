//! FFT helpers shared by the generator, CFR and spectral estimators.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) fn planner_forward(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(n)
}

pub(crate) fn planner_inverse(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_inverse(n)
}

/// Frequency of FFT bin `k` for an `n`-point transform, in `[-fs/2, fs/2)`.
pub fn bin_frequency(k: usize, n: usize, sample_rate_hz: f64) -> f64 {
    let k = if k >= n.div_ceil(2) { k as f64 - n as f64 } else { k as f64 };
    k * sample_rate_hz / n as f64
}

/// Ideal circular low-pass: zeroes every bin with `|f| > passband_hz`.
pub fn band_limit(samples: &mut [Complex64], sample_rate_hz: f64, passband_hz: f64) {
    let n = samples.len();
    if n == 0 {
        return;
    }
    planner_forward(n).process(samples);
    for (k, s) in samples.iter_mut().enumerate() {
        if bin_frequency(k, n, sample_rate_hz).abs() > passband_hz {
            *s = Complex64::new(0.0, 0.0);
        }
    }
    planner_inverse(n).process(samples);
    let scale = 1.0 / n as f64;
    samples.iter_mut().for_each(|s| *s *= scale);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bin_frequencies_wrap_to_negative_half() {
        assert_eq!(bin_frequency(0, 8, 8.0), 0.0);
        assert_eq!(bin_frequency(3, 8, 8.0), 3.0);
        assert_eq!(bin_frequency(4, 8, 8.0), -4.0);
        assert_eq!(bin_frequency(7, 8, 8.0), -1.0);
        assert_eq!(bin_frequency(2, 5, 5.0), 2.0);
        assert_eq!(bin_frequency(3, 5, 5.0), -2.0);
    }

    #[test]
    fn band_limit_removes_out_of_band_tone_only() {
        let n = 256;
        let fs = 256.0;
        let mut x: Vec<Complex64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * 10.0 * t)
                    + Complex64::from_polar(0.5, 2.0 * std::f64::consts::PI * -90.0 * t)
            })
            .collect();
        band_limit(&mut x, fs, 50.0);
        for (i, s) in x.iter().enumerate() {
            let want = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * 10.0 * i as f64 / fs);
            assert!((s - want).norm() < 1e-9);
        }
    }
}
