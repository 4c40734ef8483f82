//! Linearization metrics: NMSE, EVM, PAPR, Welch PSD, ACPR and AM/AM-AM/PM scatter.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};
use crate::signal::IqSignal;

/// Lower clamp applied to NMSE and EVM so reports stay finite.
pub const DB_FLOOR: f64 = -200.0;

fn ratio_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        DB_FLOOR
    } else {
        (10.0 * (num / den).log10()).max(DB_FLOOR)
    }
}

fn check_lengths(a: &IqSignal, b: &IqSignal) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "signal lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn nmse_db(reference: &IqSignal, estimate: &IqSignal) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let (mut err, mut pow) = (0.0, 0.0);
    for (r, e) in reference.samples().iter().zip(estimate.samples()) {
        err += (r - e).norm_sqr();
        pow += r.norm_sqr();
    }
    if pow == 0.0 {
        return Err(Error::Data("NMSE reference is all zero".into()));
    }
    Ok(ratio_db(err, pow))
}

/// Input-versus-output EVM after removing the least-squares complex gain.
pub fn evm_dbc(reference: &IqSignal, measured: &IqSignal) -> Result<f64> {
    check_lengths(reference, measured)?;
    let mut cross = Complex64::new(0.0, 0.0);
    let mut pow = 0.0;
    for (r, m) in reference.samples().iter().zip(measured.samples()) {
        cross += m * r.conj();
        pow += r.norm_sqr();
    }
    if pow == 0.0 {
        return Err(Error::Data("EVM reference is all zero".into()));
    }
    let gain = cross / pow;
    let mut err = 0.0;
    for (r, m) in reference.samples().iter().zip(measured.samples()) {
        err += (m - gain * r).norm_sqr();
    }
    let sig = gain.norm_sqr() * pow;
    if sig == 0.0 {
        return Err(Error::Data(
            "measured signal is orthogonal to the reference".into(),
        ));
    }
    Ok(ratio_db(err, sig))
}

pub fn papr_db(sig: &IqSignal) -> Result<f64> {
    let mean = sig.mean_power();
    if mean == 0.0 {
        return Err(Error::Data("PAPR of an all-zero signal".into()));
    }
    let peak = sig.samples().iter().map(|s| s.norm_sqr()).fold(0.0, f64::max);
    Ok(10.0 * (peak / mean).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Blackman,
}

impl Window {
    /// Periodic (DFT-even) window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let x = 2.0 * PI * i as f64 / n as f64;
                match self {
                    Window::Hann => 0.5 - 0.5 * x.cos(),
                    Window::Blackman => 0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsdConfig {
    pub fft_size: usize,
    pub window: Window,
    pub overlap_fraction: f64,
    #[serde(default)]
    pub averaging: Averaging,
}

impl Default for PsdConfig {
    fn default() -> Self {
        Self {
            fft_size: 4096,
            window: Window::Hann,
            overlap_fraction: 0.5,
            averaging: Averaging::Mean,
        }
    }
}

impl PsdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 64 || !self.fft_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "psd fft_size must be a power of two >= 64, got {}",
                self.fft_size
            )));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::Config(format!(
                "psd overlap_fraction must lie in [0, 1), got {}",
                self.overlap_fraction
            )));
        }
        Ok(())
    }
}

/// Two-sided power spectral density, bins ordered by ascending frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs_hz: Vec<f64>,
    /// Power per hertz (linear).
    pub density: Vec<f64>,
    pub bin_width_hz: f64,
}

impl Spectrum {
    pub fn density_db(&self) -> Vec<f64> {
        self.density
            .iter()
            .map(|&p| 10.0 * p.max(1e-300).log10())
            .collect()
    }

    /// Integrated power over bins whose centre lies in `[lo, hi)`.
    pub fn band_power(&self, lo_hz: f64, hi_hz: f64) -> f64 {
        self.freqs_hz
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f >= lo_hz && **f < hi_hz)
            .map(|(_, p)| p * self.bin_width_hz)
            .sum()
    }

    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width_hz
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("freq_hz,psd_db\n");
        for (f, p) in self.freqs_hz.iter().zip(self.density_db()) {
            writeln!(s, "{f:e},{p:e}").unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Welch estimate: windowed, overlapped, averaged periodograms.
pub fn psd(sig: &IqSignal, cfg: &PsdConfig) -> Result<Spectrum> {
    cfg.validate()?;
    let n = cfg.fft_size;
    if sig.len() < n {
        return Err(Error::Data(format!(
            "PSD needs at least {n} samples, signal has {}",
            sig.len()
        )));
    }
    let win = cfg.window.coefficients(n);
    let win_energy: f64 = win.iter().map(|w| w * w).sum();
    let step = ((n as f64 * (1.0 - cfg.overlap_fraction)).round() as usize).max(1);
    let fft = dsp::planner_forward(n);
    let fs = sig.sample_rate_hz();

    let mut acc = vec![0.0; n];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut segments = 0usize;
    let mut start = 0;
    while start + n <= sig.len() {
        for ((b, x), w) in buf.iter_mut().zip(&sig.samples()[start..start + n]).zip(&win) {
            *b = x * w;
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }

    let scale = 1.0 / (segments as f64 * fs * win_energy);
    let half = n / 2;
    let mut freqs_hz = Vec::with_capacity(n);
    let mut density = Vec::with_capacity(n);
    for i in 0..n {
        let k = (i + half) % n;
        freqs_hz.push(dsp::bin_frequency(k, n, fs));
        density.push(acc[k] * scale);
    }
    Ok(Spectrum {
        freqs_hz,
        density,
        bin_width_hz: fs / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcprSides {
    Left,
    Right,
    Worst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcprSpec {
    pub main_bw_hz: f64,
    pub adjacent_bw_hz: f64,
    pub adjacent_offset_hz: f64,
    pub sides: AcprSides,
}

impl Default for AcprSpec {
    fn default() -> Self {
        Self {
            main_bw_hz: 200e6,
            adjacent_bw_hz: 200e6,
            adjacent_offset_hz: 200e6,
            sides: AcprSides::Worst,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Acpr {
    pub left_dbc: f64,
    pub right_dbc: f64,
}

impl Acpr {
    pub fn worst(&self) -> f64 {
        self.left_dbc.max(self.right_dbc)
    }

    pub fn side(&self, sides: AcprSides) -> f64 {
        match sides {
            AcprSides::Left => self.left_dbc,
            AcprSides::Right => self.right_dbc,
            AcprSides::Worst => self.worst(),
        }
    }
}

pub fn acpr_from_spectrum(spectrum: &Spectrum, spec: &AcprSpec, sample_rate_hz: f64) -> Result<Acpr> {
    let positive = [spec.main_bw_hz, spec.adjacent_bw_hz, spec.adjacent_offset_hz];
    if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Config(format!(
            "ACPR bandwidths and offset must be positive, got {positive:?}"
        )));
    }
    let nyquist = sample_rate_hz / 2.0;
    let reach = spec.adjacent_offset_hz + spec.adjacent_bw_hz / 2.0;
    if reach > nyquist + 1e-9 || spec.main_bw_hz / 2.0 > nyquist {
        return Err(Error::Config(format!(
            "ACPR channels reach {reach} Hz, beyond Nyquist {nyquist} Hz"
        )));
    }
    let main = spectrum.band_power(-spec.main_bw_hz / 2.0, spec.main_bw_hz / 2.0);
    if main <= 0.0 {
        return Err(Error::Data("no power in the main channel".into()));
    }
    let half_adj = spec.adjacent_bw_hz / 2.0;
    let off = spec.adjacent_offset_hz;
    let left = spectrum.band_power(-off - half_adj, -off + half_adj);
    let right = spectrum.band_power(off - half_adj, off + half_adj);
    Ok(Acpr {
        left_dbc: ratio_db(left, main),
        right_dbc: ratio_db(right, main),
    })
}

pub fn acpr_dbc(sig: &IqSignal, spec: &AcprSpec, psd_cfg: &PsdConfig) -> Result<Acpr> {
    let spectrum = psd(sig, psd_cfg)?;
    acpr_from_spectrum(&spectrum, spec, sig.sample_rate_hz())
}

/// Per-sample AM/AM and AM/PM scatter. Phase in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct AmAmAmPm {
    pub abs_in: Vec<f64>,
    pub abs_out: Vec<f64>,
    /// `None` where `|x| <= eps`.
    pub phase_deg: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinnedPoint {
    pub abs_in: f64,
    pub abs_out: f64,
    pub phase_deg: Option<f64>,
}

pub const AMPM_EPS: f64 = 1e-6;

pub fn amam_ampm(input: &IqSignal, output: &IqSignal, eps: f64) -> Result<AmAmAmPm> {
    check_lengths(input, output)?;
    let mut r = AmAmAmPm {
        abs_in: Vec::with_capacity(input.len()),
        abs_out: Vec::with_capacity(input.len()),
        phase_deg: Vec::with_capacity(input.len()),
    };
    for (x, y) in input.samples().iter().zip(output.samples()) {
        let ax = x.norm();
        r.abs_in.push(ax);
        r.abs_out.push(y.norm());
        r.phase_deg
            .push((ax > eps).then(|| (y / x).arg().to_degrees()));
    }
    Ok(r)
}

fn lower_median(v: &mut [f64]) -> f64 {
    let mid = (v.len() - 1) / 2;
    *v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
}

impl AmAmAmPm {
    /// Median-binned curve over `n_bins` equal-width input-amplitude bins.
    ///
    /// Uses the lower median of each coordinate, so a monotone AM/AM law maps
    /// the binned input exactly onto the binned output.
    pub fn binned(&self, n_bins: usize) -> Vec<BinnedPoint> {
        let max_in = self.abs_in.iter().cloned().fold(0.0, f64::max);
        if n_bins == 0 || max_in == 0.0 {
            return Vec::new();
        }
        let mut bins: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = vec![Default::default(); n_bins];
        for i in 0..self.abs_in.len() {
            let b = ((self.abs_in[i] / max_in * n_bins as f64) as usize).min(n_bins - 1);
            bins[b].0.push(self.abs_in[i]);
            bins[b].1.push(self.abs_out[i]);
            if let Some(p) = self.phase_deg[i] {
                bins[b].2.push(p);
            }
        }
        bins.into_iter()
            .filter(|b| !b.0.is_empty())
            .map(|(mut a, mut o, mut p)| BinnedPoint {
                abs_in: lower_median(&mut a),
                abs_out: lower_median(&mut o),
                phase_deg: (!p.is_empty()).then(|| lower_median(&mut p)),
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("abs_in,abs_out,phase_deg\n");
        for i in 0..self.abs_in.len() {
            match self.phase_deg[i] {
                Some(p) => writeln!(s, "{:e},{:e},{:e}", self.abs_in[i], self.abs_out[i], p),
                None => writeln!(s, "{:e},{:e},", self.abs_in[i], self.abs_out[i]),
            }
            .unwrap();
        }
        s
    }
}

/// NMSE, EVM and ACPR of one evaluated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nmse_db: f64,
    pub evm_dbc: f64,
    pub acpr_left_dbc: f64,
    pub acpr_right_dbc: f64,
}

impl MetricsReport {
    pub fn acpr(&self) -> Acpr {
        Acpr {
            left_dbc: self.acpr_left_dbc,
            right_dbc: self.acpr_right_dbc,
        }
    }
}

/// Scores a PA output against the linear target `reference`.
pub fn evaluate(
    reference: &IqSignal,
    output: &IqSignal,
    acpr_spec: &AcprSpec,
    psd_cfg: &PsdConfig,
) -> Result<MetricsReport> {
    let acpr = acpr_dbc(output, acpr_spec, psd_cfg)?;
    Ok(MetricsReport {
        nmse_db: nmse_db(reference, output)?,
        evm_dbc: evm_dbc(reference, output)?,
        acpr_left_dbc: acpr.left_dbc,
        acpr_right_dbc: acpr.right_dbc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::tone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sig(v: Vec<Complex64>) -> IqSignal {
        IqSignal::new(v, 1.0e6).unwrap()
    }

    fn noise(n: usize, seed: u64, fs: f64) -> IqSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        IqSignal::new(v, fs).unwrap()
    }

    #[test]
    fn nmse_identical_hits_floor() {
        let x = noise(100, 1, 1.0);
        assert_eq!(nmse_db(&x, &x).unwrap(), DB_FLOOR);
    }

    #[test]
    fn nmse_ten_percent_error_is_minus_twenty() {
        let x = noise(1000, 2, 1.0);
        let y = x.scaled(Complex64::new(1.1, 0.0));
        assert!((nmse_db(&x, &y).unwrap() + 20.0).abs() < 1e-9);
    }

    #[test]
    fn nmse_rejects_zero_reference_and_length_mismatch() {
        let z = sig(vec![Complex64::new(0.0, 0.0); 4]);
        assert!(nmse_db(&z, &z).is_err());
        let a = noise(4, 1, 1e6);
        let b = noise(5, 1, 1e6);
        assert!(nmse_db(&a, &b).is_err());
    }

    #[test]
    fn nmse_with_uniform_noise_matches_power_ratio() {
        // uniform on [-a, a] per rail has power a^2/3 per rail
        let n = 100_000;
        let s = noise(n, 3, 1.0);
        let a = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let est: Vec<_> = s
            .samples()
            .iter()
            .map(|x| x + Complex64::new(rng.gen_range(-a..a), rng.gen_range(-a..a)))
            .collect();
        let p = 2.0 * a * a / 3.0;
        let sp = 2.0 / 3.0;
        let want = 10.0 * (p / sp).log10();
        let got = nmse_db(&s, &sig(est)).unwrap();
        assert!((got - want).abs() < 0.2, "{got} vs {want}");
    }

    #[test]
    fn evm_removes_complex_gain() {
        let x = noise(500, 4, 1.0);
        assert_eq!(evm_dbc(&x, &x.scaled(Complex64::new(3.0, 0.0))).unwrap(), DB_FLOOR);
        let g = Complex64::new(0.2, -1.3);
        assert!(evm_dbc(&x, &x.scaled(g)).unwrap() < -190.0);
    }

    #[test]
    fn evm_of_orthogonal_error() {
        let n = 4096;
        let x = noise(n, 5, 1.0);
        let e = noise(n, 6, 1.0);
        // project e off x, then scale to -30 dB
        let xs = x.samples();
        let mut c = Complex64::new(0.0, 0.0);
        let mut px = 0.0;
        for (a, b) in e.samples().iter().zip(xs) {
            c += a * b.conj();
            px += b.norm_sqr();
        }
        let k = c / px;
        let e_perp: Vec<_> = e.samples().iter().zip(xs).map(|(a, b)| a - k * b).collect();
        let pe: f64 = e_perp.iter().map(|v| v.norm_sqr()).sum();
        let scale = (1e-3 * px / pe).sqrt();
        let meas: Vec<_> = xs.iter().zip(&e_perp).map(|(a, b)| a + b * scale).collect();
        let got = evm_dbc(&x, &sig(meas)).unwrap();
        assert!((got + 30.0).abs() < 0.1, "{got}");
    }

    #[test]
    fn papr_of_constant_and_single_peak() {
        let c = sig(vec![Complex64::from_polar(0.7, 0.3); 32]);
        assert!(papr_db(&c).unwrap().abs() < 1e-12);
        let n = 1000;
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        v[n - 1] = Complex64::new(1.0, 0.0);
        assert!((papr_db(&sig(v)).unwrap() - 10.0 * (n as f64).log10()).abs() < 1e-12);
        assert!(papr_db(&sig(vec![Complex64::new(0.0, 0.0); 3])).is_err());
    }

    #[test]
    fn psd_of_tone_peaks_at_tone() {
        let fs = 1024.0;
        let x = tone(128.0, fs, 8192, 1.0).unwrap();
        let cfg = PsdConfig {
            fft_size: 256,
            ..PsdConfig::default()
        };
        let s = psd(&x, &cfg).unwrap();
        let (imax, _) = s
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(s.freqs_hz[imax], 128.0);
        let peak_db = s.density_db()[imax];
        // bins more than two away sit in the Hann sidelobe region
        for (i, d) in s.density_db().iter().enumerate() {
            if (i as i64 - imax as i64).abs() > 2 {
                assert!(*d < peak_db - 31.0, "bin {i}: {d} vs {peak_db}");
            }
        }
    }

    #[test]
    fn psd_conserves_power() {
        for (seed, window) in [(7, Window::Hann), (8, Window::Blackman)] {
            let x = noise(50_000, seed, 2.0e6);
            let cfg = PsdConfig {
                fft_size: 1024,
                window,
                ..PsdConfig::default()
            };
            let s = psd(&x, &cfg).unwrap();
            let db = 10.0 * (s.total_power() / x.mean_power()).log10();
            assert!(db.abs() < 0.1, "{db}");
        }
    }

    #[test]
    fn psd_of_white_noise_is_flat() {
        let x = noise(400_000, 9, 1.0e6);
        let cfg = PsdConfig {
            fft_size: 256,
            ..PsdConfig::default()
        };
        let s = psd(&x, &cfg).unwrap();
        let db = s.density_db();
        let mean = db.iter().sum::<f64>() / db.len() as f64;
        assert!(db.iter().all(|d| (d - mean).abs() < 1.0));
    }

    #[test]
    fn psd_rejects_short_signal_and_bad_config() {
        let x = noise(100, 1, 1.0);
        assert!(psd(&x, &PsdConfig::default()).is_err());
        let bad = PsdConfig {
            fft_size: 100,
            ..PsdConfig::default()
        };
        assert!(psd(&noise(1000, 1, 1.0), &bad).is_err());
    }

    #[test]
    fn acpr_rejects_channels_beyond_nyquist() {
        let x = noise(8192, 1, 100e6);
        let spec = AcprSpec {
            main_bw_hz: 20e6,
            adjacent_bw_hz: 20e6,
            adjacent_offset_hz: 45e6,
            sides: AcprSides::Worst,
        };
        assert!(acpr_dbc(&x, &spec, &PsdConfig::default()).is_err());
    }

    #[test]
    fn amam_of_identity() {
        let x = noise(1000, 10, 1.0);
        let s = amam_ampm(&x, &x, AMPM_EPS).unwrap();
        assert_eq!(s.abs_in, s.abs_out);
        assert!(s.phase_deg.iter().all(|p| p.unwrap().abs() < 1e-12));
    }

    #[test]
    fn ampm_excludes_tiny_inputs() {
        let x = sig(vec![Complex64::new(0.0, 0.0), Complex64::new(1e-7, 0.0), Complex64::new(0.5, 0.0)]);
        let y = sig(vec![Complex64::new(0.1, 0.0); 3]);
        let s = amam_ampm(&x, &y, AMPM_EPS).unwrap();
        assert_eq!(s.phase_deg[0], None);
        assert_eq!(s.phase_deg[1], None);
        assert_eq!(s.phase_deg[2], Some(0.0));
        assert!(s.to_csv().contains("0e0,1e-1,\n"));
    }
}
