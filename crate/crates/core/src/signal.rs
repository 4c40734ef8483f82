//! Test-signal generation and dataset handling.
//!
//! Signals are complex baseband sequences carried by [`IqSignal`]. The OFDM
//! generator builds a multi-carrier waveform directly at the output sample
//! rate, crest-factor reduction is an iterative clip-and-filter loop, and
//! datasets are input/target pairs split chronologically.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{dsp, metrics};

/// Fraction of each channel's nominal bandwidth carrying active subcarriers.
pub const ACTIVE_FRACTION: f64 = 0.95;

/// Number of RNN input features per time step.
pub const FEATURE_SIZE: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct IqSignal {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
}

impl IqSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("signal must contain at least one sample".into()));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Data(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::Data(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.len() as f64
    }

    pub fn peak_magnitude(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    pub fn is_unit_normalized(&self) -> bool {
        self.peak_magnitude() <= 1.0 + 1e-9
    }

    pub fn scaled(&self, gain: Complex64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// Scales so that the peak magnitude is one. Returns the applied scale.
    pub fn normalize_peak(&mut self) -> f64 {
        let peak = self.peak_magnitude();
        if peak == 0.0 {
            return 1.0;
        }
        let scale = 1.0 / peak;
        for s in &mut self.samples {
            *s *= scale;
        }
        scale
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Data(format!(
                "invalid slice {start}..{end} of signal with {} samples",
                self.len()
            )));
        }
        Ok(Self {
            samples: self.samples[start..end].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfdmConfig {
    pub n_channels: usize,
    pub channel_bw_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub qam_order: u32,
    pub n_symbols: usize,
    pub cp_fraction: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            n_channels: 5,
            channel_bw_hz: 40e6,
            subcarrier_spacing_hz: 30e3,
            qam_order: 256,
            n_symbols: 3,
            cp_fraction: 0.07,
            sample_rate_hz: 983.04e6,
            seed: 1,
        }
    }
}

impl OfdmConfig {
    pub fn occupied_bw_hz(&self) -> f64 {
        self.n_channels as f64 * self.channel_bw_hz
    }

    /// IFFT size at the output sample rate.
    pub fn fft_size(&self) -> usize {
        (self.sample_rate_hz / self.subcarrier_spacing_hz).round() as usize
    }

    pub fn cp_length(&self) -> usize {
        (self.cp_fraction * self.fft_size() as f64).round() as usize
    }

    pub fn symbol_length(&self) -> usize {
        self.fft_size() + self.cp_length()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_channels == 0 {
            return bad("n_channels must be at least 1".into());
        }
        if self.n_symbols == 0 {
            return bad("n_symbols must be at least 1".into());
        }
        for (name, v) in [
            ("channel_bw_hz", self.channel_bw_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("sample_rate_hz", self.sample_rate_hz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !matches!(self.qam_order, 4 | 16 | 64 | 256) {
            return bad(format!(
                "qam_order must be one of 4, 16, 64, 256, got {}",
                self.qam_order
            ));
        }
        if !(0.0..1.0).contains(&self.cp_fraction) {
            return bad(format!(
                "cp_fraction must lie in [0, 1), got {}",
                self.cp_fraction
            ));
        }
        if self.occupied_bw_hz() > 0.8 * self.sample_rate_hz {
            return bad(format!(
                "occupied bandwidth n_channels x channel_bw_hz = {} Hz exceeds 0.8 x sample_rate_hz = {} Hz",
                self.occupied_bw_hz(),
                0.8 * self.sample_rate_hz
            ));
        }
        let ratio = self.sample_rate_hz / self.subcarrier_spacing_hz;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio {
            return bad(format!(
                "sample_rate_hz / subcarrier_spacing_hz = {ratio} must be an integer FFT size"
            ));
        }
        if self.active_half_width() == 0 {
            return bad("channel_bw_hz holds no subcarriers at this spacing".into());
        }
        Ok(())
    }

    fn active_half_width(&self) -> usize {
        (ACTIVE_FRACTION * self.channel_bw_hz / self.subcarrier_spacing_hz / 2.0).floor() as usize
    }

    fn channel_center_hz(&self, c: usize) -> f64 {
        (c as f64 - (self.n_channels as f64 - 1.0) / 2.0) * self.channel_bw_hz
    }
}

fn qam_levels(order: u32) -> (u32, f64) {
    let per_axis = (order as f64).sqrt().round() as u32;
    // average symbol energy of the square constellation with odd-integer levels
    let norm = (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
    (per_axis, norm)
}

/// Generates a seeded multi-channel OFDM baseband signal, unit-normalized.
///
/// Subcarriers of every channel are loaded with independent QAM symbols and
/// synthesized by one IFFT per symbol at `sample_rate_hz`. The finished
/// sequence is band-limited to the occupied band before peak normalization.
pub fn generate_ofdm(cfg: &OfdmConfig) -> Result<IqSignal> {
    cfg.validate()?;
    let n_fft = cfg.fft_size();
    let cp = cfg.cp_length();
    let half = cfg.active_half_width() as i64;
    let (per_axis, norm) = qam_levels(cfg.qam_order);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let ifft = dsp::planner_inverse(n_fft);
    let mut out = Vec::with_capacity(cfg.n_symbols * (n_fft + cp));
    let mut bins = vec![Complex64::new(0.0, 0.0); n_fft];
    for _ in 0..cfg.n_symbols {
        bins.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for c in 0..cfg.n_channels {
            let k0 = (cfg.channel_center_hz(c) / cfg.subcarrier_spacing_hz).round() as i64;
            for k in -half..=half {
                if k == 0 {
                    continue;
                }
                let i = rng.gen_range(0..per_axis) as f64 * 2.0 - (per_axis as f64 - 1.0);
                let q = rng.gen_range(0..per_axis) as f64 * 2.0 - (per_axis as f64 - 1.0);
                let idx = (k0 + k).rem_euclid(n_fft as i64) as usize;
                bins[idx] = Complex64::new(i, q) / norm;
            }
        }
        let mut sym = bins.clone();
        ifft.process(&mut sym);
        out.extend_from_slice(&sym[n_fft - cp..]);
        out.extend_from_slice(&sym);
    }

    let mut sig = IqSignal::new(out, cfg.sample_rate_hz)?;
    dsp::band_limit(&mut sig.samples, cfg.sample_rate_hz, cfg.occupied_bw_hz() / 2.0);
    sig.normalize_peak();
    Ok(sig)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfrConfig {
    pub papr_target_db: f64,
    /// One-sided passband of the clipping-noise filter; usually half the occupied bandwidth.
    pub passband_hz: f64,
    #[serde(default = "CfrConfig::default_iterations")]
    pub max_iterations: usize,
}

impl CfrConfig {
    fn default_iterations() -> usize {
        8
    }

    pub fn for_ofdm(ofdm: &OfdmConfig, papr_target_db: f64) -> Self {
        Self {
            papr_target_db,
            passband_hz: ofdm.occupied_bw_hz() / 2.0,
            max_iterations: Self::default_iterations(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CfrOutcome {
    pub signal: IqSignal,
    pub papr_db: f64,
    pub iterations: usize,
    /// Set when the returned PAPR is more than 0.3 dB above the target.
    pub target_missed: bool,
}

/// Iterative clip-and-filter crest-factor reduction.
pub fn apply_cfr(sig: &IqSignal, cfg: &CfrConfig) -> Result<CfrOutcome> {
    if !(cfg.papr_target_db > 0.0) {
        return Err(Error::Config(format!(
            "papr_target_db must be positive, got {}",
            cfg.papr_target_db
        )));
    }
    let input_papr = metrics::papr_db(sig)?;
    if input_papr <= cfg.papr_target_db {
        return Ok(CfrOutcome {
            signal: sig.clone(),
            papr_db: input_papr,
            iterations: 0,
            target_missed: false,
        });
    }

    let target_ratio = 10f64.powf(cfg.papr_target_db / 10.0);
    let mut best = (sig.clone(), input_papr);
    let mut current = sig.clone();
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let clip = (target_ratio * current.mean_power()).sqrt();
        for s in &mut current.samples {
            let m = s.norm();
            if m > clip {
                *s *= clip / m;
            }
        }
        dsp::band_limit(&mut current.samples, current.sample_rate_hz, cfg.passband_hz);
        let papr = metrics::papr_db(&current)?;
        if papr < best.1 {
            best = (current.clone(), papr);
        }
        if papr <= cfg.papr_target_db + 0.05 {
            break;
        }
    }
    let (signal, papr_db) = best;
    let target_missed = papr_db > cfg.papr_target_db + 0.3;
    if target_missed {
        log::warn!(
            "CFR reached {papr_db:.2} dB after {iterations} iterations, target {:.2} dB",
            cfg.papr_target_db
        );
    }
    Ok(CfrOutcome {
        signal,
        papr_db,
        iterations,
        target_missed,
    })
}

/// One RNN input frame: `[I, Q, |x|, |x|^3, sin(theta), cos(theta)]`.
pub type Feature = [f64; FEATURE_SIZE];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeq {
    pub frames: Vec<Feature>,
}

impl FeatureSeq {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Features of a single sample. Zero magnitude maps to `sin = cos = 0`.
#[inline]
pub fn feature(x: Complex64) -> Feature {
    let mag = x.norm();
    let (sin, cos) = if mag > 0.0 {
        (x.im / mag, x.re / mag)
    } else {
        (0.0, 0.0)
    };
    [x.re, x.im, mag, mag * mag * mag, sin, cos]
}

pub fn extract_features(sig: &IqSignal) -> FeatureSeq {
    features_of(sig.samples())
}

pub fn features_of(samples: &[Complex64]) -> FeatureSeq {
    FeatureSeq {
        frames: samples.iter().map(|&x| feature(x)).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1], got {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Segment lengths by largest-remainder apportionment, ties to the earlier segment.
    pub fn lengths(&self, n: usize) -> [usize; 3] {
        let exact = [self.train, self.val, self.test].map(|f| f * n as f64);
        let mut lens = exact.map(|e| e.floor() as usize);
        let mut left = n - lens.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            lens[i] += 1;
            left -= 1;
        }
        lens
    }
}

/// An input/target pair with equal lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPair {
    pub input: IqSignal,
    pub target: IqSignal,
}

impl SignalPair {
    pub fn new(input: IqSignal, target: IqSignal) -> Result<Self> {
        if input.len() != target.len() {
            return Err(Error::Data(format!(
                "input has {} samples but target has {}",
                input.len(),
                target.len()
            )));
        }
        Ok(Self { input, target })
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pair: SignalPair,
    pub split: SplitFractions,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: SignalPair,
    pub val: SignalPair,
    pub test: SignalPair,
}

/// Contiguous chronological split. Every segment must hold at least `min_segment` samples.
pub fn split_dataset(ds: &Dataset, min_segment: usize) -> Result<Splits> {
    ds.split.validate()?;
    let n = ds.pair.len();
    let lens = ds.split.lengths(n);
    let min_segment = min_segment.max(1);
    for (name, len) in ["train", "val", "test"].iter().zip(lens) {
        if len < min_segment {
            return Err(Error::Data(format!(
                "{name} segment has {len} samples, fewer than the minimum {min_segment}"
            )));
        }
    }
    let cut = |a: usize, b: usize| -> Result<SignalPair> {
        SignalPair::new(ds.pair.input.slice(a, b)?, ds.pair.target.slice(a, b)?)
    };
    let (a, b) = (lens[0], lens[0] + lens[1]);
    Ok(Splits {
        train: cut(0, a)?,
        val: cut(a, b)?,
        test: cut(b, n)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub sample_rate_hz: f64,
    pub normalization_scale: f64,
}

pub fn meta_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub const DATASET_HEADER: &str = "I_in,Q_in,I_out,Q_out";

/// Writes `I_in,Q_in,I_out,Q_out` rows plus a `<path>.meta.json` sidecar.
pub fn write_dataset_csv(path: &Path, pair: &SignalPair, normalization_scale: f64) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{DATASET_HEADER}").map_err(io)?;
    for (x, y) in pair.input.samples().iter().zip(pair.target.samples()) {
        // shortest round-trip representation, always >= 9 significant digits for non-trivial values
        writeln!(w, "{:e},{:e},{:e},{:e}", x.re, x.im, y.re, y.im).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let meta = DatasetMeta {
        sample_rate_hz: pair.input.sample_rate_hz(),
        normalization_scale,
    };
    let mpath = meta_path(path);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::format(&mpath, e))?;
    std::fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))
}

pub fn read_dataset_csv(path: &Path) -> Result<(SignalPair, DatasetMeta)> {
    let mpath = meta_path(path);
    let meta_text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let meta: DatasetMeta =
        serde_json::from_str(&meta_text).map_err(|e| Error::format(&mpath, e))?;

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    if header.trim() != DATASET_HEADER {
        return Err(Error::format(
            path,
            format!("expected header `{DATASET_HEADER}`, found `{header}`"),
        ));
    }
    let mut input = Vec::new();
    let mut target = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("row {}: {e}", i + 2)))?;
        if vals.len() != 4 {
            return Err(Error::format(
                path,
                format!("row {} has {} columns, expected 4", i + 2, vals.len()),
            ));
        }
        input.push(Complex64::new(vals[0], vals[1]));
        target.push(Complex64::new(vals[2], vals[3]));
    }
    let pair = SignalPair::new(
        IqSignal::new(input, meta.sample_rate_hz)?,
        IqSignal::new(target, meta.sample_rate_hz)?,
    )?;
    Ok((pair, meta))
}

/// Complex exponential at `freq_hz`, handy for spectral tests.
pub fn tone(freq_hz: f64, sample_rate_hz: f64, len: usize, amplitude: f64) -> Result<IqSignal> {
    let samples = (0..len)
        .map(|n| Complex64::from_polar(amplitude, 2.0 * PI * freq_hz * n as f64 / sample_rate_hz))
        .collect();
    IqSignal::new(samples, sample_rate_hz)
}
