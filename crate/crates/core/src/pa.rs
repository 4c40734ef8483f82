//! Power amplifier stand-ins.
//!
//! [`MemoryPolyPa`] is the ground-truth simulator: an odd-order memory
//! polynomial `y_t = g * sum_{k,m} a_{k,m} x_{t-m} |x_{t-m}|^{k-1}` with
//! zero-padded history. [`PaBehavModel`] is a recurrent surrogate learned from
//! input/output data; DPD training differentiates through it while the
//! polynomial is kept for final evaluation.

use std::collections::BTreeSet;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rnncore::{self, forward, CellKind, DpdModel};
use crate::signal::{extract_features, IqSignal};
use crate::train::{self, TrainConfig, TrainReport};

pub const ALLOWED_ORDERS: [u32; 4] = [1, 3, 5, 7];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaTerm {
    /// Odd nonlinearity order.
    pub k: u32,
    /// Memory tap.
    pub m: usize,
    pub re: f64,
    pub im: f64,
}

impl PaTerm {
    pub fn new(k: u32, m: usize, coeff: Complex64) -> Self {
        Self { k, m, re: coeff.re, im: coeff.im }
    }

    pub fn coeff(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryPolyPa {
    #[serde(default)]
    pub gain_db: f64,
    pub terms: Vec<PaTerm>,
}

impl MemoryPolyPa {
    pub fn new(terms: Vec<PaTerm>, gain_db: f64) -> Result<Self> {
        let pa = Self { gain_db, terms };
        pa.validate()?;
        Ok(pa)
    }

    pub fn identity() -> Self {
        Self {
            gain_db: 0.0,
            terms: vec![PaTerm::new(1, 0, Complex64::new(1.0, 0.0))],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gain_db.is_finite() {
            return Err(Error::Config(format!("PA gain_db must be finite, got {}", self.gain_db)));
        }
        let mut seen = BTreeSet::new();
        for t in &self.terms {
            if !ALLOWED_ORDERS.contains(&t.k) {
                return Err(Error::Config(format!(
                    "PA order k={} not in {ALLOWED_ORDERS:?}",
                    t.k
                )));
            }
            if !(t.re.is_finite() && t.im.is_finite()) {
                return Err(Error::Config(format!("PA coefficient ({}, {}) is not finite", t.k, t.m)));
            }
            if !seen.insert((t.k, t.m)) {
                return Err(Error::Config(format!("PA coefficient ({}, {}) listed twice", t.k, t.m)));
            }
        }
        if self.coeff(1, 0).norm() == 0.0 {
            return Err(Error::Config("PA needs a nonzero linear coefficient a_(1,0)".into()));
        }
        Ok(())
    }

    pub fn coeff(&self, k: u32, m: usize) -> Complex64 {
        self.terms
            .iter()
            .find(|t| t.k == k && t.m == m)
            .map(PaTerm::coeff)
            .unwrap_or_default()
    }

    pub fn memory_depth(&self) -> usize {
        self.terms.iter().map(|t| t.m).max().unwrap_or(0)
    }

    fn linear_gain(&self) -> f64 {
        10f64.powf(self.gain_db / 20.0)
    }

    /// `|a_(1,0)|` scaled by the output gain.
    pub fn small_signal_gain(&self) -> f64 {
        self.coeff(1, 0).norm() * self.linear_gain()
    }

    /// Memoryless response to a constant input of amplitude `r` (all taps summed).
    pub fn static_response(&self, r: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.coeff() * r.powi(t.k as i32))
            .sum::<Complex64>()
            * self.linear_gain()
    }

    pub fn write_toml(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_toml(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pa: Self = toml::from_str(&text).map_err(|e| Error::format(path, e))?;
        pa.validate()?;
        Ok(pa)
    }
}

/// Runs the memory polynomial over `x`. History before the first sample is zero.
pub fn pa_simulate(pa: &MemoryPolyPa, x: &IqSignal) -> Result<IqSignal> {
    pa.validate()?;
    let xs = x.samples();
    let n = xs.len();
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for order in ALLOWED_ORDERS {
        let taps: Vec<(usize, Complex64)> = pa
            .terms
            .iter()
            .filter(|t| t.k == order)
            .map(|t| (t.m, t.coeff()))
            .collect();
        if taps.is_empty() {
            continue;
        }
        let basis: Vec<Complex64> = xs
            .iter()
            .map(|v| *v * v.norm().powi(order as i32 - 1))
            .collect();
        for (m, a) in taps {
            for t in m..n {
                y[t] += a * basis[t - m];
            }
        }
    }
    let g = pa.linear_gain();
    if g != 1.0 {
        y.iter_mut().for_each(|v| *v *= g);
    }
    IqSignal::new(y, x.sample_rate_hz())
}

/// Reference PA: about 2.2 dB static compression at unit drive, AM/PM up to
/// roughly 8 degrees and memory depth 4. Drives the standard 5 x 40 MHz test
/// signal to an ACPR near -35.5 dBc.
pub fn default_test_pa() -> MemoryPolyPa {
    let c = Complex64::new;
    let terms = vec![
        PaTerm::new(1, 0, c(1.0, 0.0)),
        PaTerm::new(3, 0, c(-0.30, 0.12)),
        PaTerm::new(5, 0, c(0.12, -0.05)),
        PaTerm::new(7, 0, c(-0.02, 0.0)),
        PaTerm::new(3, 1, c(-0.06, 0.03)),
        PaTerm::new(3, 2, c(0.03, -0.01)),
        PaTerm::new(3, 3, c(-0.015, 0.0)),
        PaTerm::new(3, 4, c(0.008, 0.0)),
        PaTerm::new(5, 1, c(0.02, 0.0)),
        PaTerm::new(5, 2, c(-0.01, 0.0)),
    ];
    MemoryPolyPa { gain_db: 0.0, terms }
}

/// Recurrent PA surrogate sharing the predistorter's network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PaBehavModel {
    pub net: DpdModel<f64>,
}

impl PaBehavModel {
    pub fn new(net: DpdModel<f64>) -> Result<Self> {
        net.validate()?;
        Ok(Self { net })
    }

    pub fn init(hidden_size: usize, seed: u64) -> Result<Self> {
        Self::new(rnncore::init_weights(CellKind::Gru, hidden_size, seed)?)
    }

    pub fn hidden_size(&self) -> usize {
        self.net.hidden_size()
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn apply(&self, x: &IqSignal) -> Result<IqSignal> {
        forward(&self.net, &extract_features(x), None, x.sample_rate_hz())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        rnncore::write_model(path, &self.net)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::new(rnncore::read_model(path)?)
    }
}

/// Trains a GRU behavioral model mapping the dataset input to its target.
pub fn fit_behavioral(
    data: &crate::signal::Dataset,
    hidden_size: usize,
    cfg: &TrainConfig,
) -> Result<(PaBehavModel, TrainReport)> {
    let init = rnncore::init_weights(CellKind::Gru, hidden_size, cfg.seed)?;
    let (net, report) = train::train_supervised(init, data, cfg)?;
    Ok((PaBehavModel::new(net)?, report))
}
