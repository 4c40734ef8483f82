//! Run configuration: one TOML document drives every pipeline stage.

use std::path::{Path, PathBuf};

use deltadpd::cost::EnergyModel;
use deltadpd::delta::ThresholdConfig;
use deltadpd::metrics::{AcprSpec, PsdConfig, AMPM_EPS};
use deltadpd::rnncore::CellKind;
use deltadpd::signal::{OfdmConfig, SplitFractions};
use deltadpd::train::TrainConfig;
use deltadpd::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSection {
    pub ofdm: OfdmConfig,
    /// PAPR the crest-factor reduction aims for, in dB.
    pub papr_target_db: f64,
    pub cfr_max_iterations: usize,
    pub split: SplitFractions,
}

impl Default for SignalSection {
    fn default() -> Self {
        Self {
            ofdm: OfdmConfig::default(),
            papr_target_db: 10.0,
            cfr_max_iterations: 8,
            split: SplitFractions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaSection {
    /// Memory-polynomial coefficient file; the built-in reference PA when absent.
    pub coeff_file: Option<PathBuf>,
    /// Input scale used when recording surrogate identification data, so the
    /// surrogate also covers the peak expansion a predistorter produces.
    pub ident_drive: f64,
}

impl Default for PaSection {
    fn default() -> Self {
        Self { coeff_file: None, ident_drive: 1.4 }
    }
}

fn desk_train() -> TrainConfig {
    TrainConfig {
        frame_length: 64,
        frame_stride: 16,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehavioralSection {
    pub hidden_size: usize,
    /// `train-pa` fails when the surrogate's validation NMSE is above this.
    pub nmse_gate_db: f64,
    pub train: TrainConfig,
}

impl Default for BehavioralSection {
    fn default() -> Self {
        Self { hidden_size: 23, nmse_gate_db: -35.0, train: desk_train() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpdSection {
    pub cell: CellKind,
    pub hidden_size: usize,
    /// Linear gain the cascade should realize; the PA small-signal gain when absent.
    pub target_gain: Option<f64>,
    pub train: TrainConfig,
    /// Optional second stage with delta thresholds active in the forward pass.
    pub finetune: Option<TrainConfig>,
}

impl Default for DpdSection {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            hidden_size: 15,
            target_gain: None,
            train: desk_train(),
            finetune: Some(TrainConfig {
                epochs: 150,
                lr0: 3e-3,
                delta_thresholds: Some(ThresholdConfig { theta_phi: 0.0, theta_h: 0.1 }),
                ..desk_train()
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// `(theta_phi, theta_h)` pairs, evaluated in this order.
    pub thresholds: Vec<[f64; 2]>,
    /// Bins of the exported AM/AM-AM/PM curves; 0 exports every sample.
    pub amam_bins: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            thresholds: [0.0, 0.008, 0.016, 0.05, 0.1, 0.4]
                .iter()
                .map(|&t| [0.0, t])
                .collect(),
            amam_bins: 64,
        }
    }
}

impl SweepSection {
    pub fn points(&self) -> Result<Vec<ThresholdConfig>> {
        self.thresholds
            .iter()
            .map(|[p, h]| ThresholdConfig::new(*p, *h))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub acpr: AcprSpec,
    pub psd: PsdConfig,
    pub energy: EnergyModel,
    /// Input magnitudes below this are left out of AM/PM.
    pub ampm_eps: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            acpr: AcprSpec::default(),
            psd: PsdConfig::default(),
            energy: EnergyModel::default(),
            ampm_eps: AMPM_EPS,
        }
    }
}

/// Complete pipeline configuration.
///
/// The top-level `seed` replaces every per-section seed: the OFDM payload
/// uses `seed`, surrogate training `seed + 1`, predistorter initialization and
/// training `seed + 2` and fine-tuning `seed + 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub signal: SignalSection,
    pub pa: PaSection,
    pub behavioral: BehavioralSection,
    pub dpd: DpdSection,
    pub sweep: SweepSection,
    pub metrics: MetricsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("runs/default"),
            signal: SignalSection::default(),
            pa: PaSection::default(),
            behavioral: BehavioralSection::default(),
            dpd: DpdSection::default(),
            sweep: SweepSection::default(),
            metrics: MetricsSection::default(),
        }
        .with_derived_seeds()
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg.with_derived_seeds())
    }

    /// Reads a config file. Relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(f) = &cfg.pa.coeff_file {
            if f.is_relative() {
                cfg.pa.coeff_file = Some(base.join(f));
            }
        }
        Ok(cfg.with_derived_seeds())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.with_derived_seeds()
    }

    fn with_derived_seeds(mut self) -> Self {
        let s = self.seed;
        self.signal.ofdm.seed = s;
        self.behavioral.train.seed = s.wrapping_add(1);
        self.dpd.train.seed = s.wrapping_add(2);
        if let Some(ft) = &mut self.dpd.finetune {
            ft.seed = s.wrapping_add(3);
        }
        self
    }

    /// Forces ordered gradient reduction in every training stage.
    pub fn force_deterministic(&mut self) {
        self.behavioral.train.deterministic = true;
        self.dpd.train.deterministic = true;
        if let Some(ft) = &mut self.dpd.finetune {
            ft.deterministic = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.signal.ofdm.validate()?;
        self.signal.split.validate()?;
        if !(self.signal.papr_target_db > 0.0) {
            return Err(Error::Config("signal.papr_target_db must be > 0".into()));
        }
        if !(self.pa.ident_drive > 0.0 && self.pa.ident_drive.is_finite()) {
            return Err(Error::Config("pa.ident_drive must be > 0".into()));
        }
        if let Some(f) = &self.pa.coeff_file {
            if !f.exists() {
                return Err(Error::io(f, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        if self.behavioral.hidden_size == 0 || self.dpd.hidden_size == 0 {
            return Err(Error::Config("hidden sizes must be >= 1".into()));
        }
        self.behavioral.train.validate()?;
        self.dpd.train.validate()?;
        if let Some(ft) = &self.dpd.finetune {
            ft.validate()?;
            if ft.delta_thresholds.is_none() {
                return Err(Error::Config("dpd.finetune needs delta_thresholds".into()));
            }
        }
        if let Some(g) = self.dpd.target_gain {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config("dpd.target_gain must be > 0".into()));
            }
        }
        self.sweep.points()?;
        self.metrics.psd.validate()?;
        self.metrics.energy.validate()?;
        if !(self.metrics.ampm_eps >= 0.0) {
            return Err(Error::Config("metrics.ampm_eps must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config always serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded. The output
    /// directory is left out so identical runs in different places match.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
