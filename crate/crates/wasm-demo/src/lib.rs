//! Browser demo: a short OFDM burst through the reference PA, with and
//! without a bundled delta-GRU predistorter.
//!
//! Every operation returns a JSON string so the page needs no bindings
//! beyond `wasm-bindgen` itself. The `*_report` functions hold the logic and
//! are what the native tests exercise.

use deltadpd::cost::{energy_per_inference, EnergyModel};
use deltadpd::delta::{run_delta, ThresholdConfig};
use deltadpd::metrics::{acpr_dbc, amam_ampm, nmse_db, papr_db, psd, AcprSpec, PsdConfig, AMPM_EPS};
use deltadpd::pa::{default_test_pa, pa_simulate, MemoryPolyPa};
use deltadpd::rnncore::{DpdModel, WeightFile};
use deltadpd::signal::{apply_cfr, extract_features, generate_ofdm, CfrConfig, IqSignal, OfdmConfig};
use deltadpd::{Complex64, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MODEL_JSON: &str = include_str!("../assets/dpd_model.json");

/// PAPR the bundled predistorter was trained at.
pub const TRAINED_PAPR_DB: f64 = 10.0;

const PSD_FFT: usize = 1024;
const CURVE_BINS: usize = 48;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub freq_mhz: Vec<f64>,
    pub input_db: Vec<f64>,
    pub output_db: Vec<f64>,
    pub papr_db: f64,
    pub acpr_left_dbc: f64,
    pub acpr_right_dbc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityReport {
    pub theta_h: f64,
    pub gamma: f64,
    pub gamma_h: f64,
    pub mul: f64,
    pub add: f64,
    pub mem: f64,
    pub energy_j: f64,
    pub dense_energy_j: f64,
    pub nmse_db: f64,
    pub acpr_left_dbc: f64,
    pub acpr_right_dbc: f64,
    pub freq_mhz: Vec<f64>,
    pub output_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveReport {
    pub abs_in: Vec<f64>,
    pub abs_out: Vec<f64>,
    pub phase_deg: Vec<Option<f64>>,
}

/// Holds the raw burst, the reference PA and the bundled predistorter.
#[wasm_bindgen]
pub struct Demo {
    ofdm: OfdmConfig,
    raw: IqSignal,
    nominal: IqSignal,
    pa: MemoryPolyPa,
    model: DpdModel<f32>,
    gain: f64,
    psd_cfg: PsdConfig,
    acpr: AcprSpec,
}

fn cfr(ofdm: &OfdmConfig, raw: &IqSignal, papr_target_db: f64) -> Result<IqSignal> {
    let mut sig = apply_cfr(raw, &CfrConfig::for_ofdm(ofdm, papr_target_db))?.signal;
    sig.normalize_peak();
    Ok(sig)
}

fn mhz(f: &[f64]) -> Vec<f64> {
    f.iter().map(|v| v / 1e6).collect()
}

impl Demo {
    pub fn create(seed: u64) -> Result<Self> {
        let ofdm = OfdmConfig { n_symbols: 1, seed, ..OfdmConfig::default() };
        let raw = generate_ofdm(&ofdm)?;
        let nominal = cfr(&ofdm, &raw, TRAINED_PAPR_DB)?;
        let file: WeightFile = serde_json::from_str(MODEL_JSON)
            .map_err(|e| deltadpd::Error::format("dpd_model.json", e))?;
        let pa = default_test_pa();
        Ok(Self {
            gain: pa.small_signal_gain(),
            model: file.into_model()?.cast::<f32>(),
            ofdm,
            raw,
            nominal,
            pa,
            psd_cfg: PsdConfig { fft_size: PSD_FFT, ..PsdConfig::default() },
            acpr: AcprSpec::default(),
        })
    }

    pub fn samples(&self) -> usize {
        self.nominal.len()
    }

    /// Input and PA output spectra without predistortion, at a drive level
    /// relative to the nominal peak and a chosen crest-factor target.
    pub fn spectrum_report(&self, drive: f64, papr_target_db: f64) -> Result<SpectrumReport> {
        let x = cfr(&self.ofdm, &self.raw, papr_target_db)?.scaled(Complex64::new(drive, 0.0));
        let y = pa_simulate(&self.pa, &x)?;
        let sx = psd(&x, &self.psd_cfg)?;
        let sy = psd(&y, &self.psd_cfg)?;
        let a = acpr_dbc(&y, &self.acpr, &self.psd_cfg)?;
        Ok(SpectrumReport {
            freq_mhz: mhz(&sx.freqs_hz),
            input_db: sx.density_db(),
            output_db: sy.density_db(),
            papr_db: papr_db(&x)?,
            acpr_left_dbc: a.left_dbc,
            acpr_right_dbc: a.right_dbc,
        })
    }

    /// Runs the predistorter at hidden-state threshold `theta_h` and scores
    /// the linearized PA output.
    pub fn sparsity_report(&self, theta_h: f64) -> Result<SparsityReport> {
        let feats = extract_features(&self.nominal);
        let fs = self.nominal.sample_rate_hz();
        let th = ThresholdConfig::new(0.0, theta_h)?;
        let (u, stats) = run_delta(&self.model, &feats, &th, fs)?;
        let (_, dense) = run_delta(&self.model, &feats, &ThresholdConfig::dense(), fs)?;
        let y = pa_simulate(&self.pa, &u)?;
        let reference = self.nominal.scaled(Complex64::new(self.gain, 0.0));
        let a = acpr_dbc(&y, &self.acpr, &self.psd_cfg)?;
        let spec = psd(&y, &self.psd_cfg)?;
        let energy = EnergyModel::default();
        let ops = stats.per_inference();
        Ok(SparsityReport {
            theta_h,
            gamma: stats.gamma_overall(),
            gamma_h: stats.gamma_h(),
            mul: ops.mul,
            add: ops.add,
            mem: ops.mem,
            energy_j: energy_per_inference(ops, &energy)?,
            dense_energy_j: energy_per_inference(dense.per_inference(), &energy)?,
            nmse_db: nmse_db(&reference, &y)?,
            acpr_left_dbc: a.left_dbc,
            acpr_right_dbc: a.right_dbc,
            freq_mhz: mhz(&spec.freqs_hz),
            output_db: spec.density_db(),
        })
    }

    /// Binned AM/AM and AM/PM of the PA output against the undistorted input,
    /// with the predistorter in front when `with_dpd` is set.
    pub fn curve_report(&self, drive: f64, with_dpd: bool) -> Result<CurveReport> {
        let x = self.nominal.scaled(Complex64::new(drive, 0.0));
        let u = if with_dpd {
            run_delta(&self.model, &extract_features(&x), &ThresholdConfig::dense(), x.sample_rate_hz())?.0
        } else {
            x.clone()
        };
        let y = pa_simulate(&self.pa, &u)?;
        let pts = amam_ampm(&x, &y, AMPM_EPS)?.binned(CURVE_BINS);
        Ok(CurveReport {
            abs_in: pts.iter().map(|p| p.abs_in).collect(),
            abs_out: pts.iter().map(|p| p.abs_out).collect(),
            phase_deg: pts.iter().map(|p| p.phase_deg).collect(),
        })
    }
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<Demo, JsError> {
        Demo::create(seed as u64).map_err(|e| JsError::new(&e.to_string()))
    }

    #[wasm_bindgen(js_name = sampleCount)]
    pub fn sample_count(&self) -> usize {
        self.samples()
    }

    pub fn spectrum(&self, drive: f64, papr_target_db: f64) -> std::result::Result<String, JsError> {
        to_js(self.spectrum_report(drive, papr_target_db))
    }

    pub fn sparsity(&self, theta_h: f64) -> std::result::Result<String, JsError> {
        to_js(self.sparsity_report(theta_h))
    }

    pub fn curves(&self, drive: f64, with_dpd: bool) -> std::result::Result<String, JsError> {
        to_js(self.curve_report(drive, with_dpd))
    }
}
