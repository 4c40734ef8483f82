//! The pipeline stages behind each subcommand.
//!
//! Stages communicate only through files in the output directory, so each
//! subcommand can be rerun on its own:
//!
//! | file | written by |
//! |------|------------|
//! | `dataset.csv` | `gen`: PA input/output at nominal drive |
//! | `ident.csv` | `gen`: PA input/output at identification drive |
//! | `pa_model.json`, `pa_train.json` | `train-pa` |
//! | `dpd_dense.json`, `dpd_model.json`, `dpd_train.json`, `dpd_finetune.json` | `train-dpd` |
//! | `sweep.csv`, `summary.json`, `sweep/*.csv` | `sweep` |
//! | `eval.json` | `eval` |

use std::path::{Path, PathBuf};

use deltadpd::cost::{cost_report, energy_per_inference, CostReport};
use deltadpd::delta::{run_delta, SparsityStats, ThresholdConfig};
use deltadpd::metrics::{amam_ampm, evaluate, papr_db, psd, BinnedPoint, MetricsReport};
use deltadpd::pa::{default_test_pa, fit_behavioral, pa_simulate, MemoryPolyPa, PaBehavModel};
use deltadpd::rnncore::{init_weights, read_model, write_model, DpdModel};
use deltadpd::signal::{
    apply_cfr, extract_features, generate_ofdm, read_dataset_csv, split_dataset, write_dataset_csv,
    CfrConfig, Dataset, IqSignal, SignalPair,
};
use deltadpd::train::{finetune_with_delta, train_dpd, TrainReport};
use deltadpd::{Complex64, Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::report::{write_json, SweepRow, SWEEP_HEADER};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Artifact locations inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn dataset(&self) -> PathBuf {
        self.file("dataset.csv")
    }

    pub fn ident(&self) -> PathBuf {
        self.file("ident.csv")
    }

    pub fn pa_model(&self) -> PathBuf {
        self.file("pa_model.json")
    }

    pub fn dpd_dense(&self) -> PathBuf {
        self.file("dpd_dense.json")
    }

    pub fn dpd_model(&self) -> PathBuf {
        self.file("dpd_model.json")
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.file("sweep.csv")
    }

    pub fn sweep_dir(&self) -> PathBuf {
        self.file("sweep")
    }

    fn ensure(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))
    }
}

pub fn ground_truth_pa(cfg: &RunConfig) -> Result<MemoryPolyPa> {
    match &cfg.pa.coeff_file {
        Some(p) => MemoryPolyPa::read_toml(p),
        None => Ok(default_test_pa()),
    }
}

/// Crest-factor-reduced, peak-normalized test signal.
pub fn standard_signal(cfg: &RunConfig) -> Result<(IqSignal, GenReport)> {
    let raw = generate_ofdm(&cfg.signal.ofdm)?;
    let raw_papr = papr_db(&raw)?;
    let cfr = CfrConfig {
        max_iterations: cfg.signal.cfr_max_iterations,
        ..CfrConfig::for_ofdm(&cfg.signal.ofdm, cfg.signal.papr_target_db)
    };
    let out = apply_cfr(&raw, &cfr)?;
    if out.target_missed {
        log::warn!(
            "CFR reached {:.2} dB, above the {:.2} dB target",
            out.papr_db,
            cfg.signal.papr_target_db
        );
    }
    let mut sig = out.signal;
    let scale = sig.normalize_peak();
    let report = GenReport {
        samples: sig.len(),
        sample_rate_hz: sig.sample_rate_hz(),
        papr_before_cfr_db: raw_papr,
        papr_db: papr_db(&sig)?,
        cfr_iterations: out.iterations,
        cfr_target_missed: out.target_missed,
        normalization_scale: scale,
    };
    Ok((sig, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    pub samples: usize,
    pub sample_rate_hz: f64,
    pub papr_before_cfr_db: f64,
    pub papr_db: f64,
    pub cfr_iterations: usize,
    pub cfr_target_missed: bool,
    pub normalization_scale: f64,
}

pub fn cmd_gen(cfg: &RunConfig) -> CliResult<GenReport> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.output_dir);
    lay.ensure()?;
    let pa = ground_truth_pa(cfg)?;
    let (x, report) = standard_signal(cfg)?;
    let y = pa_simulate(&pa, &x)?;
    write_dataset_csv(&lay.dataset(), &SignalPair::new(x.clone(), y)?, report.normalization_scale)?;
    let xid = x.scaled(Complex64::new(cfg.pa.ident_drive, 0.0));
    let yid = pa_simulate(&pa, &xid)?;
    write_dataset_csv(
        &lay.ident(),
        &SignalPair::new(xid, yid)?,
        report.normalization_scale * cfg.pa.ident_drive,
    )?;
    write_json(&lay.file("gen.json"), &report)?;
    Ok(report)
}

fn load_dataset(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let (pair, _) = read_dataset_csv(path)?;
    Ok(Dataset { pair, split: cfg.signal.split })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaTrainOutcome {
    pub params: usize,
    pub val_nmse_db: f64,
    pub gate_db: f64,
    pub passed: bool,
}

/// Fits the surrogate and writes it even when the gate fails, so the result
/// can be inspected; the failure is reported through the returned error.
pub fn cmd_train_pa(cfg: &RunConfig) -> CliResult<PaTrainOutcome> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.output_dir);
    let data = load_dataset(&lay.ident(), cfg)?;
    let (model, report) = fit_behavioral(&data, cfg.behavioral.hidden_size, &cfg.behavioral.train)?;
    model.write(&lay.pa_model())?;
    write_json(&lay.file("pa_train.json"), &report)?;
    let outcome = PaTrainOutcome {
        params: model.param_count(),
        val_nmse_db: report.best_val_nmse_db,
        gate_db: cfg.behavioral.nmse_gate_db,
        passed: report.best_val_nmse_db <= cfg.behavioral.nmse_gate_db,
    };
    if !outcome.passed {
        return Err(CliError::GateUnmet(format!(
            "surrogate validation NMSE {:.2} dB is above {:.2} dB",
            outcome.val_nmse_db, outcome.gate_db
        )));
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpdTrainOutcome {
    pub params: usize,
    pub target_gain: f64,
    pub dense_val_nmse_db: f64,
    pub finetune_val_nmse_db: Option<f64>,
}

pub fn target_gain(cfg: &RunConfig) -> Result<f64> {
    match cfg.dpd.target_gain {
        Some(g) => Ok(g),
        None => Ok(ground_truth_pa(cfg)?.small_signal_gain()),
    }
}

pub fn cmd_train_dpd(cfg: &RunConfig) -> CliResult<DpdTrainOutcome> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.output_dir);
    let data = load_dataset(&lay.dataset(), cfg)?;
    let pa = PaBehavModel::read(&lay.pa_model())?;
    let gain = target_gain(cfg)?;
    let init = init_weights(cfg.dpd.cell, cfg.dpd.hidden_size, cfg.dpd.train.seed)?;
    let (dense, report) = train_dpd(&pa, init, &data, &cfg.dpd.train, gain)?;
    write_model(&lay.dpd_dense(), &dense)?;
    write_json(&lay.file("dpd_train.json"), &report)?;
    let mut outcome = DpdTrainOutcome {
        params: dense.param_count(),
        target_gain: gain,
        dense_val_nmse_db: report.best_val_nmse_db,
        finetune_val_nmse_db: None,
    };
    let final_model = match &cfg.dpd.finetune {
        Some(ft) => {
            let (tuned, ft_report): (DpdModel, TrainReport) =
                finetune_with_delta(dense, &pa, &data, ft, gain)?;
            write_json(&lay.file("dpd_finetune.json"), &ft_report)?;
            outcome.finetune_val_nmse_db = Some(ft_report.best_val_nmse_db);
            tuned
        }
        None => dense,
    };
    write_model(&lay.dpd_model(), &final_model)?;
    Ok(outcome)
}

/// One evaluated threshold setting with everything needed for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub thresholds: ThresholdConfig,
    pub metrics: MetricsReport,
    pub stats: SparsityStats,
    pub cost: CostReport,
}

struct TestBench {
    x: IqSignal,
    reference: IqSignal,
    pa: MemoryPolyPa,
}

impl TestBench {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let lay = Layout::new(&cfg.output_dir);
        let data = load_dataset(&lay.dataset(), cfg)?;
        let splits = split_dataset(&data, cfg.metrics.psd.fft_size)?;
        let x = splits.test.input;
        let reference = x.scaled(Complex64::new(target_gain(cfg)?, 0.0));
        Ok(Self { x, reference, pa: ground_truth_pa(cfg)? })
    }

    fn run(&self, model: &DpdModel, th: ThresholdConfig, cfg: &RunConfig) -> Result<(PointResult, IqSignal)> {
        let (u, stats) = run_delta(&model.cast::<f32>(), &extract_features(&self.x), &th, self.x.sample_rate_hz())?;
        let y = pa_simulate(&self.pa, &u)?;
        let m = &cfg.metrics;
        let metrics = evaluate(&self.reference, &y, &m.acpr, &m.psd)?;
        let per = stats.per_inference();
        let cost = cost_report(model, stats.gamma_overall(), per, &m.energy)?;
        Ok((PointResult { thresholds: th, metrics, stats, cost }, y))
    }
}

fn write_binned(path: &Path, pts: &[BinnedPoint]) -> Result<()> {
    let mut s = String::from("abs_in,abs_out,phase_deg\n");
    for p in pts {
        match p.phase_deg {
            Some(ph) => s.push_str(&format!("{},{},{}\n", p.abs_in, p.abs_out, ph)),
            None => s.push_str(&format!("{},{},\n", p.abs_in, p.abs_out)),
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_curves(dir: &Path, tag: &str, x: &IqSignal, y: &IqSignal, cfg: &RunConfig) -> Result<()> {
    psd(y, &cfg.metrics.psd)?.write_csv(&dir.join(format!("psd_{tag}.csv")))?;
    let curve = amam_ampm(x, y, cfg.metrics.ampm_eps)?;
    let path = dir.join(format!("amam_{tag}.csv"));
    if cfg.sweep.amam_bins == 0 {
        std::fs::write(&path, curve.to_csv()).map_err(|e| Error::io(&path, e))
    } else {
        write_binned(&path, &curve.binned(cfg.sweep.amam_bins))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub version: String,
    pub config_hash: String,
    pub test_samples: usize,
    pub model_params: usize,
    pub no_dpd: MetricsReport,
    pub rows: Vec<SweepRow>,
    pub points: Vec<PointResult>,
}

/// Evaluates every sweep point on the test split through the ground-truth PA.
pub fn cmd_sweep(cfg: &RunConfig) -> CliResult<SweepSummary> {
    cfg.validate()?;
    let lay = Layout::new(&cfg.output_dir);
    let model = read_model(&lay.dpd_model())?;
    let bench = TestBench::new(cfg)?;
    let mut points = cfg.sweep.points()?;
    if points.is_empty() {
        return Err(Error::Config("sweep.thresholds is empty".into()).into());
    }
    points.sort_by(|a, b| a.theta_h.total_cmp(&b.theta_h).then(a.theta_phi.total_cmp(&b.theta_phi)));

    let results: Vec<(PointResult, IqSignal)> = points
        .par_iter()
        .map(|th| bench.run(&model, *th, cfg))
        .collect::<Result<_>>()?;
    let baseline_energy = match results.iter().find(|(p, _)| p.thresholds == ThresholdConfig::dense()) {
        Some((p, _)) => p.cost.energy_per_inference_j,
        None => bench.run(&model, ThresholdConfig::dense(), cfg)?.0.cost.energy_per_inference_j,
    };

    let dir = lay.sweep_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let no_dpd_out = pa_simulate(&bench.pa, &bench.x)?;
    let m = &cfg.metrics;
    let no_dpd = evaluate(&bench.reference, &no_dpd_out, &m.acpr, &m.psd)?;
    write_curves(&dir, "no_dpd", &bench.x, &no_dpd_out, cfg)?;

    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    let mut rows = Vec::new();
    for (i, (p, y)) in results.iter().enumerate() {
        let row = SweepRow::from_point(p, baseline_energy);
        csv.push_str(&row.to_csv_line());
        csv.push('\n');
        rows.push(row);
        write_curves(&dir, &format!("{i:02}"), &bench.x, y, cfg)?;
    }
    let path = lay.sweep_csv();
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    let summary = SweepSummary {
        version: VERSION.to_string(),
        config_hash: cfg.hash(),
        test_samples: bench.x.len(),
        model_params: model.param_count(),
        no_dpd,
        rows,
        points: results.into_iter().map(|(p, _)| p).collect(),
    };
    write_json(&lay.file("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub version: String,
    pub config_hash: String,
    pub model: String,
    pub no_dpd: MetricsReport,
    pub point: PointResult,
    pub energy_j: f64,
}

/// Single-point variant of the sweep.
pub fn cmd_eval(cfg: &RunConfig, model_path: Option<&Path>, th: ThresholdConfig) -> CliResult<EvalSummary> {
    cfg.validate()?;
    th.validate()?;
    let lay = Layout::new(&cfg.output_dir);
    let path = model_path.map(Path::to_path_buf).unwrap_or_else(|| lay.dpd_model());
    let model = read_model(&path)?;
    let bench = TestBench::new(cfg)?;
    let (point, _) = bench.run(&model, th, cfg)?;
    let no_dpd_out = pa_simulate(&bench.pa, &bench.x)?;
    let no_dpd = evaluate(&bench.reference, &no_dpd_out, &cfg.metrics.acpr, &cfg.metrics.psd)?;
    let energy_j = energy_per_inference(point.stats.per_inference(), &cfg.metrics.energy)?;
    let summary = EvalSummary {
        version: VERSION.to_string(),
        config_hash: cfg.hash(),
        model: path.display().to_string(),
        no_dpd,
        point,
        energy_j,
    };
    write_json(&lay.file("eval.json"), &summary)?;
    Ok(summary)
}

/// `gen`, `train-pa`, `train-dpd` and `sweep` in sequence.
pub fn cmd_all(cfg: &RunConfig) -> CliResult<SweepSummary> {
    cmd_gen(cfg)?;
    cmd_train_pa(cfg)?;
    cmd_train_dpd(cfg)?;
    cmd_sweep(cfg)
}
