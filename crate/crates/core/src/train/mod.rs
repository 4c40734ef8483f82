//! End-to-end training of predistorters through a frozen PA surrogate.
//!
//! Training data is cut into overlapping frames; each frame starts from a zero
//! hidden state and is differentiated by exact backpropagation through time
//! through both the predistorter and the frozen surrogate. Frame gradients of a
//! batch are averaged and applied with AdamW; the learning rate drops on
//! validation plateaus and the best-validation weights are returned.

mod grad;
mod optim;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{optimizer_step, AdamWConfig, AdamWState, PlateauScheduler};

use crate::delta::{run_delta_samples, ThresholdConfig};
use crate::error::{Error, Result};
use crate::metrics::nmse_db;
use crate::pa::PaBehavModel;
use crate::rnncore::{forward_samples, DpdModel};
use crate::signal::{features_of, split_dataset, Dataset, IqSignal};
use grad::{frame_loss_grad, FrameWork, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub batch_size: usize,
    /// Truncated BPTT window.
    pub frame_length: usize,
    /// Offset between consecutive frame starts.
    pub frame_stride: usize,
    pub weight_decay: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    /// Minimum validation NMSE improvement in dB that resets the plateau counter.
    pub plateau_min_delta_db: f64,
    /// Learning rate is never reduced below this.
    pub min_lr: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
    pub adamw: AdamWConfig,
    pub seed: u64,
    /// Thresholds active in the forward pass (straight-through backward).
    pub delta_thresholds: Option<ThresholdConfig>,
    /// Reduce frame gradients in a fixed order.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr0: 5e-3,
            batch_size: 64,
            frame_length: 256,
            frame_stride: 128,
            weight_decay: 1e-4,
            plateau_patience: 10,
            plateau_factor: 0.5,
            plateau_min_delta_db: 0.01,
            min_lr: 1e-6,
            max_grad_norm: 0.0,
            adamw: AdamWConfig::default(),
            seed: 0,
            delta_thresholds: None,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be > 0");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.frame_length < 2 {
            return bad("frame_length must be >= 2");
        }
        if self.frame_stride < 1 {
            return bad("frame_stride must be >= 1");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.min_lr >= 0.0 && self.max_grad_norm >= 0.0) {
            return bad("weight_decay, min_lr and max_grad_norm must be >= 0");
        }
        if !(self.plateau_min_delta_db >= 0.0) {
            return bad("plateau_min_delta_db must be >= 0");
        }
        let a = &self.adamw;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adamw betas must lie in [0, 1) and eps be > 0");
        }
        if let Some(th) = &self.delta_thresholds {
            th.validate()?;
        }
        Ok(())
    }

    fn plateau(&self) -> PlateauScheduler {
        PlateauScheduler::new(self.plateau_patience, self.plateau_factor, self.plateau_min_delta_db)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nmse_db: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the returned weights.
    pub best_epoch: usize,
    pub best_val_nmse_db: f64,
}

impl TrainReport {
    pub fn train_loss(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_nmse_db(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_nmse_db).collect()
    }

    pub fn lr(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }
}

/// Learning rate after replaying a validation history through the plateau rule.
pub fn lr_schedule(history: &[f64], lr: f64, cfg: &TrainConfig) -> f64 {
    let mut sched = cfg.plateau();
    history.iter().fold(lr, |lr, &m| sched.step(m, lr))
}

/// A frame of aligned input and target samples.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub input: &'a [Complex64],
    pub target: &'a [Complex64],
}

/// Frame loss and exact gradient of every predistorter parameter, computed
/// through the frozen surrogate. The gradient is of `loss_scale * loss`.
pub fn bptt_gradients_scaled(
    model: &DpdModel<f64>,
    pa: &PaBehavModel,
    frame: Frame<'_>,
    loss_scale: f64,
) -> Result<(f64, DpdModel<f64>)> {
    model.validate()?;
    if frame.input.len() < 2 || frame.input.len() != frame.target.len() {
        return Err(Error::Data(format!(
            "frame needs >= 2 aligned samples, got input {} target {}",
            frame.input.len(),
            frame.target.len()
        )));
    }
    let mut grads = model.zeros_like();
    let loss = frame_loss_grad(
        model,
        Stage::Through(&pa.net),
        frame.input,
        frame.target,
        None,
        loss_scale,
        Some(&mut grads),
        &mut FrameWork::default(),
    );
    Ok((loss, grads))
}

pub fn bptt_gradients(model: &DpdModel<f64>, pa: &PaBehavModel, frame: Frame<'_>) -> Result<(f64, DpdModel<f64>)> {
    bptt_gradients_scaled(model, pa, frame, 1.0)
}

/// Dense or delta forward of the whole sequence from a zero state.
fn run_model(model: &DpdModel<f64>, x: &[Complex64], th: Option<ThresholdConfig>) -> Result<Vec<Complex64>> {
    let feats = features_of(x);
    match th {
        Some(th) => Ok(run_delta_samples(model, &feats, &th)?.0),
        None => forward_samples(model, &feats, None),
    }
}

/// Cascade output `surrogate(model(x))`, or `model(x)` when there is no surrogate.
pub fn cascade_output(
    model: &DpdModel<f64>,
    pa: Option<&PaBehavModel>,
    x: &IqSignal,
    th: Option<ThresholdConfig>,
) -> Result<IqSignal> {
    let u = run_model(model, x.samples(), th)?;
    let out = match pa {
        Some(pa) => forward_samples(&pa.net, &features_of(&u), None)?,
        None => u,
    };
    IqSignal::new(out, x.sample_rate_hz())
}

struct Problem<'a> {
    stage: Stage<'a>,
    train_in: Vec<Complex64>,
    train_target: Vec<Complex64>,
    val_in: IqSignal,
    val_target: IqSignal,
    pa: Option<&'a PaBehavModel>,
}

fn frame_starts(n: usize, len: usize, stride: usize) -> Vec<usize> {
    if n < len {
        return Vec::new();
    }
    let mut starts: Vec<usize> = (0..=n - len).step_by(stride).collect();
    if *starts.last().unwrap() != n - len {
        starts.push(n - len);
    }
    starts
}

fn batch_gradient(
    model: &DpdModel<f64>,
    p: &Problem<'_>,
    starts: &[usize],
    cfg: &TrainConfig,
) -> (f64, Vec<f64>) {
    let len = cfg.frame_length;
    let th = cfg.delta_thresholds.map(|t| (t.theta_phi, t.theta_h));
    let scale = 1.0 / starts.len() as f64;
    let one = |s: &usize| {
        let mut g = model.zeros_like();
        let mut work = FrameWork::default();
        let loss = frame_loss_grad(
            model,
            p.stage,
            &p.train_in[*s..*s + len],
            &p.train_target[*s..*s + len],
            th,
            scale,
            Some(&mut g),
            &mut work,
        );
        (loss, g.flat_params())
    };
    let add = |(la, mut ga): (f64, Vec<f64>), (lb, gb): (f64, Vec<f64>)| {
        ga.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
        (la + lb, ga)
    };
    let zero = || (0.0, vec![0.0; model.param_count()]);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if cfg.deterministic {
            let parts: Vec<(f64, Vec<f64>)> = starts.par_iter().map(one).collect();
            parts.into_iter().fold(zero(), add)
        } else {
            starts.par_iter().map(one).reduce(zero, add)
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        starts.iter().map(one).fold(zero(), add)
    }
}

fn validation_nmse(model: &DpdModel<f64>, p: &Problem<'_>, cfg: &TrainConfig) -> Result<f64> {
    let out = cascade_output(model, p.pa, &p.val_in, cfg.delta_thresholds)?;
    nmse_db(&p.val_target, &out)
}

fn fit(init: DpdModel<f64>, p: Problem<'_>, cfg: &TrainConfig) -> Result<(DpdModel<f64>, TrainReport)> {
    cfg.validate()?;
    init.validate()?;
    let mut starts = frame_starts(p.train_in.len(), cfg.frame_length, cfg.frame_stride);
    if starts.is_empty() {
        return Err(Error::Data(format!(
            "training split has {} samples, shorter than one frame of {}",
            p.train_in.len(),
            cfg.frame_length
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = init;
    let mut params = model.flat_params();
    let mut adam = AdamWState::new(params.len());
    let mut sched = cfg.plateau();
    let mut lr = cfg.lr0;
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        starts.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, batch) in starts.chunks(cfg.batch_size).enumerate() {
            let (loss, mut g) = batch_gradient(&model, &p, batch, cfg);
            if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch, batch: bi, loss });
            }
            if cfg.max_grad_norm > 0.0 {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > cfg.max_grad_norm {
                    let s = cfg.max_grad_norm / norm;
                    g.iter_mut().for_each(|v| *v *= s);
                }
            }
            loss_sum += loss * batch.len() as f64;
            optimizer_step(&mut params, &g, &mut adam, lr, cfg.weight_decay, &cfg.adamw)?;
            model.set_flat_params(&params)?;
        }
        let train_loss = loss_sum / starts.len() as f64;
        let val = validation_nmse(&model, &p, cfg)?;
        if !val.is_finite() {
            return Err(Error::Diverged { epoch, batch: 0, loss: val });
        }
        log::debug!("epoch {epoch}: loss {train_loss:.3e} val {val:.2} dB lr {lr:.2e}");
        epochs.push(EpochRecord { epoch, train_loss, val_nmse_db: val, lr });
        if val < best.0 {
            best = (val, epoch, model.clone());
        }
        lr = sched.step(val, lr).max(cfg.min_lr);
    }
    Ok((
        best.2,
        TrainReport { epochs, best_epoch: best.1, best_val_nmse_db: best.0 },
    ))
}

fn splits(data: &Dataset, cfg: &TrainConfig) -> Result<crate::signal::Splits> {
    split_dataset(data, cfg.frame_length)
}

/// Supervised fit of `model(input) ~ target`, used for PA surrogates.
pub fn train_supervised(
    init: DpdModel<f64>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(DpdModel<f64>, TrainReport)> {
    let s = splits(data, cfg)?;
    let p = Problem {
        stage: Stage::Direct,
        train_in: s.train.input.samples().to_vec(),
        train_target: s.train.target.samples().to_vec(),
        val_in: s.val.input,
        val_target: s.val.target,
        pa: None,
    };
    fit(init, p, cfg)
}

/// Trains a predistorter so that `pa(model(x))` approximates `gain * x`.
///
/// Only the dataset input is used; targets are the linearly amplified input.
/// The surrogate is never modified; its parameters are compared bitwise before
/// returning as a guard against accidental mutation.
pub fn train_dpd(
    pa: &PaBehavModel,
    init: DpdModel<f64>,
    data: &Dataset,
    cfg: &TrainConfig,
    gain: f64,
) -> Result<(DpdModel<f64>, TrainReport)> {
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::Config(format!("linearization gain must be > 0, got {gain}")));
    }
    let frozen = pa.net.flat_params();
    let s = splits(data, cfg)?;
    let g = Complex64::new(gain, 0.0);
    let p = Problem {
        stage: Stage::Through(&pa.net),
        train_target: s.train.input.samples().iter().map(|x| x * g).collect(),
        train_in: s.train.input.samples().to_vec(),
        val_target: s.val.input.scaled(g),
        val_in: s.val.input,
        pa: Some(pa),
    };
    let out = fit(init, p, cfg)?;
    let after = pa.net.flat_params();
    if frozen.iter().zip(&after).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(Error::Contract("PA surrogate parameters changed during training".into()));
    }
    Ok(out)
}

/// Continues training a dense-trained model with delta thresholds active in
/// the forward pass.
pub fn finetune_with_delta(
    model: DpdModel<f64>,
    pa: &PaBehavModel,
    data: &Dataset,
    cfg: &TrainConfig,
    gain: f64,
) -> Result<(DpdModel<f64>, TrainReport)> {
    if cfg.delta_thresholds.is_none() {
        return Err(Error::Config("delta fine-tuning needs delta_thresholds".into()));
    }
    train_dpd(pa, model, data, cfg, gain)
}
