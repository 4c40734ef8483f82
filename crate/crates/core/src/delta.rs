//! Delta-network execution of the recurrent predistorters.
//!
//! Each input vector (features or previous hidden state) is compared against a
//! buffered copy `x_tilde`. Only components whose change exceeds the threshold
//! propagate: their delta multiplies one weight column and is added into the
//! gate pre-activation accumulators, and the buffer for that component is
//! refreshed. Below-threshold components cost nothing and leave the buffer
//! untouched, so the error is bounded by the threshold rather than accumulating.
//!
//! Operation accounting per step, with `g` gate groups, hidden size `h`, `a`
//! active columns (features plus hidden) and `p` pointwise gate multiplies
//! (`3h` for GRU, `2h` for JANET):
//!
//! | counter | formula |
//! |---------|---------|
//! | MUL | `a*g*h + p + 2h` (column MACs, gate products, head) |
//! | ADD | `a*g*h + (6 + h) + p + 2h` (accumulation, delta subtractions, gate sums, head) |
//! | MEM | `a*g*h + (6 + h) + a + 2*acc + 2h + (2h + 2)` (weights, buffer reads and writes, accumulators, state, head) |
//!
//! where `acc` is the accumulator length (`4h` for GRU, `2h` for JANET).
//! Activations are tallied separately and not counted as MUL/ADD.
//!
//! Weights, buffers and state use the kernel's scalar type. The gate
//! accumulators are always f64, which keeps an f32 kernel within 1e-5 of the
//! dense f64 network over long streams at zero threshold.

use num_complex::{Complex, Complex64};
use serde::{Deserialize, Serialize};

use crate::cost::OpCounts;
use crate::error::{Error, Result};
use crate::rnncore::{sigmoid, Cell, DpdModel, FcWeights, Matrix, Scalar};
use crate::signal::{FeatureSeq, IqSignal, FEATURE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub theta_phi: f64,
    pub theta_h: f64,
}

impl ThresholdConfig {
    pub fn new(theta_phi: f64, theta_h: f64) -> Result<Self> {
        let th = Self { theta_phi, theta_h };
        th.validate()?;
        Ok(th)
    }

    pub fn dense() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_phi >= 0.0 && self.theta_h >= 0.0) {
            return Err(Error::Config(format!(
                "delta thresholds must be >= 0, got theta_phi={} theta_h={}",
                self.theta_phi, self.theta_h
            )));
        }
        Ok(())
    }
}

/// Thresholded delta of `x` against `x_tilde`, updating the buffer in place.
///
/// Returns the number of active components. A component is active when
/// `|x - x_tilde| > theta` (strictly).
#[inline]
pub fn delta_encode_into<T: Scalar>(
    x: &[T],
    x_tilde: &mut [T],
    theta: T,
    delta: &mut [T],
    mask: &mut [bool],
) -> usize {
    let mut active = 0;
    for k in 0..x.len() {
        let d = x[k] - x_tilde[k];
        if d.abs() > theta {
            delta[k] = d;
            x_tilde[k] = x[k];
            mask[k] = true;
            active += 1;
        } else {
            delta[k] = T::zero();
            mask[k] = false;
        }
    }
    active
}

/// Allocating form of [`delta_encode_into`]: `(delta, x_tilde_next, active_mask)`.
pub fn delta_encode<T: Scalar>(x: &[T], x_tilde: &[T], theta: T) -> Result<(Vec<T>, Vec<T>, Vec<bool>)> {
    if x.len() != x_tilde.len() {
        return Err(Error::Dimension {
            context: "delta_encode buffer",
            expected: x.len(),
            got: x_tilde.len(),
        });
    }
    let mut next = x_tilde.to_vec();
    let mut delta = vec![T::zero(); x.len()];
    let mut mask = vec![false; x.len()];
    delta_encode_into(x, &mut next, theta, &mut delta, &mut mask);
    Ok((delta, next, mask))
}

/// Column-major weight layout for M x SV updates.
///
/// GRU accumulators are laid out `[M_nphi | M_r | M_z | M_nh]` so that feature
/// columns touch `[0, 3h)` and hidden columns touch `[h, 4h)`. JANET uses
/// `[M_f | M_c]` for both.
#[derive(Debug, Clone)]
pub struct DeltaKernel<T> {
    hidden: usize,
    gates: usize,
    input_cols: Vec<T>,
    input_offset: usize,
    hidden_cols: Vec<T>,
    hidden_offset: usize,
    init_acc: Vec<f64>,
    head: FcWeights<T>,
    is_gru: bool,
}

fn push_columns<T: Scalar>(dst: &mut Vec<T>, blocks: &[&Matrix<T>]) {
    let cols = blocks[0].cols();
    for c in 0..cols {
        for m in blocks {
            for r in 0..m.rows() {
                dst.push(m.get(r, c));
            }
        }
    }
}

impl<T: Scalar> DeltaKernel<T> {
    pub fn new(model: &DpdModel<T>) -> Result<Self> {
        model.validate()?;
        let h = model.hidden_size();
        let mut input_cols = Vec::new();
        let mut hidden_cols = Vec::new();
        let (init_acc, input_offset, hidden_offset, is_gru) = match &model.cell {
            Cell::Gru(w) => {
                push_columns(&mut input_cols, &[&w.w_in, &w.w_ir, &w.w_iz]);
                push_columns(&mut hidden_cols, &[&w.w_hr, &w.w_hz, &w.w_hn]);
                let mut acc: Vec<f64> = w.b_in.iter().map(|b| b.as_f64()).collect();
                acc.extend(w.b_ir.iter().zip(&w.b_hr).map(|(a, b)| a.as_f64() + b.as_f64()));
                acc.extend(w.b_iz.iter().zip(&w.b_hz).map(|(a, b)| a.as_f64() + b.as_f64()));
                acc.extend(w.b_hn.iter().map(|b| b.as_f64()));
                (acc, 0, h, true)
            }
            Cell::Janet(w) => {
                push_columns(&mut input_cols, &[&w.w_if, &w.w_ic]);
                push_columns(&mut hidden_cols, &[&w.w_hf, &w.w_hc]);
                let mut acc: Vec<f64> = w.b_if.iter().zip(&w.b_hf).map(|(a, b)| a.as_f64() + b.as_f64()).collect();
                acc.extend(w.b_ic.iter().zip(&w.b_hc).map(|(a, b)| a.as_f64() + b.as_f64()));
                (acc, 0, 0, false)
            }
        };
        Ok(Self {
            hidden: h,
            gates: model.kind().gates(),
            input_cols,
            input_offset,
            hidden_cols,
            hidden_offset,
            init_acc,
            head: model.head.clone(),
            is_gru,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    /// Rows touched by one delta column.
    pub fn column_height(&self) -> usize {
        self.gates * self.hidden
    }

    fn pointwise_muls(&self) -> usize {
        self.gates * self.hidden
    }

    pub fn initial_state(&self) -> DeltaState<T> {
        DeltaState {
            x_tilde_phi: vec![T::zero(); FEATURE_SIZE],
            x_tilde_h: vec![T::zero(); self.hidden],
            h: vec![T::zero(); self.hidden],
            acc: self.init_acc.clone(),
            step_index: 0,
            delta_phi: vec![T::zero(); FEATURE_SIZE],
            delta_h: vec![T::zero(); self.hidden],
            mask_phi: vec![false; FEATURE_SIZE],
            mask_h: vec![false; self.hidden],
        }
    }

    /// One delta step: encode, M x SV accumulate, gates, head.
    pub fn step(
        &self,
        phi: &[T; FEATURE_SIZE],
        state: &mut DeltaState<T>,
        th: (T, T),
        stats: &mut SparsityStats,
    ) -> Result<Complex<T>> {
        let h = self.hidden;
        let height = self.column_height();
        let active_phi = delta_encode_into(
            phi,
            &mut state.x_tilde_phi,
            th.0,
            &mut state.delta_phi,
            &mut state.mask_phi,
        );
        let active_h = delta_encode_into(
            &state.h,
            &mut state.x_tilde_h,
            th.1,
            &mut state.delta_h,
            &mut state.mask_h,
        );

        let acc_in = &mut state.acc[self.input_offset..self.input_offset + height];
        for (j, col) in self.input_cols.chunks_exact(height).enumerate() {
            if state.mask_phi[j] {
                let d = state.delta_phi[j];
                let d = d.as_f64();
                for (a, w) in acc_in.iter_mut().zip(col) {
                    *a += w.as_f64() * d;
                }
            }
        }
        let acc_h = &mut state.acc[self.hidden_offset..self.hidden_offset + height];
        for (j, col) in self.hidden_cols.chunks_exact(height).enumerate() {
            if state.mask_h[j] {
                let d = state.delta_h[j];
                let d = d.as_f64();
                for (a, w) in acc_h.iter_mut().zip(col) {
                    *a += w.as_f64() * d;
                }
            }
        }
        if let Some(bad) = state.acc.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                step: state.step_index,
                what: format!("non-finite gate accumulator at index {bad}"),
            });
        }

        let acc = &state.acc;
        if self.is_gru {
            let (m_nphi, rest) = acc.split_at(h);
            let (m_r, rest) = rest.split_at(h);
            let (m_z, m_nh) = rest.split_at(h);
            for i in 0..h {
                let r = sigmoid(T::of(m_r[i]));
                let z = sigmoid(T::of(m_z[i]));
                let n = (T::of(m_nphi[i]) + r * T::of(m_nh[i])).tanh();
                state.h[i] = (T::one() - z) * state.h[i] + z * n;
            }
        } else {
            let (m_f, m_c) = acc.split_at(h);
            for i in 0..h {
                let f = sigmoid(T::of(m_f[i]));
                let c = T::of(m_c[i]).tanh();
                state.h[i] = f * state.h[i] + (T::one() - f) * c;
            }
        }
        let y = self.head.apply(&state.h);
        state.step_index += 1;
        stats.record(self, active_phi, active_h);
        Ok(y)
    }
}

/// Runtime state of one delta stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaState<T> {
    pub x_tilde_phi: Vec<T>,
    pub x_tilde_h: Vec<T>,
    pub h: Vec<T>,
    /// Gate accumulators in the kernel's layout. They stay in f64 whatever
    /// the weight type: they integrate every delta over the whole stream, and
    /// at f32 the rounding error of that running sum grows with stream length.
    pub acc: Vec<f64>,
    pub step_index: usize,
    delta_phi: Vec<T>,
    delta_h: Vec<T>,
    mask_phi: Vec<bool>,
    mask_h: Vec<bool>,
}

impl<T: Scalar> DeltaState<T> {
    pub fn mask_phi(&self) -> &[bool] {
        &self.mask_phi
    }

    pub fn mask_h(&self) -> &[bool] {
        &self.mask_h
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GateStats {
    pub gate: String,
    pub skipped_macs: u64,
    pub total_macs: u64,
}

/// Skip counters and operation tallies accumulated over a stream.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparsityStats {
    pub steps: u64,
    pub skipped_phi_components: u64,
    pub total_phi_components: u64,
    pub skipped_h_components: u64,
    pub total_h_components: u64,
    /// Column-MACs skipped and total (each column weighs `gates * hidden`).
    pub skipped_macs: u64,
    pub total_macs: u64,
    pub mul_count: u64,
    pub add_count: u64,
    pub mem_count: u64,
    pub activation_count: u64,
    pub per_gate: Vec<GateStats>,
}

impl SparsityStats {
    fn record<T: Scalar>(&mut self, k: &DeltaKernel<T>, active_phi: usize, active_h: usize) {
        let h = k.hidden as u64;
        let height = k.column_height() as u64;
        let n_h = k.hidden as u64;
        let n_phi = FEATURE_SIZE as u64;
        let active = (active_phi + active_h) as u64;
        let skipped = n_phi + n_h - active;
        let col_macs = active * height;
        let pointwise = k.pointwise_muls() as u64;

        self.steps += 1;
        self.total_phi_components += n_phi;
        self.skipped_phi_components += n_phi - active_phi as u64;
        self.total_h_components += n_h;
        self.skipped_h_components += n_h - active_h as u64;
        self.total_macs += (n_phi + n_h) * height;
        self.skipped_macs += skipped * height;

        self.mul_count += col_macs + pointwise + 2 * h;
        self.add_count += col_macs + (n_phi + n_h) + pointwise + 2 * h;
        let acc_len = k.init_acc.len() as u64;
        self.mem_count +=
            col_macs + (n_phi + n_h) + active + 2 * acc_len + 2 * h + (2 * h + 2);
        self.activation_count += pointwise;

        let names: &[&str] = if k.is_gru { &["r", "z", "n"] } else { &["f", "c"] };
        if self.per_gate.is_empty() {
            self.per_gate = names
                .iter()
                .map(|g| GateStats {
                    gate: g.to_string(),
                    ..GateStats::default()
                })
                .collect();
        }
        for g in &mut self.per_gate {
            g.total_macs += (n_phi + n_h) * h;
            g.skipped_macs += skipped * h;
        }
    }

    /// MAC-weighted overall temporal sparsity.
    pub fn gamma_overall(&self) -> f64 {
        if self.total_macs == 0 {
            0.0
        } else {
            self.skipped_macs as f64 / self.total_macs as f64
        }
    }

    pub fn gamma_phi(&self) -> f64 {
        ratio(self.skipped_phi_components, self.total_phi_components)
    }

    pub fn gamma_h(&self) -> f64 {
        ratio(self.skipped_h_components, self.total_h_components)
    }

    /// Mean counts per time step (one inference per sample).
    pub fn per_inference(&self) -> OpCounts {
        let n = self.steps.max(1) as f64;
        OpCounts {
            mul: self.mul_count as f64 / n,
            add: self.add_count as f64 / n,
            mem: self.mem_count as f64 / n,
        }
    }

    /// Combines counters of independent streams.
    pub fn merge(&mut self, other: &SparsityStats) {
        self.steps += other.steps;
        self.skipped_phi_components += other.skipped_phi_components;
        self.total_phi_components += other.total_phi_components;
        self.skipped_h_components += other.skipped_h_components;
        self.total_h_components += other.total_h_components;
        self.skipped_macs += other.skipped_macs;
        self.total_macs += other.total_macs;
        self.mul_count += other.mul_count;
        self.add_count += other.add_count;
        self.mem_count += other.mem_count;
        self.activation_count += other.activation_count;
        if self.per_gate.is_empty() {
            self.per_gate = other.per_gate.clone();
        } else {
            for (a, b) in self.per_gate.iter_mut().zip(&other.per_gate) {
                a.skipped_macs += b.skipped_macs;
                a.total_macs += b.total_macs;
            }
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Convenience wrapper over [`DeltaKernel::step`] for a GRU model.
pub fn delta_gru_step<T: Scalar>(
    kernel: &DeltaKernel<T>,
    phi: &[T; FEATURE_SIZE],
    state: &mut DeltaState<T>,
    th: &ThresholdConfig,
    stats: &mut SparsityStats,
) -> Result<Complex<T>> {
    if !kernel.is_gru {
        return Err(Error::Contract("delta_gru_step called with a JANET kernel".into()));
    }
    kernel.step(phi, state, (T::of(th.theta_phi), T::of(th.theta_h)), stats)
}

pub fn delta_janet_step<T: Scalar>(
    kernel: &DeltaKernel<T>,
    phi: &[T; FEATURE_SIZE],
    state: &mut DeltaState<T>,
    th: &ThresholdConfig,
    stats: &mut SparsityStats,
) -> Result<Complex<T>> {
    if kernel.is_gru {
        return Err(Error::Contract("delta_janet_step called with a GRU kernel".into()));
    }
    kernel.step(phi, state, (T::of(th.theta_phi), T::of(th.theta_h)), stats)
}

/// Streams a feature sequence through the delta engine from the initial state.
pub fn run_delta_samples<T: Scalar>(
    model: &DpdModel<T>,
    feats: &FeatureSeq,
    th: &ThresholdConfig,
) -> Result<(Vec<Complex<T>>, SparsityStats)> {
    th.validate()?;
    let kernel = DeltaKernel::new(model)?;
    let mut state = kernel.initial_state();
    let mut stats = SparsityStats::default();
    let thresholds = (T::of(th.theta_phi), T::of(th.theta_h));
    let mut phi = [T::zero(); FEATURE_SIZE];
    let mut out = Vec::with_capacity(feats.len());
    for frame in &feats.frames {
        for (p, f) in phi.iter_mut().zip(frame) {
            *p = T::of(*f);
        }
        out.push(kernel.step(&phi, &mut state, thresholds, &mut stats)?);
    }
    Ok((out, stats))
}

pub fn run_delta<T: Scalar>(
    model: &DpdModel<T>,
    feats: &FeatureSeq,
    th: &ThresholdConfig,
    sample_rate_hz: f64,
) -> Result<(IqSignal, SparsityStats)> {
    let (out, stats) = run_delta_samples(model, feats, th)?;
    let sig = IqSignal::new(
        out.into_iter()
            .map(|c| Complex64::new(c.re.as_f64(), c.im.as_f64()))
            .collect(),
        sample_rate_hz,
    )?;
    Ok((sig, stats))
}

#[cfg(test)]
mod tests;
