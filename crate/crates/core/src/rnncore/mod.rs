//! Dense GRU and JANET predistortion networks with a two-output linear head.
//!
//! GRU cell (two biases per gate):
//!
//! ```text
//! r = sigmoid(W_ir phi + b_ir + W_hr h + b_hr)
//! z = sigmoid(W_iz phi + b_iz + W_hz h + b_hz)
//! n = tanh(W_in phi + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * h + z * n
//! ```
//!
//! JANET cell (forget gate and candidate, no separate cell state):
//!
//! ```text
//! f = sigmoid(W_if phi + W_hf h + b_if + b_hf)
//! c = tanh(W_ic phi + W_hc h + b_ic + b_hc)
//! h' = f * h + (1 - f) * c
//! ```

mod io;

pub use io::{read_model, write_model, WeightFile, FORMAT_VERSION};

use std::fmt::Debug;

use num_complex::{Complex, Complex64};
use num_traits::{Float, NumCast};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::signal::{FeatureSeq, IqSignal, FEATURE_SIZE};

/// Floating-point types the networks run in.
pub trait Scalar: Float + NumCast + Debug + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 always converts")
    }

    fn as_f64(self) -> f64 {
        <f64 as NumCast>::from(self).expect("float always converts")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        check_dim("matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self * x`
    #[inline]
    pub fn gemv_acc(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            let mut acc = T::zero();
            for (w, v) in row.iter().zip(x) {
                acc = acc + *w * *v;
            }
            *o = *o + acc;
        }
    }

    /// `out += self^T * x`
    #[inline]
    pub fn gemv_t_acc(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, xv) in self.data.chunks_exact(self.cols).zip(x) {
            for (o, w) in out.iter_mut().zip(row) {
                *o = *o + *w * *xv;
            }
        }
    }

    /// `self += a * b^T`
    #[inline]
    pub fn outer_acc(&mut self, a: &[T], b: &[T]) {
        for (row, av) in self.data.chunks_exact_mut(self.cols).zip(a) {
            for (w, bv) in row.iter_mut().zip(b) {
                *w = *w + *av * *bv;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Janet,
}

impl CellKind {
    /// Gate pre-activation groups sharing each delta vector.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Janet => 2,
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CellKind::Gru => "gru",
            CellKind::Janet => "janet",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights<T> {
    pub w_ir: Matrix<T>,
    pub w_iz: Matrix<T>,
    pub w_in: Matrix<T>,
    pub w_hr: Matrix<T>,
    pub w_hz: Matrix<T>,
    pub w_hn: Matrix<T>,
    pub b_ir: Vec<T>,
    pub b_iz: Vec<T>,
    pub b_in: Vec<T>,
    pub b_hr: Vec<T>,
    pub b_hz: Vec<T>,
    pub b_hn: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JanetWeights<T> {
    pub w_if: Matrix<T>,
    pub w_ic: Matrix<T>,
    pub w_hf: Matrix<T>,
    pub w_hc: Matrix<T>,
    pub b_if: Vec<T>,
    pub b_hf: Vec<T>,
    pub b_ic: Vec<T>,
    pub b_hc: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcWeights<T> {
    /// 2 x hidden
    pub w_y: Matrix<T>,
    pub b_y: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell<T> {
    Gru(GruWeights<T>),
    Janet(JanetWeights<T>),
}

/// A recurrent cell followed by the I/Q output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DpdModel<T = f64> {
    pub cell: Cell<T>,
    pub head: FcWeights<T>,
}

/// A named parameter tensor: (name, rows, cols).
pub type TensorShape = (&'static str, usize, usize);

impl<T: Scalar> GruWeights<T> {
    pub fn zeros(hidden: usize) -> Self {
        let wi = || Matrix::zeros(hidden, FEATURE_SIZE);
        let wh = || Matrix::zeros(hidden, hidden);
        let b = || vec![T::zero(); hidden];
        Self {
            w_ir: wi(),
            w_iz: wi(),
            w_in: wi(),
            w_hr: wh(),
            w_hz: wh(),
            w_hn: wh(),
            b_ir: b(),
            b_iz: b(),
            b_in: b(),
            b_hr: b(),
            b_hz: b(),
            b_hn: b(),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.b_ir.len()
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden_size();
        3 * (h * FEATURE_SIZE + h * h + 2 * h)
    }

    fn tensors(&self) -> Vec<(&'static str, &[T])> {
        vec![
            ("W_ir", self.w_ir.data()),
            ("W_iz", self.w_iz.data()),
            ("W_in", self.w_in.data()),
            ("W_hr", self.w_hr.data()),
            ("W_hz", self.w_hz.data()),
            ("W_hn", self.w_hn.data()),
            ("b_ir", &self.b_ir),
            ("b_iz", &self.b_iz),
            ("b_in", &self.b_in),
            ("b_hr", &self.b_hr),
            ("b_hz", &self.b_hz),
            ("b_hn", &self.b_hn),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        vec![
            ("W_ir", self.w_ir.data_mut()),
            ("W_iz", self.w_iz.data_mut()),
            ("W_in", self.w_in.data_mut()),
            ("W_hr", self.w_hr.data_mut()),
            ("W_hz", self.w_hz.data_mut()),
            ("W_hn", self.w_hn.data_mut()),
            ("b_ir", &mut self.b_ir),
            ("b_iz", &mut self.b_iz),
            ("b_in", &mut self.b_in),
            ("b_hr", &mut self.b_hr),
            ("b_hz", &mut self.b_hz),
            ("b_hn", &mut self.b_hn),
        ]
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden_size();
        for m in [&self.w_ir, &self.w_iz, &self.w_in] {
            check_dim("GRU input weight rows", h, m.rows())?;
            check_dim("GRU input weight cols", FEATURE_SIZE, m.cols())?;
        }
        for m in [&self.w_hr, &self.w_hz, &self.w_hn] {
            check_dim("GRU hidden weight rows", h, m.rows())?;
            check_dim("GRU hidden weight cols", h, m.cols())?;
        }
        for b in [&self.b_iz, &self.b_in, &self.b_hr, &self.b_hz, &self.b_hn] {
            check_dim("GRU bias", h, b.len())?;
        }
        Ok(())
    }

    fn cast<U: Scalar>(&self) -> GruWeights<U> {
        let v = |b: &Vec<T>| b.iter().map(|x| U::of(x.as_f64())).collect();
        GruWeights {
            w_ir: self.w_ir.cast(),
            w_iz: self.w_iz.cast(),
            w_in: self.w_in.cast(),
            w_hr: self.w_hr.cast(),
            w_hz: self.w_hz.cast(),
            w_hn: self.w_hn.cast(),
            b_ir: v(&self.b_ir),
            b_iz: v(&self.b_iz),
            b_in: v(&self.b_in),
            b_hr: v(&self.b_hr),
            b_hz: v(&self.b_hz),
            b_hn: v(&self.b_hn),
        }
    }
}

impl<T: Scalar> JanetWeights<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            w_if: Matrix::zeros(hidden, FEATURE_SIZE),
            w_ic: Matrix::zeros(hidden, FEATURE_SIZE),
            w_hf: Matrix::zeros(hidden, hidden),
            w_hc: Matrix::zeros(hidden, hidden),
            b_if: vec![T::zero(); hidden],
            b_hf: vec![T::zero(); hidden],
            b_ic: vec![T::zero(); hidden],
            b_hc: vec![T::zero(); hidden],
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.b_if.len()
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden_size();
        2 * (h * FEATURE_SIZE + h * h + 2 * h)
    }

    fn tensors(&self) -> Vec<(&'static str, &[T])> {
        vec![
            ("W_if", self.w_if.data()),
            ("W_ic", self.w_ic.data()),
            ("W_hf", self.w_hf.data()),
            ("W_hc", self.w_hc.data()),
            ("b_if", &self.b_if),
            ("b_hf", &self.b_hf),
            ("b_ic", &self.b_ic),
            ("b_hc", &self.b_hc),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        vec![
            ("W_if", self.w_if.data_mut()),
            ("W_ic", self.w_ic.data_mut()),
            ("W_hf", self.w_hf.data_mut()),
            ("W_hc", self.w_hc.data_mut()),
            ("b_if", &mut self.b_if),
            ("b_hf", &mut self.b_hf),
            ("b_ic", &mut self.b_ic),
            ("b_hc", &mut self.b_hc),
        ]
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden_size();
        for m in [&self.w_if, &self.w_ic] {
            check_dim("JANET input weight rows", h, m.rows())?;
            check_dim("JANET input weight cols", FEATURE_SIZE, m.cols())?;
        }
        for m in [&self.w_hf, &self.w_hc] {
            check_dim("JANET hidden weight rows", h, m.rows())?;
            check_dim("JANET hidden weight cols", h, m.cols())?;
        }
        for b in [&self.b_hf, &self.b_ic, &self.b_hc] {
            check_dim("JANET bias", h, b.len())?;
        }
        Ok(())
    }

    fn cast<U: Scalar>(&self) -> JanetWeights<U> {
        let v = |b: &Vec<T>| b.iter().map(|x| U::of(x.as_f64())).collect();
        JanetWeights {
            w_if: self.w_if.cast(),
            w_ic: self.w_ic.cast(),
            w_hf: self.w_hf.cast(),
            w_hc: self.w_hc.cast(),
            b_if: v(&self.b_if),
            b_hf: v(&self.b_hf),
            b_ic: v(&self.b_ic),
            b_hc: v(&self.b_hc),
        }
    }
}

impl<T: Scalar> FcWeights<T> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            w_y: Matrix::zeros(2, hidden),
            b_y: vec![T::zero(); 2],
        }
    }

    pub fn param_count(&self) -> usize {
        self.w_y.rows() * self.w_y.cols() + self.b_y.len()
    }

    /// `(I, Q) = W_y h + b_y`
    #[inline]
    pub fn apply(&self, h: &[T]) -> Complex<T> {
        let mut out = [self.b_y[0], self.b_y[1]];
        self.w_y.gemv_acc(h, &mut out);
        Complex::new(out[0], out[1])
    }
}

impl<T: Scalar> DpdModel<T> {
    pub fn zeros(kind: CellKind, hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("hidden_size must be at least 1".into()));
        }
        let cell = match kind {
            CellKind::Gru => Cell::Gru(GruWeights::zeros(hidden)),
            CellKind::Janet => Cell::Janet(JanetWeights::zeros(hidden)),
        };
        Ok(Self {
            cell,
            head: FcWeights::zeros(hidden),
        })
    }

    pub fn kind(&self) -> CellKind {
        match self.cell {
            Cell::Gru(_) => CellKind::Gru,
            Cell::Janet(_) => CellKind::Janet,
        }
    }

    pub fn hidden_size(&self) -> usize {
        match &self.cell {
            Cell::Gru(w) => w.hidden_size(),
            Cell::Janet(w) => w.hidden_size(),
        }
    }

    pub fn cell_param_count(&self) -> usize {
        match &self.cell {
            Cell::Gru(w) => w.param_count(),
            Cell::Janet(w) => w.param_count(),
        }
    }

    pub fn head_param_count(&self) -> usize {
        self.head.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.cell_param_count() + self.head_param_count()
    }

    /// Parameter tensors in canonical order: cell tensors, then `W_y`, `b_y`.
    pub fn tensors(&self) -> Vec<(&'static str, &[T])> {
        let mut t = match &self.cell {
            Cell::Gru(w) => w.tensors(),
            Cell::Janet(w) => w.tensors(),
        };
        t.push(("W_y", self.head.w_y.data()));
        t.push(("b_y", &self.head.b_y));
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        let mut t = match &mut self.cell {
            Cell::Gru(w) => w.tensors_mut(),
            Cell::Janet(w) => w.tensors_mut(),
        };
        t.push(("W_y", self.head.w_y.data_mut()));
        t.push(("b_y", &mut self.head.b_y));
        t
    }

    pub fn tensor_shapes(&self) -> Vec<TensorShape> {
        let h = self.hidden_size();
        self.tensors()
            .into_iter()
            .map(|(name, data)| {
                let (rows, cols) = match name {
                    "W_y" => (2, h),
                    "b_y" => (2, 1),
                    n if n.starts_with("W_i") => (h, FEATURE_SIZE),
                    n if n.starts_with("W_h") => (h, h),
                    _ => (data.len(), 1),
                };
                (name, rows, cols)
            })
            .collect()
    }

    pub fn flat_params(&self) -> Vec<T> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, d)| d.iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        check_dim("flat parameter vector", self.param_count(), flat.len())?;
        let mut off = 0;
        for (_, d) in self.tensors_mut() {
            d.copy_from_slice(&flat[off..off + d.len()]);
            off += d.len();
        }
        Ok(())
    }

    /// Same shape with every parameter zero.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.kind(), self.hidden_size()).expect("hidden size already validated")
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_size();
        if h == 0 {
            return Err(Error::Config("hidden_size must be at least 1".into()));
        }
        match &self.cell {
            Cell::Gru(w) => w.validate()?,
            Cell::Janet(w) => w.validate()?,
        }
        check_dim("head rows", 2, self.head.w_y.rows())?;
        check_dim("head cols", h, self.head.w_y.cols())?;
        check_dim("head bias", 2, self.head.b_y.len())?;
        if self
            .tensors()
            .iter()
            .any(|(_, d)| d.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Data("model contains non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> DpdModel<U> {
        let cell = match &self.cell {
            Cell::Gru(w) => Cell::Gru(w.cast()),
            Cell::Janet(w) => Cell::Janet(w.cast()),
        };
        DpdModel {
            cell,
            head: FcWeights {
                w_y: self.head.w_y.cast(),
                b_y: self.head.b_y.iter().map(|x| U::of(x.as_f64())).collect(),
            },
        }
    }

    /// One recurrent step writing the new hidden state into `h_out`.
    #[inline]
    pub fn step_into(&self, phi: &[T], h_prev: &[T], scratch: &mut StepScratch<T>, h_out: &mut [T]) {
        match &self.cell {
            Cell::Gru(w) => gru_step_into(w, phi, h_prev, scratch, h_out),
            Cell::Janet(w) => janet_step_into(w, phi, h_prev, scratch, h_out),
        }
    }
}

pub fn param_count<T: Scalar>(model: &DpdModel<T>) -> usize {
    model.param_count()
}

/// Reusable gate buffers for [`gru_step_into`] and [`janet_step_into`].
#[derive(Debug, Clone)]
pub struct StepScratch<T> {
    a: Vec<T>,
    b: Vec<T>,
    c: Vec<T>,
    d: Vec<T>,
}

impl<T: Scalar> StepScratch<T> {
    pub fn new(hidden: usize) -> Self {
        Self {
            a: vec![T::zero(); hidden],
            b: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
            d: vec![T::zero(); hidden],
        }
    }
}

pub fn gru_step_into<T: Scalar>(
    w: &GruWeights<T>,
    phi: &[T],
    h_prev: &[T],
    s: &mut StepScratch<T>,
    h_out: &mut [T],
) {
    let (r, z, nx, nh) = (&mut s.a, &mut s.b, &mut s.c, &mut s.d);
    for i in 0..r.len() {
        r[i] = w.b_ir[i] + w.b_hr[i];
        z[i] = w.b_iz[i] + w.b_hz[i];
        nx[i] = w.b_in[i];
        nh[i] = w.b_hn[i];
    }
    w.w_ir.gemv_acc(phi, r);
    w.w_hr.gemv_acc(h_prev, r);
    w.w_iz.gemv_acc(phi, z);
    w.w_hz.gemv_acc(h_prev, z);
    w.w_in.gemv_acc(phi, nx);
    w.w_hn.gemv_acc(h_prev, nh);
    for i in 0..h_out.len() {
        let r = sigmoid(r[i]);
        let z = sigmoid(z[i]);
        let n = (nx[i] + r * nh[i]).tanh();
        h_out[i] = (T::one() - z) * h_prev[i] + z * n;
    }
}

pub fn janet_step_into<T: Scalar>(
    w: &JanetWeights<T>,
    phi: &[T],
    h_prev: &[T],
    s: &mut StepScratch<T>,
    h_out: &mut [T],
) {
    let (f, c) = (&mut s.a, &mut s.b);
    for i in 0..f.len() {
        f[i] = w.b_if[i] + w.b_hf[i];
        c[i] = w.b_ic[i] + w.b_hc[i];
    }
    w.w_if.gemv_acc(phi, f);
    w.w_hf.gemv_acc(h_prev, f);
    w.w_ic.gemv_acc(phi, c);
    w.w_hc.gemv_acc(h_prev, c);
    for i in 0..h_out.len() {
        let f = sigmoid(f[i]);
        let c = c[i].tanh();
        h_out[i] = f * h_prev[i] + (T::one() - f) * c;
    }
}

fn check_step_dims(hidden: usize, phi: usize, h_prev: usize) -> Result<()> {
    check_dim("input features", FEATURE_SIZE, phi)?;
    check_dim("previous hidden state", hidden, h_prev)
}

pub fn gru_step<T: Scalar>(w: &GruWeights<T>, phi: &[T], h_prev: &[T]) -> Result<Vec<T>> {
    w.validate()?;
    check_step_dims(w.hidden_size(), phi.len(), h_prev.len())?;
    let mut out = vec![T::zero(); w.hidden_size()];
    gru_step_into(w, phi, h_prev, &mut StepScratch::new(w.hidden_size()), &mut out);
    Ok(out)
}

pub fn janet_step<T: Scalar>(w: &JanetWeights<T>, phi: &[T], h_prev: &[T]) -> Result<Vec<T>> {
    w.validate()?;
    check_step_dims(w.hidden_size(), phi.len(), h_prev.len())?;
    let mut out = vec![T::zero(); w.hidden_size()];
    janet_step_into(w, phi, h_prev, &mut StepScratch::new(w.hidden_size()), &mut out);
    Ok(out)
}

/// Runs the network over a feature sequence. `h0` defaults to zeros.
pub fn forward_samples<T: Scalar>(
    model: &DpdModel<T>,
    feats: &FeatureSeq,
    h0: Option<&[T]>,
) -> Result<Vec<Complex<T>>> {
    let h = model.hidden_size();
    let mut state = match h0 {
        Some(v) => {
            check_dim("initial hidden state", h, v.len())?;
            v.to_vec()
        }
        None => vec![T::zero(); h],
    };
    let mut next = vec![T::zero(); h];
    let mut scratch = StepScratch::new(h);
    let mut phi = [T::zero(); FEATURE_SIZE];
    let mut out = Vec::with_capacity(feats.len());
    for frame in &feats.frames {
        for (p, f) in phi.iter_mut().zip(frame) {
            *p = T::of(*f);
        }
        model.step_into(&phi, &state, &mut scratch, &mut next);
        std::mem::swap(&mut state, &mut next);
        out.push(model.head.apply(&state));
    }
    Ok(out)
}

pub fn forward<T: Scalar>(
    model: &DpdModel<T>,
    feats: &FeatureSeq,
    h0: Option<&[T]>,
    sample_rate_hz: f64,
) -> Result<IqSignal> {
    let out = forward_samples(model, feats, h0)?;
    IqSignal::new(
        out.into_iter()
            .map(|c| Complex64::new(c.re.as_f64(), c.im.as_f64()))
            .collect(),
        sample_rate_hz,
    )
}

/// Uniform initialization in `[-1/sqrt(h), 1/sqrt(h)]`.
pub fn init_weights(kind: CellKind, hidden_size: usize, seed: u64) -> Result<DpdModel<f64>> {
    let mut model = DpdModel::zeros(kind, hidden_size)?;
    let bound = 1.0 / (hidden_size as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, data) in model.tensors_mut() {
        for v in data.iter_mut() {
            *v = rng.gen_range(-bound..=bound);
        }
    }
    Ok(model)
}
