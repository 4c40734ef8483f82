//! Recorded forward passes and their exact reverse-mode gradients.

use num_complex::Complex64;

use crate::rnncore::{sigmoid, Cell, DpdModel};
use crate::signal::{feature, Feature, FEATURE_SIZE};

/// Everything the backward pass needs from one framed forward pass.
///
/// `phi_used` and `hin_used` hold the vectors that actually multiplied the
/// weights: the raw inputs in dense mode, the held buffers under delta
/// thresholds. `h_prev` is always the true previous state.
#[derive(Debug, Default, Clone)]
pub(crate) struct Trace {
    pub hidden: usize,
    pub steps: usize,
    pub phi_used: Vec<f64>,
    pub hin_used: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub h_out: Vec<f64>,
    /// GRU: r, z, n, (W_hn h + b_hn). JANET: f, c (remaining unused).
    pub g: [Vec<f64>; 4],
    pub y: Vec<Complex64>,
}

impl Trace {
    fn reset(&mut self, hidden: usize, steps: usize) {
        self.hidden = hidden;
        self.steps = steps;
        let hs = hidden * steps;
        self.phi_used.clear();
        self.phi_used.resize(FEATURE_SIZE * steps, 0.0);
        for v in [&mut self.hin_used, &mut self.h_prev, &mut self.h_out] {
            v.clear();
            v.resize(hs, 0.0);
        }
        for v in &mut self.g {
            v.clear();
            v.resize(hs, 0.0);
        }
        self.y.clear();
    }
}

fn hold(x: &[f64], buf: &mut [f64], theta: f64) {
    for (v, b) in x.iter().zip(buf.iter_mut()) {
        if (v - *b).abs() > theta {
            *b = *v;
        }
    }
}

/// Runs `model` over `phis` from a zero state, recording the trace.
/// With `thresholds`, weight products see delta-held buffers.
pub(crate) fn forward_trace(
    model: &DpdModel<f64>,
    phis: &[Feature],
    thresholds: Option<(f64, f64)>,
    tr: &mut Trace,
) {
    let h = model.hidden_size();
    let steps = phis.len();
    tr.reset(h, steps);
    let mut x_phi = [0.0; FEATURE_SIZE];
    let mut x_h = vec![0.0; h];
    let mut state = vec![0.0; h];
    let mut a = vec![0.0; h];
    let mut b = vec![0.0; h];
    let mut c = vec![0.0; h];
    let mut d = vec![0.0; h];
    for (t, phi) in phis.iter().enumerate() {
        let (pu, hu): (&[f64], &[f64]) = match thresholds {
            Some((tp, th)) => {
                hold(phi, &mut x_phi, tp);
                hold(&state, &mut x_h, th);
                (&x_phi, &x_h)
            }
            None => (phi, &state),
        };
        let hs = t * h..(t + 1) * h;
        tr.phi_used[t * FEATURE_SIZE..(t + 1) * FEATURE_SIZE].copy_from_slice(pu);
        tr.hin_used[hs.clone()].copy_from_slice(hu);
        tr.h_prev[hs.clone()].copy_from_slice(&state);
        match &model.cell {
            Cell::Gru(w) => {
                for i in 0..h {
                    a[i] = w.b_ir[i] + w.b_hr[i];
                    b[i] = w.b_iz[i] + w.b_hz[i];
                    c[i] = w.b_in[i];
                    d[i] = w.b_hn[i];
                }
                w.w_ir.gemv_acc(pu, &mut a);
                w.w_hr.gemv_acc(hu, &mut a);
                w.w_iz.gemv_acc(pu, &mut b);
                w.w_hz.gemv_acc(hu, &mut b);
                w.w_in.gemv_acc(pu, &mut c);
                w.w_hn.gemv_acc(hu, &mut d);
                for i in 0..h {
                    let r = sigmoid(a[i]);
                    let z = sigmoid(b[i]);
                    let n = (c[i] + r * d[i]).tanh();
                    let k = t * h + i;
                    tr.g[0][k] = r;
                    tr.g[1][k] = z;
                    tr.g[2][k] = n;
                    tr.g[3][k] = d[i];
                    state[i] = (1.0 - z) * state[i] + z * n;
                }
            }
            Cell::Janet(w) => {
                for i in 0..h {
                    a[i] = w.b_if[i] + w.b_hf[i];
                    b[i] = w.b_ic[i] + w.b_hc[i];
                }
                w.w_if.gemv_acc(pu, &mut a);
                w.w_hf.gemv_acc(hu, &mut a);
                w.w_ic.gemv_acc(pu, &mut b);
                w.w_hc.gemv_acc(hu, &mut b);
                for i in 0..h {
                    let f = sigmoid(a[i]);
                    let cc = b[i].tanh();
                    let k = t * h + i;
                    tr.g[0][k] = f;
                    tr.g[1][k] = cc;
                    state[i] = f * state[i] + (1.0 - f) * cc;
                }
            }
        }
        tr.h_out[hs].copy_from_slice(&state);
        tr.y.push(model.head.apply(&state));
    }
}

/// Reverse pass over a recorded trace.
///
/// `dy[t]` is the loss gradient with respect to output `t` (real part for I,
/// imaginary for Q). Parameter gradients are added into `grads` when given;
/// input-feature gradients are written to `dphi` when given. Held buffers are
/// treated as the identity of the values they hold (straight-through).
pub(crate) fn backward(
    model: &DpdModel<f64>,
    tr: &Trace,
    dy: &[Complex64],
    mut grads: Option<&mut DpdModel<f64>>,
    mut dphi: Option<&mut [Feature]>,
) {
    let h = tr.hidden;
    let mut carry = vec![0.0; h];
    let mut dh = vec![0.0; h];
    let mut d1 = vec![0.0; h];
    let mut d2 = vec![0.0; h];
    let mut d3 = vec![0.0; h];
    let mut d4 = vec![0.0; h];
    let mut dhu = vec![0.0; h];
    let w_y = &model.head.w_y;
    for t in (0..tr.steps).rev() {
        let hs = t * h..(t + 1) * h;
        let pu = &tr.phi_used[t * FEATURE_SIZE..(t + 1) * FEATURE_SIZE];
        let hu = &tr.hin_used[hs.clone()];
        let hp = &tr.h_prev[hs.clone()];
        let dyt = [dy[t].re, dy[t].im];
        dh.copy_from_slice(&carry);
        w_y.gemv_t_acc(&dyt, &mut dh);
        if let Some(g) = grads.as_deref_mut() {
            g.head.w_y.outer_acc(&dyt, &tr.h_out[hs.clone()]);
            g.head.b_y[0] += dyt[0];
            g.head.b_y[1] += dyt[1];
        }
        dhu.iter_mut().for_each(|v| *v = 0.0);
        let mut dp = [0.0; FEATURE_SIZE];
        match &model.cell {
            Cell::Gru(w) => {
                // d1 = da_r, d2 = da_z, d3 = da_n, d4 = d(W_hn h + b_hn)
                for i in 0..h {
                    let k = t * h + i;
                    let (r, z, n, gn) = (tr.g[0][k], tr.g[1][k], tr.g[2][k], tr.g[3][k]);
                    let dn = dh[i] * z;
                    let dz = dh[i] * (n - hp[i]);
                    carry[i] = dh[i] * (1.0 - z);
                    let dan = dn * (1.0 - n * n);
                    d3[i] = dan;
                    d4[i] = dan * r;
                    d1[i] = dan * gn * r * (1.0 - r);
                    d2[i] = dz * z * (1.0 - z);
                }
                w.w_hr.gemv_t_acc(&d1, &mut dhu);
                w.w_hz.gemv_t_acc(&d2, &mut dhu);
                w.w_hn.gemv_t_acc(&d4, &mut dhu);
                if dphi.is_some() {
                    w.w_ir.gemv_t_acc(&d1, &mut dp);
                    w.w_iz.gemv_t_acc(&d2, &mut dp);
                    w.w_in.gemv_t_acc(&d3, &mut dp);
                }
                if let Some(Cell::Gru(gw)) = grads.as_deref_mut().map(|g| &mut g.cell) {
                    gw.w_ir.outer_acc(&d1, pu);
                    gw.w_iz.outer_acc(&d2, pu);
                    gw.w_in.outer_acc(&d3, pu);
                    gw.w_hr.outer_acc(&d1, hu);
                    gw.w_hz.outer_acc(&d2, hu);
                    gw.w_hn.outer_acc(&d4, hu);
                    for i in 0..h {
                        gw.b_ir[i] += d1[i];
                        gw.b_hr[i] += d1[i];
                        gw.b_iz[i] += d2[i];
                        gw.b_hz[i] += d2[i];
                        gw.b_in[i] += d3[i];
                        gw.b_hn[i] += d4[i];
                    }
                }
            }
            Cell::Janet(w) => {
                // d1 = da_f, d2 = da_c
                for i in 0..h {
                    let k = t * h + i;
                    let (f, c) = (tr.g[0][k], tr.g[1][k]);
                    carry[i] = dh[i] * f;
                    d1[i] = dh[i] * (hp[i] - c) * f * (1.0 - f);
                    d2[i] = dh[i] * (1.0 - f) * (1.0 - c * c);
                }
                w.w_hf.gemv_t_acc(&d1, &mut dhu);
                w.w_hc.gemv_t_acc(&d2, &mut dhu);
                if dphi.is_some() {
                    w.w_if.gemv_t_acc(&d1, &mut dp);
                    w.w_ic.gemv_t_acc(&d2, &mut dp);
                }
                if let Some(Cell::Janet(gw)) = grads.as_deref_mut().map(|g| &mut g.cell) {
                    gw.w_if.outer_acc(&d1, pu);
                    gw.w_ic.outer_acc(&d2, pu);
                    gw.w_hf.outer_acc(&d1, hu);
                    gw.w_hc.outer_acc(&d2, hu);
                    for i in 0..h {
                        gw.b_if[i] += d1[i];
                        gw.b_hf[i] += d1[i];
                        gw.b_ic[i] += d2[i];
                        gw.b_hc[i] += d2[i];
                    }
                }
            }
        }
        for i in 0..h {
            carry[i] += dhu[i];
        }
        if let Some(out) = dphi.as_deref_mut() {
            out[t] = dp;
        }
    }
}

/// Pulls a feature-space gradient back to the complex sample it came from.
#[inline]
pub(crate) fn feature_vjp(u: Complex64, g: &Feature) -> Complex64 {
    let (i, q) = (u.re, u.im);
    let r = u.norm();
    let mut di = g[0];
    let mut dq = g[1];
    if r > 0.0 {
        let r3 = r * r * r;
        di += g[2] * i / r + g[3] * 3.0 * r * i - g[4] * q * i / r3 + g[5] * q * q / r3;
        dq += g[2] * q / r + g[3] * 3.0 * r * q + g[4] * i * i / r3 - g[5] * i * q / r3;
    }
    Complex64::new(di, dq)
}

/// Reusable buffers for one worker evaluating frames.
#[derive(Debug, Default)]
pub(crate) struct FrameWork {
    dpd: Trace,
    pa: Trace,
    phis: Vec<Feature>,
    pa_phis: Vec<Feature>,
    dy: Vec<Complex64>,
    dphi: Vec<Feature>,
}

/// What the trained network's output is compared against.
#[derive(Clone, Copy)]
pub(crate) enum Stage<'a> {
    /// Network output itself.
    Direct,
    /// Output passed through a frozen network first.
    Through(&'a DpdModel<f64>),
}

/// Mean squared error of one frame and, optionally, its parameter gradient
/// (scaled by `scale`) accumulated into `grads`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn frame_loss_grad(
    model: &DpdModel<f64>,
    stage: Stage<'_>,
    input: &[Complex64],
    target: &[Complex64],
    thresholds: Option<(f64, f64)>,
    scale: f64,
    grads: Option<&mut DpdModel<f64>>,
    work: &mut FrameWork,
) -> f64 {
    let n = input.len();
    work.phis.clear();
    work.phis.extend(input.iter().map(|&x| feature(x)));
    forward_trace(model, &work.phis, thresholds, &mut work.dpd);
    let out: &[Complex64] = match stage {
        Stage::Direct => &work.dpd.y,
        Stage::Through(pa) => {
            work.pa_phis.clear();
            work.pa_phis.extend(work.dpd.y.iter().map(|&u| feature(u)));
            forward_trace(pa, &work.pa_phis, None, &mut work.pa);
            &work.pa.y
        }
    };
    let mut loss = 0.0;
    work.dy.clear();
    for (o, t) in out.iter().zip(target) {
        let e = o - t;
        loss += e.norm_sqr();
        work.dy.push(e * (2.0 * scale / n as f64));
    }
    loss /= n as f64;
    if let Some(g) = grads {
        if let Stage::Through(pa) = stage {
            work.dphi.clear();
            work.dphi.resize(n, [0.0; FEATURE_SIZE]);
            backward(pa, &work.pa, &work.dy, None, Some(&mut work.dphi));
            for t in 0..n {
                work.dy[t] = feature_vjp(work.dpd.y[t], &work.dphi[t]);
            }
        }
        backward(model, &work.dpd, &work.dy, Some(g), None);
    }
    loss * scale
}
