use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::rnncore::{forward_samples, init_weights, CellKind};
use crate::signal::{features_of, tone};

fn random_walk(len: usize, seed: u64, step: f64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Complex64::new(0.0, 0.0);
    (0..len)
        .map(|_| {
            x += Complex64::new(rng.gen_range(-step..step), rng.gen_range(-step..step));
            x *= 0.98;
            x
        })
        .collect()
}

fn params(model: &DpdModel<f64>) -> BTreeMap<&'static str, Vec<f64>> {
    model.tensors().into_iter().map(|(n, d)| (n, d.to_vec())).collect()
}

/// Dense recomputation on held buffers, written against the named tensors.
mod oracle {
    use std::collections::BTreeMap;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn mv(w: &[f64], cols: usize, r: usize, x: &[f64]) -> f64 {
        (0..cols).map(|c| w[r * cols + c] * x[c]).sum()
    }

    pub struct Trace {
        pub outputs: Vec<(f64, f64)>,
        pub mul: u64,
        pub active_columns: u64,
    }

    fn hold(x: &[f64], buf: &mut [f64], theta: f64) -> u64 {
        let mut n = 0;
        for (v, b) in x.iter().zip(buf.iter_mut()) {
            if (v - *b).abs() > theta {
                *b = *v;
                n += 1;
            }
        }
        n
    }

    pub fn run(
        p: &BTreeMap<&str, Vec<f64>>,
        gru: bool,
        h: usize,
        feats: &[[f64; 6]],
        theta_phi: f64,
        theta_h: f64,
    ) -> Trace {
        let gates = if gru { 3 } else { 2 };
        let mut xp = vec![0.0; 6];
        let mut xh = vec![0.0; h];
        let mut hs = vec![0.0; h];
        let mut trace = Trace { outputs: vec![], mul: 0, active_columns: 0 };
        for phi in feats {
            let active = hold(phi, &mut xp, theta_phi) + hold(&hs, &mut xh, theta_h);
            trace.active_columns += active;
            trace.mul += active * (gates * h) as u64 + (gates * h) as u64 + 2 * h as u64;
            let next: Vec<f64> = (0..h)
                .map(|k| {
                    if gru {
                        let r = sig(mv(&p["W_ir"], 6, k, &xp) + mv(&p["W_hr"], h, k, &xh) + p["b_ir"][k] + p["b_hr"][k]);
                        let z = sig(mv(&p["W_iz"], 6, k, &xp) + mv(&p["W_hz"], h, k, &xh) + p["b_iz"][k] + p["b_hz"][k]);
                        let n = (mv(&p["W_in"], 6, k, &xp) + p["b_in"][k]
                            + r * (mv(&p["W_hn"], h, k, &xh) + p["b_hn"][k]))
                            .tanh();
                        (1.0 - z) * hs[k] + z * n
                    } else {
                        let f = sig(mv(&p["W_if"], 6, k, &xp) + mv(&p["W_hf"], h, k, &xh) + p["b_if"][k] + p["b_hf"][k]);
                        let c = (mv(&p["W_ic"], 6, k, &xp) + mv(&p["W_hc"], h, k, &xh) + p["b_ic"][k] + p["b_hc"][k]).tanh();
                        f * hs[k] + (1.0 - f) * c
                    }
                })
                .collect();
            hs = next;
            trace.outputs.push((
                mv(&p["W_y"], h, 0, &hs) + p["b_y"][0],
                mv(&p["W_y"], h, 1, &hs) + p["b_y"][1],
            ));
        }
        trace
    }
}

fn rel_err(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

#[test]
fn encode_hand_example() {
    let th = ThresholdConfig::new(0.05, 0.05).unwrap();
    let (d, xt, m) = delta_encode(&[0.04, 0.06], &[0.0, 0.0], th.theta_phi).unwrap();
    assert_eq!(d, vec![0.0, 0.06]);
    assert_eq!(xt, vec![0.0, 0.06]);
    assert_eq!(m, vec![false, true]);
    let (d, xt, m) = delta_encode(&[0.08, 0.06], &xt, 0.05).unwrap();
    assert_eq!(d, vec![0.08, 0.0]);
    assert_eq!(xt, vec![0.08, 0.06]);
    assert_eq!(m, vec![true, false]);
}

#[test]
fn encode_ties_and_zero_threshold() {
    let (d, xt, m) = delta_encode(&[0.5, 0.25], &[0.5, 0.25], 0.1).unwrap();
    assert_eq!((d, xt, m), (vec![0.0, 0.0], vec![0.5, 0.25], vec![false, false]));
    // |0.75 - 0.5| equals theta exactly: skipped.
    let (_, _, m) = delta_encode(&[0.75], &[0.5], 0.25).unwrap();
    assert_eq!(m, vec![false]);
    let (d, xt, m) = delta_encode(&[1.0, 2.0, 3.0], &[1.0, 0.0, -1.0], 0.0).unwrap();
    assert_eq!(d, vec![0.0, 2.0, 4.0]);
    assert_eq!(xt, vec![1.0, 2.0, 3.0]);
    assert_eq!(m, vec![false, true, true]);
    assert!(delta_encode(&[1.0], &[1.0, 2.0], 0.0).is_err());
}

#[test]
fn threshold_validation() {
    assert!(ThresholdConfig::new(-0.1, 0.0).is_err());
    assert!(ThresholdConfig::new(0.0, f64::NAN).is_err());
    assert!(ThresholdConfig::new(0.0, 0.05).is_ok());
}

fn check_against_oracle(kind: CellKind, seed: u64, len: usize, th: (f64, f64)) {
    let model = init_weights(kind, 12, seed).unwrap();
    let feats = features_of(&random_walk(len, seed + 7, 0.08));
    let tr = oracle::run(&params(&model), kind == CellKind::Gru, 12, &feats.frames, th.0, th.1);
    let (out, stats) = run_delta_samples(&model, &feats, &ThresholdConfig::new(th.0, th.1).unwrap()).unwrap();
    for (k, (y, o)) in out.iter().zip(&tr.outputs).enumerate() {
        assert!((y.re - o.0).abs() < 1e-11 && (y.im - o.1).abs() < 1e-11, "step {k}: {y} vs {o:?}");
    }
    assert_eq!(stats.mul_count, tr.mul);
    let total_cols = (6 + 12) * len as u64;
    assert_eq!(stats.total_macs, total_cols * (kind.gates() * 12) as u64);
    assert_eq!(stats.skipped_macs, (total_cols - tr.active_columns) * (kind.gates() * 12) as u64);
}

#[test]
fn gru_matches_buffered_oracle_on_short_sequence() {
    check_against_oracle(CellKind::Gru, 3, 10, (0.0, 0.05));
}

#[test]
fn gru_and_janet_match_buffered_oracle() {
    for kind in [CellKind::Gru, CellKind::Janet] {
        for th in [(0.0, 0.0), (0.0, 0.02), (0.01, 0.05), (0.05, 0.3)] {
            check_against_oracle(kind, 11, 400, th);
        }
    }
}

#[test]
fn zero_threshold_equals_dense_forward_f64_and_f32() {
    let feats = features_of(&random_walk(10_000, 5, 0.1));
    for kind in [CellKind::Gru, CellKind::Janet] {
        let model = init_weights(kind, 15, 21).unwrap();
        let dense = forward_samples(&model, &feats, None).unwrap();
        let (d64, stats) = run_delta_samples(&model, &feats, &ThresholdConfig::dense()).unwrap();
        assert!(rel_err(&d64, &dense) <= 1e-12, "{kind} f64 {}", rel_err(&d64, &dense));
        assert!(stats.gamma_overall() < 0.01, "{kind} gamma {}", stats.gamma_overall());

        let (d32, _) = run_delta_samples(&model.cast::<f32>(), &feats, &ThresholdConfig::dense()).unwrap();
        let d32: Vec<Complex<f64>> = d32.iter().map(|c| Complex::new(c.re as f64, c.im as f64)).collect();
        let e = rel_err(&d32, &dense);
        assert!(e <= 1e-5, "{kind} f32 relative error {e}");
    }
}

#[test]
fn constant_input_settles_to_repeated_output() {
    let sig = vec![Complex64::new(0.3, -0.2); 400];
    let feats = features_of(&sig);
    for kind in [CellKind::Gru, CellKind::Janet] {
        let model = init_weights(kind, 10, 2).unwrap();
        let (out, _) = run_delta_samples(&model, &feats, &ThresholdConfig::new(0.01, 0.01).unwrap()).unwrap();
        let kernel = DeltaKernel::new(&model).unwrap();
        let mut st = kernel.initial_state();
        let mut stats = SparsityStats::default();
        let phi = feats.frames[0];
        for _ in 0..400 {
            kernel.step(&phi, &mut st, (0.01, 0.01), &mut stats).unwrap();
        }
        let before = stats.clone();
        let acc = st.acc.clone();
        let y1 = kernel.step(&phi, &mut st, (0.01, 0.01), &mut stats).unwrap();
        let y2 = kernel.step(&phi, &mut st, (0.01, 0.01), &mut stats).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(y1, out[399]);
        assert_eq!(st.acc, acc, "accumulators must be untouched when everything is skipped");
        assert_eq!(stats.skipped_macs - before.skipped_macs, stats.total_macs - before.total_macs);
    }
}

#[test]
fn all_zero_input_sparsity_approaches_one() {
    let feats = features_of(&vec![Complex64::new(0.0, 0.0); 2000]);
    let model = init_weights(CellKind::Gru, 15, 4).unwrap();
    let th = ThresholdConfig::new(0.0, 1e-4).unwrap();
    let (_, short) = run_delta_samples(&model, &FeatureSeq { frames: feats.frames[..200].to_vec() }, &th).unwrap();
    let (_, long) = run_delta_samples(&model, &feats, &th).unwrap();
    assert_eq!(short.skipped_phi_components, short.total_phi_components);
    assert!(long.gamma_overall() > short.gamma_overall());
    assert!(long.gamma_overall() > 0.97, "gamma {}", long.gamma_overall());
}

#[test]
fn accumulators_equal_bias_plus_weights_times_buffers() {
    let model = init_weights(CellKind::Gru, 8, 9).unwrap();
    let kernel = DeltaKernel::new(&model).unwrap();
    let feats = features_of(&random_walk(300, 1, 0.1));
    let mut st = kernel.initial_state();
    let mut stats = SparsityStats::default();
    for f in &feats.frames {
        kernel.step(f, &mut st, (0.02, 0.04), &mut stats).unwrap();
    }
    let p = params(&model);
    let h = 8;
    let dot = |w: &str, cols: usize, r: usize, x: &[f64]| -> f64 {
        (0..cols).map(|c| p[w][r * cols + c] * x[c]).sum()
    };
    #[allow(clippy::needless_range_loop)]
    for k in 0..h {
        let xp = &st.x_tilde_phi;
        let xh = &st.x_tilde_h;
        let m_nphi = p["b_in"][k] + dot("W_in", 6, k, xp);
        let m_r = p["b_ir"][k] + p["b_hr"][k] + dot("W_ir", 6, k, xp) + dot("W_hr", h, k, xh);
        let m_z = p["b_iz"][k] + p["b_hz"][k] + dot("W_iz", 6, k, xp) + dot("W_hz", h, k, xh);
        let m_nh = p["b_hn"][k] + dot("W_hn", h, k, xh);
        for (got, want) in [(st.acc[k], m_nphi), (st.acc[h + k], m_r), (st.acc[2 * h + k], m_z), (st.acc[3 * h + k], m_nh)] {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}

#[test]
fn sparsity_grows_along_threshold_grid() {
    let feats = features_of(&random_walk(3000, 17, 0.05));
    for seed in 0..3 {
        let model = init_weights(CellKind::Gru, 15, seed).unwrap();
        let mut last = -1.0;
        for th_h in [0.0, 0.008, 0.016, 0.05, 0.1, 0.4] {
            let (_, s) = run_delta_samples(&model, &feats, &ThresholdConfig::new(0.0, th_h).unwrap()).unwrap();
            assert!(s.gamma_overall() >= last, "seed {seed} theta_h {th_h}");
            last = s.gamma_overall();
        }
        // Input features never skip at theta_phi = 0, capping gamma at 15/21.
        assert!(last <= 15.0 / 21.0 + 1e-12);
    }
}

#[test]
fn op_counts_at_extremes() {
    let model = init_weights(CellKind::Gru, 15, 1).unwrap();
    let kernel = DeltaKernel::new(&model).unwrap();
    let mut st = kernel.initial_state();
    let mut stats = SparsityStats::default();
    let phi = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    kernel.step(&phi, &mut st, (0.0, 0.0), &mut stats).unwrap();
    // First step: all 6 features active, hidden state still zero.
    assert_eq!(stats.mul_count, 6 * 45 + 45 + 30);
    assert_eq!(stats.add_count, 6 * 45 + 21 + 45 + 30);
    assert_eq!(stats.mem_count, 6 * 45 + 21 + 6 + 2 * 60 + 30 + 32);
    assert_eq!(stats.activation_count, 45);
    assert_eq!(stats.per_gate.len(), 3);
    assert_eq!(stats.per_gate[0].total_macs, 21 * 15);
    assert_eq!(stats.per_gate[0].skipped_macs, 15 * 15);
}

#[test]
fn kernel_kind_mismatch_and_numeric_errors() {
    let gru = init_weights(CellKind::Gru, 4, 0).unwrap();
    let kernel = DeltaKernel::new(&gru).unwrap();
    let mut st = kernel.initial_state();
    let mut stats = SparsityStats::default();
    let th = ThresholdConfig::dense();
    assert!(delta_janet_step(&kernel, &[0.0; 6], &mut st, &th, &mut stats).is_err());
    assert!(delta_gru_step(&kernel, &[0.0; 6], &mut st, &th, &mut stats).is_ok());
    let err = delta_gru_step(&kernel, &[f64::INFINITY, 0.0, 0.0, 0.0, 0.0, 0.0], &mut st, &th, &mut stats)
        .unwrap_err();
    match err {
        Error::Numeric { step, .. } => assert_eq!(step, 1),
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn stats_merge_adds_counters_and_round_trips() {
    let model = init_weights(CellKind::Janet, 6, 3).unwrap();
    let f = features_of(tone(1e6, 100e6, 500, 0.5).unwrap().samples());
    let th = ThresholdConfig::new(0.0, 0.05).unwrap();
    let (_, a) = run_delta_samples(&model, &FeatureSeq { frames: f.frames[..200].to_vec() }, &th).unwrap();
    let (_, b) = run_delta_samples(&model, &FeatureSeq { frames: f.frames[200..].to_vec() }, &th).unwrap();
    let mut m = a.clone();
    m.merge(&b);
    assert_eq!(m.steps, 500);
    assert_eq!(m.mul_count, a.mul_count + b.mul_count);
    assert_eq!(m.per_gate[1].total_macs, a.per_gate[1].total_macs + b.per_gate[1].total_macs);
    let json = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<SparsityStats>(&json).unwrap(), m);
    let per = m.per_inference();
    assert!((per.mul - m.mul_count as f64 / 500.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_agreement_for_random_thresholds(seed in 0u64..1000, tp in 0.0f64..0.1, th in 0.0f64..0.3) {
        let model = init_weights(CellKind::Gru, 6, seed).unwrap();
        let feats = features_of(&random_walk(60, seed, 0.1));
        let tr = oracle::run(&params(&model), true, 6, &feats.frames, tp, th);
        let (out, stats) = run_delta_samples(&model, &feats, &ThresholdConfig::new(tp, th).unwrap()).unwrap();
        for (y, o) in out.iter().zip(&tr.outputs) {
            prop_assert!((y.re - o.0).abs() < 1e-11 && (y.im - o.1).abs() < 1e-11);
        }
        prop_assert_eq!(stats.mul_count, tr.mul);
    }

    #[test]
    fn gamma_is_a_fraction(seed in 0u64..1000, th in 0.0f64..1.0) {
        let model = init_weights(CellKind::Janet, 5, seed).unwrap();
        let feats = features_of(&random_walk(50, seed, 0.1));
        let (_, s) = run_delta_samples(&model, &feats, &ThresholdConfig::new(th, th).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.gamma_overall()));
        prop_assert!(s.skipped_macs <= s.total_macs);
    }
}
