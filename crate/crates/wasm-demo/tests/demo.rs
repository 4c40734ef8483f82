use deltadpd_wasm_demo::{Demo, TRAINED_PAPR_DB};

fn demo() -> Demo {
    Demo::create(7).unwrap()
}

#[test]
fn spectrum_regrowth_grows_with_drive() {
    let d = demo();
    let low = d.spectrum_report(0.4, TRAINED_PAPR_DB).unwrap();
    let high = d.spectrum_report(1.2, TRAINED_PAPR_DB).unwrap();
    assert_eq!(low.freq_mhz.len(), low.output_db.len());
    assert_eq!(low.freq_mhz.len(), low.input_db.len());
    assert!(high.acpr_left_dbc.max(high.acpr_right_dbc) > low.acpr_left_dbc.max(low.acpr_right_dbc) + 5.0);
    assert!(high.papr_db <= TRAINED_PAPR_DB + 0.3);
}

#[test]
fn sparsity_and_energy_follow_the_threshold() {
    let d = demo();
    let dense = d.sparsity_report(0.0).unwrap();
    let mid = d.sparsity_report(0.1).unwrap();
    let high = d.sparsity_report(0.4).unwrap();
    // only exactly-unchanged components are skipped at zero threshold
    assert!(dense.gamma < 1e-3);
    assert!((dense.energy_j - dense.dense_energy_j).abs() <= 1e-12 * dense.energy_j);
    assert!(mid.gamma > 0.0 && high.gamma > mid.gamma);
    assert!(high.energy_j < mid.energy_j && mid.energy_j < dense.energy_j);
    assert!(high.mul < dense.mul && high.mem < dense.mem);
    // the bundled predistorter linearizes the burst at its training threshold
    assert!(mid.nmse_db < -35.0, "NMSE {}", mid.nmse_db);
}

#[test]
fn predistortion_flattens_am_am() {
    let d = demo();
    let spread = |with: bool| {
        let c = d.curve_report(1.0, with).unwrap();
        let gains: Vec<f64> = c.abs_in.iter().zip(&c.abs_out).skip(2).map(|(i, o)| o / i).collect();
        let max = gains.iter().cloned().fold(f64::MIN, f64::max);
        let min = gains.iter().cloned().fold(f64::MAX, f64::min);
        20.0 * (max / min).log10()
    };
    let (off, on) = (spread(false), spread(true));
    assert!(on < off / 2.0, "gain spread with {on:.3} dB, without {off:.3} dB");
}

#[test]
fn negative_threshold_is_rejected() {
    assert!(demo().sparsity_report(-0.1).is_err());
}
