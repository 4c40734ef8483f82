//! Signal generation, PA simulation and metrics working together.

use deltadpd::metrics::{acpr_dbc, amam_ampm, evaluate, papr_db, AcprSpec, PsdConfig, AMPM_EPS};
use deltadpd::pa::{default_test_pa, pa_simulate, MemoryPolyPa};
use deltadpd::signal::{
    apply_cfr, generate_ofdm, read_dataset_csv, split_dataset, write_dataset_csv, CfrConfig, Dataset,
    OfdmConfig, SignalPair, SplitFractions,
};
use deltadpd::Complex64;

fn short_ofdm(seed: u64) -> OfdmConfig {
    OfdmConfig { n_symbols: 1, seed, ..OfdmConfig::default() }
}

#[test]
fn crest_factor_reduction_reaches_target_and_keeps_spectrum() {
    let ofdm = short_ofdm(3);
    let raw = generate_ofdm(&ofdm).unwrap();
    let before = papr_db(&raw).unwrap();
    let out = apply_cfr(&raw, &CfrConfig::for_ofdm(&ofdm, 9.0)).unwrap();
    assert!(before > 9.0, "raw PAPR {before}");
    assert!(out.papr_db <= 9.3, "PAPR after CFR {}", out.papr_db);
    assert!(!out.target_missed);
    // clipping noise is filtered back into the occupied band
    let acpr = acpr_dbc(&out.signal, &AcprSpec::default(), &PsdConfig::default()).unwrap();
    assert!(acpr.worst() < -60.0, "CFR leaked {:?}", acpr);
}

#[test]
fn reference_pa_distorts_and_identity_pa_does_not() {
    let ofdm = short_ofdm(4);
    let mut x = apply_cfr(&generate_ofdm(&ofdm).unwrap(), &CfrConfig::for_ofdm(&ofdm, 10.0)).unwrap().signal;
    x.normalize_peak();
    let pa = default_test_pa();
    let y = pa_simulate(&pa, &x).unwrap();
    let reference = x.scaled(Complex64::new(pa.small_signal_gain(), 0.0));
    let m = evaluate(&reference, &y, &AcprSpec::default(), &PsdConfig::default()).unwrap();
    assert!((-45.0..=-30.0).contains(&m.acpr().worst()), "{m:?}");
    assert!(m.nmse_db > -35.0 && m.nmse_db < -10.0, "{m:?}");

    let clean = pa_simulate(&MemoryPolyPa::identity(), &x).unwrap();
    assert_eq!(clean.samples(), x.samples());

    // compression: high-amplitude bins gain less than the small-signal gain
    let curve = amam_ampm(&x, &y, AMPM_EPS).unwrap().binned(16);
    let g0 = curve[1].abs_out / curve[1].abs_in;
    let g1 = curve.last().unwrap().abs_out / curve.last().unwrap().abs_in;
    assert!(g1 < g0, "no compression: {g0} -> {g1}");
}

#[test]
fn dataset_files_round_trip_and_split_in_order() {
    let x = generate_ofdm(&short_ofdm(5)).unwrap();
    let y = pa_simulate(&default_test_pa(), &x).unwrap();
    let pair = SignalPair::new(x, y).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    write_dataset_csv(&path, &pair, 2.5).unwrap();
    let (back, meta) = read_dataset_csv(&path).unwrap();
    assert_eq!(back, pair);
    assert_eq!(meta.normalization_scale, 2.5);

    let ds = Dataset { pair: back, split: SplitFractions::default() };
    let s = split_dataset(&ds, 1000).unwrap();
    assert_eq!(s.train.len() + s.val.len() + s.test.len(), pair.len());
    let n = s.train.len();
    assert_eq!(s.val.input.samples()[0], pair.input.samples()[n]);
}
