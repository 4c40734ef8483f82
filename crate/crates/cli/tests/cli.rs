use std::path::Path;
use std::process::{Command, Output};

use deltadpd_cli::error::{EXIT_CONFIG, EXIT_GATE, EXIT_IO};
use deltadpd_cli::pipeline::SweepSummary;
use deltadpd_cli::report::{read_sweep_csv, SWEEP_HEADER};
use deltadpd_cli::RunConfig;

/// A pipeline small enough to run in seconds: one OFDM symbol and a few epochs.
const SMALL: &str = r#"
seed = 5

[signal.ofdm]
n_symbols = 1

[behavioral]
hidden_size = 6
nmse_gate_db = -10.0

[behavioral.train]
epochs = 3
batch_size = 8
frame_length = 64
frame_stride = 32

[dpd]
hidden_size = 4

[dpd.train]
epochs = 2
frame_length = 64
frame_stride = 64

[dpd.finetune]
epochs = 1
lr0 = 1e-3
frame_length = 64
frame_stride = 64
delta_thresholds = { theta_phi = 0.0, theta_h = 0.1 }

[sweep]
thresholds = [[0.0, 0.0], [0.0, 0.05], [0.0, 0.4]]
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deltadpd"));
    c.env("RUST_LOG", "warn");
    c
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(cfg).arg("--out").arg(out).output().unwrap()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn small_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    assert_ok(&run(&["all"], &cfg, &out));
    for f in [
        "dataset.csv",
        "dataset.csv.meta.json",
        "ident.csv",
        "pa_model.json",
        "pa_train.json",
        "dpd_dense.json",
        "dpd_model.json",
        "dpd_train.json",
        "dpd_finetune.json",
        "sweep.csv",
        "summary.json",
        "sweep/psd_no_dpd.csv",
        "sweep/amam_no_dpd.csv",
        "sweep/psd_00.csv",
        "sweep/amam_02.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), SWEEP_HEADER);
    let rows = read_sweep_csv(&out.join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    // only components that did not change at all are skipped at zero threshold
    assert!(rows[0].gamma < 1e-3);
    assert!((rows[0].energy_reduction_factor - 1.0).abs() < 1e-12);
    assert!(rows[2].gamma >= rows[1].gamma);

    let summary: SweepSummary =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let loaded = RunConfig::load(&cfg).unwrap();
    assert_eq!(summary.config_hash, loaded.hash());
    assert_eq!(summary.rows, rows);

    let e = run(&["eval", "--theta-h", "0.05"], &cfg, &out);
    assert_ok(&e);
    assert!(out.join("eval.json").exists());
    assert!(String::from_utf8_lossy(&e.stdout).contains("gamma"));
}

#[test]
fn same_seed_gives_identical_sweeps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert_ok(&run(&["all", "--deterministic"], &cfg, &a));
    assert_ok(&run(&["all", "--deterministic"], &cfg, &b));
    assert_ok(&run(&["all", "--deterministic", "--seed", "6"], &cfg, &c));
    let read = |d: &Path| std::fs::read(d.join("sweep.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    // output directory does not enter the hash
    let hash = |d: &Path| -> String {
        let s: SweepSummary =
            serde_json::from_str(&std::fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
        s.config_hash
    };
    assert_eq!(hash(&a), hash(&b));
    assert_ne!(hash(&a), hash(&c));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["gen"], &tmp.path().join("nope.toml"), tmp.path());
    assert_eq!(o.status.code(), Some(EXIT_IO));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[dpd]\nhiden_size = 4\n");
    let o = run(&["gen"], &cfg, tmp.path());
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hiden_size"));
}

#[test]
fn invalid_values_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    for text in ["[dpd]\nhidden_size = 0\n", "[sweep]\nthresholds = [[0.0, -1.0]]\n", "[pa]\nident_drive = 0.0\n"] {
        let cfg = write_config(tmp.path(), text);
        let o = run(&["gen"], &cfg, tmp.path());
        assert_eq!(o.status.code(), Some(EXIT_CONFIG), "{text}");
    }
}

#[test]
fn missing_pa_coefficient_file_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[pa]\ncoeff_file = \"absent.toml\"\n");
    assert_eq!(run(&["gen"], &cfg, tmp.path()).status.code(), Some(EXIT_IO));
}

#[test]
fn stage_without_inputs_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = run(&["train-pa"], &cfg, &tmp.path().join("empty"));
    assert_eq!(o.status.code(), Some(EXIT_IO));
}

#[test]
fn unmet_surrogate_gate_has_its_own_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("nmse_gate_db = -10.0", "nmse_gate_db = -150.0");
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    assert_ok(&run(&["gen"], &cfg, &out));
    let o = run(&["train-pa"], &cfg, &out);
    assert_eq!(o.status.code(), Some(EXIT_GATE));
    assert!(out.join("pa_model.json").exists());
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["show-config", "--out"])
        .arg(tmp.path())
        .env("DELTADPD_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn printed_config_round_trips() {
    let o = bin().args(["show-config", "--seed", "9"]).output().unwrap();
    assert_ok(&o);
    let text = String::from_utf8(o.stdout).unwrap();
    let back = RunConfig::from_toml_str(&text).unwrap();
    assert_eq!(back, RunConfig::default().with_seed(9));
    // every section is spelled out, so the printed file documents all knobs
    for key in ["[signal.ofdm]", "[pa]", "[behavioral.train]", "[dpd.finetune]", "[sweep]", "[metrics.energy]"] {
        assert!(text.contains(key), "missing {key}");
    }
}

#[test]
fn unknown_subcommand_fails() {
    let o = bin().arg("frobnicate").output().unwrap();
    assert!(!o.status.success());
}
