use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deltadpd::delta::ThresholdConfig;
use deltadpd::Error;
use deltadpd_cli::error::{CliError, CliResult, EXIT_OK};
use deltadpd_cli::pipeline;
use deltadpd_cli::report::format_table;
use deltadpd_cli::RunConfig;

#[derive(Parser)]
#[command(name = "deltadpd", version, about = "Delta-network RNN digital predistortion")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Forces ordered gradient reduction in every training stage.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the OFDM test signal and the PA datasets.
    Gen,
    /// Fit the behavioral PA surrogate.
    TrainPa,
    /// Train the predistorter through the frozen surrogate.
    TrainDpd,
    /// Evaluate the threshold sweep on the test split.
    Sweep,
    /// Evaluate one model at one threshold pair.
    Eval {
        /// Weight file; the trained predistorter in the output directory by default.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        theta_phi: f64,
        #[arg(long, default_value_t = 0.0)]
        theta_h: f64,
    },
    /// Run gen, train-pa, train-dpd and sweep in order.
    All,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn load_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if c.deterministic {
        cfg.force_deterministic();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("DELTADPD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| Error::Config(format!("DELTADPD_THREADS={v:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(())
}

fn print_sweep(s: &pipeline::SweepSummary) {
    println!(
        "no DPD: NMSE {:.2} dB, ACPR {:.2}/{:.2} dBc",
        s.no_dpd.nmse_db, s.no_dpd.acpr_left_dbc, s.no_dpd.acpr_right_dbc
    );
    print!("{}", format_table(&s.rows));
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Gen => {
            let r = pipeline::cmd_gen(&cfg)?;
            println!(
                "{} samples, PAPR {:.2} dB (before CFR {:.2} dB, {} iterations)",
                r.samples, r.papr_db, r.papr_before_cfr_db, r.cfr_iterations
            );
        }
        Command::TrainPa => {
            let r = pipeline::cmd_train_pa(&cfg)?;
            println!("surrogate: {} parameters, validation NMSE {:.2} dB", r.params, r.val_nmse_db);
        }
        Command::TrainDpd => {
            let r = pipeline::cmd_train_dpd(&cfg)?;
            println!(
                "predistorter: {} parameters, gain {:.4}, validation NMSE {:.2} dB",
                r.params, r.target_gain, r.dense_val_nmse_db
            );
            if let Some(v) = r.finetune_val_nmse_db {
                println!("after delta fine-tuning: validation NMSE {v:.2} dB");
            }
        }
        Command::Sweep => print_sweep(&pipeline::cmd_sweep(&cfg)?),
        Command::Eval { model, theta_phi, theta_h } => {
            let th = ThresholdConfig::new(theta_phi, theta_h)?;
            let r = pipeline::cmd_eval(&cfg, model.as_deref(), th)?;
            let m = &r.point.metrics;
            println!(
                "gamma {:.3}, NMSE {:.2} dB, EVM {:.2} dB, ACPR {:.2}/{:.2} dBc, energy {:.3e} J",
                r.point.stats.gamma_overall(),
                m.nmse_db,
                m.evm_dbc,
                m.acpr_left_dbc,
                m.acpr_right_dbc,
                r.energy_j
            );
        }
        Command::All => print_sweep(&pipeline::cmd_all(&cfg)?),
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let e: CliError = e;
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
