use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ogsync::harness::{
    emit_results, load_config, run_crb, run_experiment, run_scaling, run_trace, summarize, write_table,
    ExperimentConfig, Method, CRB_SNR_DB,
};
use ogsync::Error;

#[derive(Parser)]
#[command(name = "ogsync", version, about = "Phase synchronization and off-grid imaging experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "OGSYNC_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated method names, overriding the configuration.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Vec<Method>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method at the configured operating point.
    Simulate,
    /// Run the configured sweep.
    Sweep,
    /// ML phase-estimate variance against the CRB.
    Crb {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// SNR levels in dB.
        #[arg(long, value_delimiter = ',')]
        snr: Vec<f64>,
    },
    /// Reconstruction error as measurements and noise double.
    Scaling {
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, default_value_t = 45.0)]
        snr_db: f64,
    },
    /// Per-iteration AO trace of one trial.
    Trace {
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
}

fn config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if !common.methods.is_empty() {
        cfg.methods = common.methods.clone();
    }
    Ok(cfg)
}

fn written(path: &Path) {
    eprintln!("wrote {}", path.display());
}

/// Returns the number of failed runs.
fn run(cli: &Cli) -> Result<usize, Error> {
    let mut cfg = config(&cli.common)?;
    let out = &cli.common.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
    match &cli.command {
        Command::Simulate | Command::Sweep => {
            if matches!(cli.command, Command::Simulate) {
                cfg.sweep = None;
            } else if cfg.sweep.is_none() {
                return Err(Error::Config("sweep needs a [sweep] section in the configuration".into()));
            }
            let output = run_experiment(&cfg)?;
            emit_results(&output.rows, &output.timings, out)?;
            for c in summarize(&output.rows) {
                let fmt = |v: Option<f64>| v.map_or("inf".to_string(), |x| format!("{x:.4}"));
                let cd = if c.method == Method::CoarseOnly { "-".into() } else { fmt(c.cd_sqrt.median) };
                println!(
                    "{}={} {:<20} cd_sqrt median {} rmse median {} failures {}/{}",
                    output.axis,
                    c.value,
                    c.method,
                    cd,
                    fmt(c.rmse.median),
                    c.failures,
                    c.trials
                );
            }
            written(out);
            Ok(output.rows.iter().filter(|r| r.error.is_some()).count())
        }
        Command::Crb { trials, snr } => {
            let snr = if snr.is_empty() { CRB_SNR_DB.to_vec() } else { snr.clone() };
            let rows = run_crb(&cfg, &snr, *trials)?;
            for r in &rows {
                println!("snr_db={} empirical/crb {:.3} (se {:.3})", r.snr_db, r.ratio, r.ratio_se);
            }
            let path = out.join("crb.csv");
            write_table(&path, &rows)?;
            written(&path);
            Ok(0)
        }
        Command::Scaling { seeds, snr_db } => {
            let rows = run_scaling(&cfg, *seeds, *snr_db)?;
            let path = out.join("scaling.csv");
            write_table(&path, &rows)?;
            for case in [ogsync::harness::SCALING_DOUBLE_MK, ogsync::harness::SCALING_DOUBLE_NOISE] {
                let ratio = ogsync::metrics::median_error_ratio(&rows, case, ogsync::harness::SCALING_BASE);
                println!("{case}: median error ratio {}", ratio.map_or("n/a".into(), |r| format!("{r:.3}")));
            }
            written(&path);
            Ok(0)
        }
        Command::Trace { trial } => {
            let outcome = run_trace(&cfg, *trial)?;
            let path = out.join("trace.csv");
            std::fs::write(&path, outcome.trace_text()).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            print!("{}", outcome.trace_text());
            written(&path);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("{failures} run(s) failed; see the error column");
            // capped so it never collides with signal exit codes
            ExitCode::from(failures.min(125) as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(126)
        }
    }
}
