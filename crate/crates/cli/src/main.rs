use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use irs_urllc::fbl::snr_threshold;
use irs_urllc::harness::{run_experiment, write_outputs, ExperimentConfig, SweepSection};

#[derive(Parser)]
#[command(name = "irs-urllc", version, about = "Monte Carlo PRC experiments for the two-stage IRS/D2D link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a config with its sweep replaced by one parameter and value list.
    Sweep {
        config: PathBuf,
        /// packet_bits, delay_ms, irs_elements, antennas, actuators,
        /// uncertainty_ratio or actuator_offset_m.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the SNR threshold table for the given blocklengths and packet sizes.
    Threshold {
        #[arg(long, value_delimiter = ',', default_values_t = [125u64, 250, 500])]
        uses: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = [300u64, 500, 700, 900])]
        bits: Vec<u64>,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn load(path: &Path, common: &Common) -> irs_urllc::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| irs_urllc::Error::Config(vec![e.to_string()]))?;
    if let Some(seed) = common.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.experiment.trials = trials;
    }
    Ok(cfg)
}

fn execute(cfg: ExperimentConfig, out_dir: &Path) -> irs_urllc::Result<()> {
    cfg.validate()?;
    let result = run_experiment(&cfg)?;
    for s in &result.series {
        for p in &s.points {
            println!(
                "{:<14} {}={:<8} prc={:.3} mean_decoded={:.2}",
                s.scheme,
                s.sweep_name,
                p.value,
                p.prc.prc,
                p.prc.mean_decoded()
            );
        }
    }
    for path in write_outputs(&cfg, &result, out_dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn threshold_table(uses: &[u64], bits: &[u64], eps: f64) -> irs_urllc::Result<()> {
    print!("{:>8}", "L \\ D");
    for d in bits {
        print!("{d:>14}");
    }
    println!();
    for &l in uses {
        print!("{l:>8}");
        for &d in bits {
            let g = snr_threshold(eps, l, d)?;
            print!("{:>14}", format!("{:.4e}", g));
        }
        println!();
    }
    println!("(linear SNR, eps = {eps:e})");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, common } => load(&config, &common).and_then(|cfg| execute(cfg, &common.out_dir)),
        Command::Sweep {
            config,
            param,
            values,
            common,
        } => load(&config, &common).and_then(|mut cfg| {
            cfg.sweep = Some(SweepSection { parameter: param, values });
            execute(cfg, &common.out_dir)
        }),
        Command::Threshold { uses, bits, eps } => threshold_table(&uses, &bits, eps),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
