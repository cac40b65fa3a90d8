use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use s2fgl::config::{ConfigBuilder, ExperimentConfig, KEYS};
use s2fgl::experiments::{
    describe, emit_sis_curve, emit_spectral_heatmap, run_ablation, run_experiment, run_sensitivity, OutputDir,
};
use s2fgl::Error;

/// Spatial-spectral federated graph learning simulator.
#[derive(Parser)]
#[command(name = "s2fgl", version, after_help = keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write metrics.csv, rounds.jsonl and series.csv.
    Run(ConfigArgs),
    /// Partitioned structure inertia score for each client count.
    SisCurve(ConfigArgs),
    /// KL divergence between client eigenvalue distributions.
    SpectralHeatmap(ConfigArgs),
    /// Neither, NLIR only, FGMA only and both, on shared seeds.
    Ablation(ConfigArgs),
    /// Accuracy change against FedAvg across loss-weight scales.
    Sensitivity(ConfigArgs),
    /// Print the resolved configuration, or the first problem found.
    ValidateConfig(ConfigArgs),
    /// Print federation statistics for the first seed.
    Describe(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn keys_help() -> String {
    let mut s = String::from("Config keys (default):\n");
    for (k, v, help) in KEYS {
        s.push_str(&format!("  {k:<18} {help} [{v}]\n"));
    }
    s.push_str("\nExit codes: 0 ok, 1 runtime failure, 2 configuration error.");
    s
}

fn resolve(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let mut b = ConfigBuilder::new();
    if let Some(path) = &args.config {
        b = b.file(path)?;
    }
    b.env().cli_overrides(&args.overrides)?.build()
}

type Action = fn(&ExperimentConfig) -> Result<(), Error>;

fn execute(command: Command) -> Result<(), Error> {
    let (args, run): (&ConfigArgs, Action) = match &command {
        Command::Run(a) => (a, |cfg| {
            let s = run_experiment(cfg)?;
            println!("{} {}: {:.4} ± {:.4}", cfg.name, cfg.method, s.mean, s.std);
            Ok(())
        }),
        Command::SisCurve(a) => (a, |cfg| {
            for r in emit_sis_curve(cfg, &OutputDir::create(&cfg.output_dir)?)? {
                println!("seed {} clients {:>3}: sis {:.4} per node {:.4}", r.seed, r.clients, r.sis_sum, r.sis_per_node);
            }
            Ok(())
        }),
        Command::SpectralHeatmap(a) => (a, |cfg| {
            let m = emit_spectral_heatmap(cfg, &OutputDir::create(&cfg.output_dir)?)?;
            println!("{} clients, max divergence {:.4}", m.rows(), m.max_abs());
            Ok(())
        }),
        Command::Ablation(a) => (a, |cfg| {
            for r in run_ablation(cfg, &OutputDir::create(&cfg.output_dir)?)? {
                println!("{:<10} {:.4} ± {:.4}", r.variant, r.summary.mean, r.summary.std);
            }
            Ok(())
        }),
        Command::Sensitivity(a) => (a, |cfg| {
            let (base, rows) = run_sensitivity(cfg, &OutputDir::create(&cfg.output_dir)?)?;
            println!("fedavg     {:.4} ± {:.4}", base.mean, base.std);
            for r in rows {
                println!("{} x{:<6} {:.4} ({:+.4})", r.factor, r.scale, r.summary.mean, r.delta);
            }
            Ok(())
        }),
        Command::ValidateConfig(a) => (a, |cfg| {
            print!("{}", cfg.snapshot());
            Ok(())
        }),
        Command::Describe(a) => (a, |cfg| {
            println!("{}", describe(cfg, cfg.seeds[0])?);
            Ok(())
        }),
    };
    run(&resolve(args)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
