use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpmpc_cli::bench::{bench, Primitive};
use dpmpc_cli::config::{ExperimentConfig, PartitionScheme, OUTPUT_ENV};
use dpmpc_cli::data::{checksum, class_counts, ingest_csv, partition, write_csv_file};
use dpmpc_cli::run::run;
use dpmpc_cli::CliError;
use dpmpc_core::dp::audit_round_trip;
use dpmpc_core::numeric::FixedPoint;
use dpmpc_core::train::synthetic_blobs;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "dpmpc", version, about = "Differentially private training over secret-shared data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured training experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// This process's party index (socket mode).
        #[arg(long)]
        party: Option<usize>,
        /// Output directory (overrides the config and the environment).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Noise scale for a DPSGD budget and its RDP round trip.
    Accountant {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        iterations: u64,
        #[arg(long, default_value_t = 3.0)]
        clip: f64,
        #[arg(long)]
        json: bool,
    },
    /// Rounds and bytes of a primitive across batch sizes.
    Bench {
        #[arg(long, value_enum)]
        primitive: Primitive,
        #[arg(long, value_delimiter = ',', default_value = "1,16,128")]
        batches: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        parties: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Split a CSV into disjoint per-party files.
    Partition {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        parts: usize,
        #[arg(long, value_parser = parse_scheme, default_value = "iid")]
        scheme: PartitionScheme,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Validate a CSV and print its shape, class counts and encoding checksum.
    IngestCheck {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        classes: usize,
    },
    /// Write a seeded Gaussian-blob dataset as CSV.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 3.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_scheme(s: &str) -> Result<PartitionScheme, String> {
    match s {
        "iid" => Ok(PartitionScheme::Iid),
        "label_sorted" | "label-sorted" => Ok(PartitionScheme::LabelSorted),
        other => Err(format!("unknown scheme `{other}` (iid | label_sorted)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run { config, party, output } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = output {
                cfg.output.dir = dir;
                std::env::remove_var(OUTPUT_ENV);
            }
            let summary = run(&cfg, party)?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| CliError::Output(e.to_string()))?);
        }
        Command::Accountant { epsilon, delta, iterations, clip, json } => {
            let rt = audit_round_trip(epsilon, delta, iterations, clip)?;
            if json {
                let v = json!({
                    "epsilon": epsilon, "delta": delta, "iterations": iterations, "clip": clip,
                    "sigma": rt.sigma, "lambda": rt.lambda, "gamma_total": rt.gamma_total,
                    "epsilon_round_trip": rt.epsilon_prime,
                });
                println!("{v}");
            } else {
                println!("sigma            {:.4}", rt.sigma);
                println!("lambda           {:.4}", rt.lambda);
                println!("rdp gamma (T)    {:.6}", rt.gamma_total);
                println!("epsilon (audit)  {:.6} <= {epsilon}", rt.epsilon_prime);
            }
        }
        Command::Bench { primitive, batches, parties, seed, json } => {
            let report = bench(primitive, &batches, parties, seed)?;
            if json {
                println!("{}", serde_json::to_string(&report).map_err(|e| CliError::Output(e.to_string()))?);
            } else {
                print!("{}", report.table());
            }
        }
        Command::Partition { input, classes, parts, scheme, seed, out_dir } => {
            let fp = FixedPoint::default();
            let data = ingest_csv(&input, classes, &fp)?;
            let split = partition(&data, scheme, parts, seed)?;
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| CliError::Output(format!("cannot create {}: {e}", out_dir.display())))?;
            for (i, part) in split.iter().enumerate() {
                let path = out_dir.join(format!("part-{i}.csv"));
                write_csv_file(&path, part)?;
                println!("{} {} rows {:?}", path.display(), part.len(), class_counts(part));
            }
        }
        Command::IngestCheck { input, classes } => {
            let fp = FixedPoint::default();
            let data = ingest_csv(&input, classes, &fp)?;
            let v = json!({
                "rows": data.len(), "dim": data.dim, "classes": data.classes,
                "class_counts": class_counts(&data), "checksum": checksum(&data, &fp)?,
            });
            println!("{v}");
        }
        Command::Synth { n, dim, classes, separation, spread, seed, out } => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let data = synthetic_blobs(n, dim, classes, separation, spread, &mut rng)?;
            write_csv_file(&out, &data)?;
        }
    }
    Ok(())
}
