use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use urlost::pipeline::{cmd_affinity, cmd_cluster, cmd_eval, cmd_report, cmd_synth, cmd_train, PipelineConfig};
use urlost::Precision;

#[derive(Parser)]
#[command(name = "urlost", version, about = "Representation learning for signals without known topology")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["f32", "f64"])]
    precision: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the dataset artifacts.
    Synth(StageArgs),
    /// Pairwise mutual information between dimensions.
    Affinity(StageArgs),
    /// Partition the dimensions.
    Cluster(StageArgs),
    /// Train the self-organizing layer and masked autoencoder.
    Train(StageArgs),
    /// Score the learned representation.
    Eval(StageArgs),
    /// Merge the eval results under a directory into CSV tables.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(a: &StageArgs) -> urlost::Result<PipelineConfig> {
    let precision = a.precision.as_deref().map(|p| p.parse::<Precision>().expect("checked by clap"));
    Ok(PipelineConfig::load(&a.config)?.with_overrides(a.seed, precision))
}

fn run(cli: Cli) -> urlost::Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&load(&a).map_err(|e| e.in_stage("synth"))?, &a.out).map(drop),
        Command::Affinity(a) => cmd_affinity(&load(&a).map_err(|e| e.in_stage("affinity"))?, &a.out).map(drop),
        Command::Cluster(a) => cmd_cluster(&load(&a).map_err(|e| e.in_stage("cluster"))?, &a.out).map(drop),
        Command::Train(a) => {
            let cfg = load(&a).map_err(|e| e.in_stage("train"))?;
            let rec = cmd_train(&cfg, &a.out)?;
            if let Some(loss) = rec.details["final_loss"].as_f64() {
                println!("final loss {loss:.6}");
            }
            Ok(())
        }
        Command::Eval(a) => {
            let r = cmd_eval(&load(&a).map_err(|e| e.in_stage("eval"))?, &a.out)?;
            println!("{} accuracy {:.4}", r.task, r.accuracy);
            Ok(())
        }
        Command::Report { out } => {
            let r = cmd_report(&out)?;
            println!("{} runs", r.rows.len());
            print!("{}", r.table_csv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
