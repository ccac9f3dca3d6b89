//! The staged pipeline driven from a config file, as the CLI runs it.
//!
//!     cargo run --release --example pipeline -- configs/toy.toml /tmp/toy

use std::path::PathBuf;

use urlost::pipeline::*;

fn main() -> urlost::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let config = args.next().map(PathBuf::from).unwrap_or_else(|| root.join("configs/toy.toml"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("urlost-toy"));
    let cfg = PipelineConfig::load(&config)?;

    for rec in [cmd_synth(&cfg, &out)?, cmd_affinity(&cfg, &out)?, cmd_cluster(&cfg, &out)?, cmd_train(&cfg, &out)?] {
        println!("{:>8}: {} outputs, details {}", rec.stage, rec.outputs.len(), rec.details);
    }
    let report = cmd_eval(&cfg, &out)?;
    println!("{:>8}: {} accuracy {:.3}", "eval", report.task, report.accuracy);

    // Same config and seed again: every artifact comes out identical, and
    // each stage checks the hashes of what it reads.
    let before = std::fs::read(out.join(CHECKPOINT)).map_err(|e| urlost::Error::io(out.join(CHECKPOINT), e))?;
    cmd_train(&cfg, &out)?;
    let after = std::fs::read(out.join(CHECKPOINT)).map_err(|e| urlost::Error::io(out.join(CHECKPOINT), e))?;
    println!("rerun checkpoint identical: {}", before == after);
    println!("artifacts in {}", out.display());
    Ok(())
}
