use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use replay::commands;

#[derive(Parser)]
#[command(name = "replay", version, about = "Saliency-driven replay audio classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic tone-gap dataset.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes the best checkpoint, its config sidecar and a
    /// metrics log next to it.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Dump per-pass spectrograms, saliency, segments and logits for a clip.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        dump: PathBuf,
        /// Also write each spectrogram as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Finite-difference gradient check of every differentiable component.
    Gradcheck {
        /// More random shapes and every coordinate of the end-to-end model.
        #[arg(long)]
        full: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::GenData { spec, out } => {
            commands::gen_data(&spec, &out).context("gen-data failed")?;
        }
        Command::Train { config, data, out } => {
            commands::train(&config, &data, &out).context("train failed")?;
        }
        Command::Eval { ckpt, data, report } => {
            let m = commands::eval(&ckpt, &data, &report).context("eval failed")?;
            println!(
                "top1 {:.2}  top5 {:.2}  mAP {:.4}  AUC {:.4}  d' {:.3}  per-pass top1 {:?}",
                m.top1, m.top5, m.map, m.auc, m.d_prime, m.per_pass_top1
            );
        }
        Command::Inspect { ckpt, wav, dump, csv } => {
            let trace = commands::inspect(&ckpt, &wav, &dump, csv).context("inspect failed")?;
            println!("probabilities {:?}", trace.probabilities);
        }
        Command::Gradcheck { full } => {
            let results = commands::gradcheck(full).context("gradcheck failed")?;
            let mut ok = true;
            for r in &results {
                let verdict = if r.passed() { "ok" } else { "FAIL" };
                println!(
                    "{:<20} max rel err {:.3e} (tol {:.0e}, {} coords) {verdict}",
                    r.name, r.max_rel_err, r.tolerance, r.checked
                );
                ok &= r.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
