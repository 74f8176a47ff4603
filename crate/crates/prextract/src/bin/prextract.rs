//! Command-line front end: pretrain encoders, run single extractions,
//! evaluate and attack saved substitutes, and drive full campaigns from a
//! TOML config. Exit codes: 0 success, 1 bad usage or configuration,
//! 2 runtime failure.

use clap::{Parser, Subcommand};
use prextract::adversarial::{asr_sweep, EPSILON_GRID};
use prextract::data::Sample;
use prextract::error::Error;
use prextract::eval::fidelity_with_truth;
use prextract::extraction::{run_extraction, ExtractionConfig};
use prextract::model::ClassifierModel;
use prextract::nn::arch::classifier;
use prextract::nn::{checkpoint, Network, TrainConfig};
use prextract::oracle::{cost_report, QueryLedger};
use prextract::runner::{
    build_task, emit_plot_data, load_config, parse_asr_csv, parse_summary_csv, run_campaign,
    train_victim, write_atomic, write_campaign, ExperimentConfig,
};
use prextract::ssl::{pretrain, EncoderArtifact, SslConfig, SslMethod};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "prextract", about = "Model extraction experiments at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain an encoder on the proxy pool and save the artifact.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Artifact path; a JSON sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one extraction and save the substitute plus its query log.
    Extract {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        budget: u64,
        #[arg(long)]
        itera: Option<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved substitute against the victim of the same task seed.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Substitute checkpoint written by `extract`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sweep gradient-sign transfer attacks from a saved substitute.
    AdvSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for the sweep CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full campaign grid from the config.
    Campaign {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate an existing campaign directory into plot-ready series.
    PlotData {
        /// Directory containing `summary.csv` (and optionally `asr.csv`).
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // 1 = validation error, 2 = runtime failure
            match e {
                Error::InvalidConfig(_) | Error::InvalidArgument(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn parse_method(s: &str) -> Result<SslMethod, Error> {
    s.parse()
}

fn seeded_pretrain(
    cfg: &ExperimentConfig,
    method: SslMethod,
    proxy: &[Sample],
    seed: u64,
) -> Result<EncoderArtifact, Error> {
    let ssl = SslConfig {
        seed: seed.wrapping_mul(1000).wrapping_add(6),
        ..cfg.pretrain.clone()
    };
    pretrain(method, proxy, &cfg.task.image_shape, &ssl)
}

fn load_substitute(
    cfg: &ExperimentConfig,
    path: &std::path::Path,
) -> Result<ClassifierModel, Error> {
    let (arch_name, params) = checkpoint::load(path)?;
    let arch = classifier(
        &arch_name,
        &cfg.task.image_shape,
        cfg.pretrain.latent_dim,
        cfg.task.num_classes,
    )?;
    let mut net = Network::init(arch, 0)?;
    net.params.overwrite_from(&params)?;
    Ok(ClassifierModel { net, trained: true })
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Pretrain { config, method, seed, out } => {
            let cfg = load_config(&config)?;
            let method = parse_method(&method)?;
            let split = build_task(&cfg, seed)?;
            let artifact = seeded_pretrain(&cfg, method, &split.proxy, seed)?;
            artifact.save(&out)?;
            println!(
                "pretrained {} encoder on {} proxy samples -> {}",
                method.as_str(),
                split.proxy.len(),
                out.display()
            );
            if let Some(loss) = artifact.provenance.final_loss {
                println!("final objective: {loss:.6}");
            }
            Ok(())
        }
        Command::Extract { config, method, budget, itera, seed, out } => {
            let cfg = load_config(&config)?;
            let method = parse_method(&method)?;
            let split = build_task(&cfg, seed)?;
            let victim = train_victim(&cfg, &split, seed)?;
            let artifact = seeded_pretrain(&cfg, method, &split.proxy, seed)?;
            let e = &cfg.extraction;
            let extraction = ExtractionConfig {
                budget,
                itera: itera.unwrap_or(e.itera),
                train: TrainConfig {
                    learning_rate: e.learning_rate,
                    batch_size: e.batch_size,
                    epochs: e.epochs,
                    seed: seed.wrapping_mul(1000).wrapping_add(7),
                },
                head_reinit: e.head_reinit,
                encoder_finetune: e.encoder_finetune,
                selector: e.selector,
                seed: seed.wrapping_mul(1000).wrapping_add(8),
            };
            let mut ledger = QueryLedger::new(budget, cfg.task.unit_price);
            let (substitute, record) =
                run_extraction(&artifact, &victim, &split.proxy, None, &extraction, &mut ledger)?;
            std::fs::create_dir_all(&out)?;
            checkpoint::save(
                &out.join("substitute.pxcp"),
                &substitute.model.net.arch.name,
                &substitute.model.net.params,
            )?;
            write_atomic(&out.join("queries.csv"), &record.query_log_csv())?;
            let test: Vec<Sample> = split.test.iter().map(|l| l.sample.clone()).collect();
            let truth: Vec<usize> = split.test.iter().map(|l| l.label).collect();
            let report =
                fidelity_with_truth(&substitute.model, &victim, &test, Some(&truth))?;
            let (spent, currency) = cost_report(&ledger);
            println!(
                "fidelity {:.4}, accuracy {:.4}, spent {spent} queries ({currency:.4} currency)",
                report.fidelity,
                report.accuracy.unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Evaluate { config, model, seed } => {
            let cfg = load_config(&config)?;
            let split = build_task(&cfg, seed)?;
            let victim = train_victim(&cfg, &split, seed)?;
            let substitute = load_substitute(&cfg, &model)?;
            let test: Vec<Sample> = split.test.iter().map(|l| l.sample.clone()).collect();
            let truth: Vec<usize> = split.test.iter().map(|l| l.label).collect();
            let report = fidelity_with_truth(&substitute, &victim, &test, Some(&truth))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::AdvSweep { config, model, seed, out } => {
            let cfg = load_config(&config)?;
            let split = build_task(&cfg, seed)?;
            let victim = train_victim(&cfg, &split, seed)?;
            let substitute = load_substitute(&cfg, &model)?;
            let grid: &[f64] = if cfg.campaign.epsilons.is_empty() {
                EPSILON_GRID
            } else {
                &cfg.campaign.epsilons
            };
            let (reports, csv) = asr_sweep(&substitute, &victim, &split.test, grid)?;
            write_atomic(&out.join("asr_sweep.csv"), &csv)?;
            for r in &reports {
                println!(
                    "epsilon {:.2}: asr {:.4} ({}/{})",
                    r.epsilon, r.asr, r.n_flipped, r.n_clean_correct
                );
            }
            Ok(())
        }
        Command::Campaign { config, out } => {
            let cfg = load_config(&config)?;
            let output = run_campaign(&cfg)?;
            write_campaign(&output, &out)?;
            emit_plot_data(&output.rows, &output.asr_rows, &out)?;
            println!(
                "{} cells completed, {} failed -> {}",
                output.rows.len(),
                output.failures.len(),
                out.display()
            );
            if !output.failures.is_empty() {
                return Err(Error::Runtime(format!(
                    "{} campaign cells failed, see failures.csv",
                    output.failures.len()
                )));
            }
            Ok(())
        }
        Command::PlotData { out } => {
            let summary = std::fs::read_to_string(out.join("summary.csv"))?;
            let rows = parse_summary_csv(&summary)?;
            let asr_path = out.join("asr.csv");
            let asr_rows = if asr_path.exists() {
                parse_asr_csv(&std::fs::read_to_string(asr_path)?)?
            } else {
                Vec::new()
            };
            emit_plot_data(&rows, &asr_rows, &out)?;
            println!("aggregated {} summary rows -> {}", rows.len(), out.display());
            Ok(())
        }
    }
}
