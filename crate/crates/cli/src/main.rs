use clap::{Parser, Subcommand};
use hycon::gradsuite::CheckedLoss;
use hycon_cli::commands::{
    cmd_compare_losses, cmd_eval, cmd_export_embeddings, cmd_generate, cmd_gradcheck, cmd_sweep,
    cmd_train,
};
use hycon_cli::{CliError, ExperimentConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Hybrid contrastive training for tri-modal sentiment regression.
///
/// Sentiment scores lie in [-3, 3]. A score of exactly zero counts as
/// negative, both when pairing samples for the contrastive losses and for
/// Acc2/F1.
///
/// Exit codes: 0 success, 1 invalid config or input, 2 numerical failure
/// (non-finite loss or failed gradient check).
#[derive(Parser, Debug)]
#[command(name = "hycon", version)]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single replicate seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic dataset as a feature table.
    Generate,
    /// Train every seed; write models, test metrics and loss trajectories.
    Train,
    /// Evaluate a saved model on the test split of its seed.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Finite-difference check of every loss on seeded random batches.
    Gradcheck {
        /// Maximum relative error, overriding `gradcheck.tol`.
        #[arg(long)]
        tol: Option<f64>,
        /// Corrupt the analytic gradient of this loss (negative control).
        #[arg(long, hide = true)]
        corrupt: Option<CheckedLoss>,
    },
    /// Write per-modality and fused embeddings plus a 2-D PCA projection.
    ExportEmbeddings {
        #[arg(long)]
        model: PathBuf,
    },
    /// Train over the configured alpha and lambda grids.
    Sweep,
    /// Train the triplet, hard-triplet, n-pair, classical and hycon regimes.
    CompareLosses,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = cli.out {
        cfg.output_dir = o;
    }
    match cli.command {
        Command::Generate => {
            let path = cmd_generate(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Train => print_rows(&cmd_train(&cfg)?),
        Command::Eval { model } => print_rows(&[cmd_eval(&cfg, &model)?]),
        Command::Gradcheck { tol, corrupt } => {
            if let Some(t) = tol {
                cfg.gradcheck.tol = t;
            }
            let summary = cmd_gradcheck(&cfg, corrupt)?;
            for (loss, err) in &summary.losses {
                println!("{loss}: max rel err {err:.3e}");
            }
            println!("{}", summary.headline());
        }
        Command::ExportEmbeddings { model } => {
            for p in cmd_export_embeddings(&cfg, &model)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Sweep => {
            for r in cmd_sweep(&cfg)? {
                println!(
                    "alpha {} lambdas [{}, {}, {}]: acc2 {:.4} mae {:.4} silhouette {:.4}",
                    r.alpha, r.lambda1, r.lambda2, r.lambda3, r.acc2, r.mae, r.silhouette
                );
            }
        }
        Command::CompareLosses => print_rows(&cmd_compare_losses(&cfg)?),
    }
    Ok(())
}

fn print_rows(rows: &[hycon_cli::output::MetricsRow]) {
    println!("regime\tseed\tacc7\tacc2\tf1\tmae\tcorr\tsilhouette");
    for r in rows {
        println!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.regime, r.seed, r.acc7, r.acc2, r.f1, r.mae, r.corr, r.silhouette
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap's own usage errors would exit with 2, which is reserved
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
