use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use imb_dpgm::commands::{cmd_baseline, cmd_evaluate, cmd_prepare, cmd_report, cmd_train};
use imb_dpgm::config::{Overrides, ReportMethod, Representation, RunConfig, SplitName};
use imb_dpgm::Error;

#[derive(Parser)]
#[command(name = "imb-dpgm", version, about = "Imbalanced classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split, normalize and write train/val/test CSVs.
    Prepare(Flags),
    /// Train the variational classifier.
    Train(Flags),
    /// Metrics and threshold sweep on a split.
    Evaluate(Flags),
    /// Logistic baselines on resampled train sets.
    Baseline(Flags),
    /// 2-D embedding CSV of a split.
    Report(Flags),
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pca,
    Tsne,
}

#[derive(Clone, Copy, ValueEnum)]
enum RepresentationArg {
    Input,
    Latent,
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long = "label-col")]
    label_col: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long, value_enum)]
    representation: Option<RepresentationArg>,
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Flags {
    fn resolve(&self) -> imb_dpgm::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            data: self.data.clone(),
            label_col: self.label_col.clone(),
            out_dir: self.out.clone(),
            split: self.split.map(|s| match s {
                SplitArg::Train => SplitName::Train,
                SplitArg::Val => SplitName::Val,
                SplitArg::Test => SplitName::Test,
            }),
            method: self.method.map(|m| match m {
                MethodArg::Pca => ReportMethod::Pca,
                MethodArg::Tsne => ReportMethod::Tsne,
            }),
            representation: self.representation.map(|r| match r {
                RepresentationArg::Input => Representation::Input,
                RepresentationArg::Latent => Representation::Latent,
            }),
            subsample: self.subsample,
            checkpoint: self.checkpoint.clone(),
        });
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<String, Error> {
    let (flags, cmd): (&Flags, fn(&RunConfig) -> imb_dpgm::Result<_>) = match &cli.command {
        Command::Prepare(f) => (f, cmd_prepare),
        Command::Train(f) => (f, cmd_train),
        Command::Evaluate(f) => (f, cmd_evaluate),
        Command::Baseline(f) => (f, cmd_baseline),
        Command::Report(f) => (f, cmd_report),
    };
    let out = cmd(&flags.resolve()?)?;
    Ok(out.summary)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
