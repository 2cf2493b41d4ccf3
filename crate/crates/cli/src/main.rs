//! `estproc`: run estimation-procedure experiments from a config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use estproc::config::ExperimentConfig;
use estproc::corpus::{load_corpus, partition, write_corpus, DEFAULT_BLOCK_SIZE};
use estproc::pipeline::{Pipeline, Stage, StageError};
use estproc::synthetic::{generate, SyntheticKind, SyntheticParams};

#[derive(Parser)]
#[command(name = "estproc", version, about = "Compare cross-validation and sequential validation on time-ordered data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config file.
    #[arg(short, long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set classifier.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set experiment.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for `--set experiment.output_dir=DIR`.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Shorthand for `--set experiment.threads=N` (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, StageError> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("experiment.seed={seed}"));
        }
        if let Some(threads) = self.threads {
            overrides.push(format!("experiment.threads={threads}"));
        }
        let mut config = ExperimentConfig::load(&self.config, &overrides)?;
        if let Some(dir) = &self.output_dir {
            config.output_dir = dir.clone();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage: partition, gold, estimate, analyze, report.
    Run(ConfigArgs),
    /// Split each corpus into in-set/out-set pairs (or list pairs of one file).
    Partition {
        #[command(flatten)]
        config: Option<ConfigArgs>,
        /// List the pairs of a single TSV corpus instead of running the stage.
        #[arg(long, conflicts_with = "config")]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE, requires = "input")]
        block_size: usize,
    },
    /// Train on each in-set and score its out-set.
    Gold(ConfigArgs),
    /// Run the estimation procedures on every in-set.
    Estimate(ConfigArgs),
    /// Median errors, relative errors, Friedman-Nemenyi and Wilcoxon tests.
    Analyze(ConfigArgs),
    /// Render the median-error tables as markdown.
    Report(ConfigArgs),
    /// Write a synthetic corpus as TSV.
    Synth {
        #[arg(long, default_value = "drift")]
        kind: SyntheticKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn run_stages(args: &ConfigArgs, stages: &[Stage]) -> Result<(), StageError> {
    let pipeline = Pipeline::new(args.load()?)?;
    let result = pipeline.run_stages(stages);
    for w in pipeline.take_warnings() {
        eprintln!("warning: {w}");
    }
    result?;
    eprintln!("outputs written to {}", pipeline.output_dir().display());
    Ok(())
}

fn list_partitions(input: &PathBuf, block_size: usize) -> Result<(), StageError> {
    if block_size == 0 {
        return Err(StageError::Data("block size must be positive".into()));
    }
    let corpus = load_corpus(input)?;
    println!("inset_index,in_start,in_end,out_start,out_end");
    for p in partition(&corpus, block_size) {
        println!(
            "{},{},{},{},{}",
            p.inset_index, p.in_range.start, p.in_range.end, p.out_range.start, p.out_range.end
        );
    }
    Ok(())
}

fn write_synthetic(kind: SyntheticKind, n: usize, seed: u64, output: Option<&PathBuf>) -> Result<(), StageError> {
    let corpus = generate("synthetic", &SyntheticParams::of_kind(kind, n), seed);
    let io = |path: PathBuf| move |source| StageError::Io { path, source };
    match output {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(io(path.clone()))?;
            write_corpus(&corpus, std::io::BufWriter::new(file)).map_err(io(path.clone()))
        }
        None => write_corpus(&corpus, std::io::stdout().lock()).map_err(io("<stdout>".into())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run_stages(args, &Stage::ALL),
        Command::Partition {
            input: Some(input),
            block_size,
            ..
        } => list_partitions(input, *block_size),
        Command::Partition { config: Some(args), .. } => run_stages(args, &[Stage::Partition]),
        Command::Partition { .. } => {
            eprintln!("error: partition needs --config or --input");
            return ExitCode::from(2);
        }
        Command::Gold(args) => run_stages(args, &[Stage::Gold]),
        Command::Estimate(args) => run_stages(args, &[Stage::Estimate]),
        Command::Analyze(args) => run_stages(args, &[Stage::Analyze]),
        Command::Report(args) => run_stages(args, &[Stage::Report]),
        Command::Synth { kind, n, seed, output } => write_synthetic(*kind, *n, *seed, output.as_ref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
