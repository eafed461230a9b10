//! `cnc`: data generation, both training stages, baselines, evaluation,
//! sweeps and reports.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.

mod artifacts;
mod commands;
mod config;
mod report;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cnc", version = artifacts::VERSION, about = "Correct-N-Contrast training and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand accepts.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for data generation, initialization and sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML file merged over the built-in defaults (see `cnc show-config`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum InferArg {
    Argmax,
    Cluster,
    Oracle,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Jtt,
    Gdro,
    CncStar,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Erm,
    Jtt,
    Gdro,
    Cnc,
    CncStar,
}

impl MethodArg {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Erm => "erm",
            Self::Jtt => "jtt",
            Self::Gdro => "gdro",
            Self::Cnc => "cnc",
            Self::CncStar => "cnc-star",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a blob or colored-MNIST dataset and write its cache file.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Synthetic blobs (the default source).
        #[arg(long, conflicts_with = "cmnist")]
        blobs: bool,
        /// Colored MNIST from the idx files in --mnist-dir.
        #[arg(long)]
        cmnist: bool,
        #[arg(long)]
        mnist_dir: Option<PathBuf>,
        #[arg(long)]
        p_corr: Option<f64>,
    },
    /// Train a cross-entropy model (the stage-1 recipe with --stage1).
    TrainErm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stage1: bool,
    },
    /// Write pseudo group labels for the train split.
    InferGroups {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 model; not needed for `oracle`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "argmax")]
        method: InferArg,
        /// Replace each label by a uniform class with this probability.
        #[arg(long)]
        noise_p: Option<f64>,
    },
    /// Stage 2: contrastive training on inferred groups.
    TrainCnc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        inference: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// JTT, group DRO, or CnC on true group labels.
    TrainBaseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: BaselineArg,
        #[arg(long)]
        data: PathBuf,
        /// Pseudo labels; required by JTT.
        #[arg(long)]
        inference: Option<PathBuf>,
    },
    /// Evaluate a saved model on one split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Run name written into the metrics rows.
        #[arg(long, default_value = "model")]
        run: String,
        /// Check the worst-group loss inequality.
        #[arg(long)]
        bound: bool,
        /// Estimate I(Y;Z) and I(A;Z).
        #[arg(long)]
        mi: bool,
    },
    /// Data, stage 1, inference and one method end to end in one process.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "argmax")]
        inference: InferArg,
        #[arg(long, default_value_t = 0.0)]
        noise_p: f64,
        #[arg(long)]
        p_corr: Option<f64>,
        /// Sampler mode override for CnC.
        #[arg(long)]
        sampler: Option<String>,
        /// λ override for CnC.
        #[arg(long)]
        lambda: Option<f64>,
        /// Run name; defaults to the method.
        #[arg(long)]
        run: Option<String>,
        #[arg(long)]
        bound: bool,
        #[arg(long)]
        mi: bool,
    },
    /// Run every cell of a plan file in a pool of worker processes.
    Sweep {
        #[command(flatten)]
        common: Common,
        plan: PathBuf,
        /// Concurrent worker processes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Skip runs whose summary already exists.
        #[arg(long)]
        skip_existing: bool,
    },
    /// Aggregate run summaries under a directory into tables.
    Report {
        #[command(flatten)]
        common: Common,
        runs: PathBuf,
    },
    /// Print the resolved configuration as TOML.
    ShowConfig {
        #[command(flatten)]
        common: Common,
    },
}

/// A problem with how the tool was invoked rather than with the run.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    use commands as c;
    match cmd {
        Command::GenData {
            common,
            blobs: _,
            cmnist,
            mnist_dir,
            p_corr,
        } => c::gen_data(&common, cmnist, mnist_dir, p_corr),
        Command::TrainErm { common, data, stage1 } => c::train_erm(&common, &data, stage1),
        Command::InferGroups {
            common,
            data,
            model,
            method,
            noise_p,
        } => c::infer_groups(&common, &data, model.as_deref(), method, noise_p),
        Command::TrainCnc {
            common,
            data,
            inference,
            resume,
        } => c::train_cnc(&common, &data, &inference, resume.as_deref()),
        Command::TrainBaseline {
            common,
            method,
            data,
            inference,
        } => c::train_baseline(&common, method, &data, inference.as_deref()),
        Command::Evaluate {
            common,
            data,
            model,
            split,
            run,
            bound,
            mi,
        } => c::evaluate(&common, &data, &model, &split, &run, bound, mi),
        Command::Pipeline {
            common,
            method,
            inference,
            noise_p,
            p_corr,
            sampler,
            lambda,
            run,
            bound,
            mi,
        } => c::pipeline(
            &common,
            &c::PipelineArgs {
                method,
                inference,
                noise_p,
                p_corr,
                sampler,
                lambda,
                run,
                bound,
                mi,
            },
        ),
        Command::Sweep {
            common,
            plan,
            jobs,
            skip_existing,
        } => sweep::run(&common, &plan, jobs, skip_existing),
        Command::Report { common, runs } => report::run(&common, &runs),
        Command::ShowConfig { common } => c::show_config(&common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
