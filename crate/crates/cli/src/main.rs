//! Command-line front end: train, evaluate, inspect, check and benchmark
//! fast-forwarding networks.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ffnet::config::FlatConfig;

use settings::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "ffnet",
    version,
    about = "Input fast-forwarding CNNs on the CPU"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand accepts.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Flat `key = value` file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single-threaded execution.
    #[arg(long)]
    deterministic: bool,
    /// Drop the fast-forward branches.
    #[arg(long)]
    ablation: bool,
    #[arg(long)]
    stages: Option<usize>,
    /// Input shape as CxHxW.
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    /// Filters per branch.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    fc1: Option<usize>,
    #[arg(long)]
    fc2: Option<usize>,
}

impl Common {
    fn flags(&self) -> FlatConfig {
        let mut c = FlatConfig::default();
        set(&mut c, "seed", self.seed);
        set(&mut c, "stages", self.stages);
        set(&mut c, "input", self.input.as_ref());
        set(&mut c, "classes", self.classes);
        set(&mut c, "branch_width", self.width);
        set(&mut c, "fc1", self.fc1);
        set(&mut c, "fc2", self.fc2);
        if self.ablation {
            c.set("ablation", true);
        }
        c
    }
}

fn set(c: &mut FlatConfig, key: &str, v: Option<impl ToString>) {
    if let Some(v) = v {
        c.set(key, v.to_string());
    }
}

/// Where samples come from.
#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// synthetic, noise, cifar or records.
    #[arg(long)]
    dataset: Option<String>,
    /// Directory holding the CIFAR-10 binary batches.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// A file of 1+3072-byte records.
    #[arg(long)]
    records: Option<PathBuf>,
    /// Size of a generated dataset.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Hold out this many trailing training samples for validation.
    #[arg(long)]
    holdout: Option<usize>,
}

impl DataArgs {
    fn flags(&self, c: &mut FlatConfig) {
        set(c, "dataset", self.dataset.as_ref());
        set(c, "data_dir", self.data_dir.as_ref().map(|p| p.display()));
        set(c, "records", self.records.as_ref().map(|p| p.display()));
        set(c, "samples", self.samples);
        set(c, "data_seed", self.data_seed);
        set(c, "holdout", self.holdout);
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and write checkpoint.ffnt, metrics.csv and config.txt.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        #[arg(long)]
        eval_interval: Option<u64>,
        /// Train on the unaugmented images.
        #[arg(long)]
        no_augment: bool,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Report loss and accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Average over ten crops per image.
        #[arg(long)]
        ten_crop: bool,
    },
    /// Print shapes, parameter counts and gradient-path depths.
    Inspect {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient check of a small network.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Compare early/late gradient norms of the network and its ablation.
    Flowprobe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Print the per-stage norms of one network instead.
        #[arg(long)]
        profile: bool,
    },
    /// Single-image forward latency.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        passes: Option<usize>,
    },
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Train {
            common,
            data,
            iters,
            batch_size,
            lr,
            momentum,
            weight_decay,
            eval_interval,
            no_augment,
            resume,
        } => {
            let mut flags = common.flags();
            data.flags(&mut flags);
            set(&mut flags, "max_iterations", iters);
            set(&mut flags, "batch_size", batch_size);
            set(&mut flags, "lr", lr);
            set(&mut flags, "momentum", momentum);
            set(&mut flags, "weight_decay", weight_decay);
            set(&mut flags, "eval_interval", eval_interval);
            if no_augment {
                flags.set("augment", false);
            }
            commands::train(&common, flags, resume.as_deref())
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            ten_crop,
        } => {
            let mut flags = common.flags();
            data.flags(&mut flags);
            if ten_crop {
                flags.set("ten_crop", true);
            }
            commands::eval(&common, flags, &checkpoint)
        }
        Command::Inspect { common } => commands::inspect(&common, common.flags()),
        Command::Gradcheck { common, tol } => {
            let mut flags = common.flags();
            set(&mut flags, "tol", tol);
            commands::gradcheck(&common, flags)
        }
        Command::Flowprobe {
            common,
            seeds,
            batch_size,
            profile,
        } => {
            let mut flags = common.flags();
            set(&mut flags, "seeds", seeds);
            set(&mut flags, "batch_size", batch_size);
            commands::flowprobe(&common, flags, profile)
        }
        Command::Bench {
            common,
            warmup,
            passes,
        } => {
            let mut flags = common.flags();
            set(&mut flags, "warmup", warmup);
            set(&mut flags, "passes", passes);
            commands::bench(&common, flags)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
