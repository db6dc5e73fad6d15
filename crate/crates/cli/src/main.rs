use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use man_core::config::parse_synth_config;
use man_core::data::SplitKind;
use man_core::metrics::MetricsReport;
use man_core::pipeline::{self, PrepareArgs};

/// Mixed attention network for cross-domain sequential recommendation.
#[derive(Parser, Debug)]
#[command(name = "man", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter, sequence and split two raw interaction logs.
    Prepare {
        #[arg(long)]
        input_a: PathBuf,
        #[arg(long)]
        input_b: PathBuf,
        #[arg(long, default_value_t = 10)]
        k_core: usize,
        #[arg(long, default_value_t = 20)]
        max_len: usize,
        #[arg(long)]
        val_ts: i64,
        #[arg(long)]
        test_ts: i64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dual-domain dataset with planted groups.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the validation or test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitKind,
        /// Dataset directory; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the w/o ISA, w/o SFA, w/o GPA and full variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per group count.
    SweepGroups {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
        values: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export, cluster and project pooled group representations.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Cluster count; defaults to the model's group count.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_report(report: &MetricsReport) {
    print!("{}", report.to_csv());
}

fn print_runs(runs: &[(String, MetricsReport)]) {
    for (name, report) in runs {
        for (d, metric, v) in report.rows() {
            println!("{name},{},{metric},{v:.4}", d.tag());
        }
    }
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare {
            input_a,
            input_b,
            k_core,
            max_len,
            val_ts,
            test_ts,
            out,
        } => {
            let split = pipeline::cmd_prepare(&PrepareArgs {
                input_a,
                input_b,
                k_core,
                max_len,
                val_ts,
                test_ts,
                out,
            })?;
            for (tag, parts) in [("a", &split.a), ("b", &split.b)] {
                println!(
                    "{tag}: {} train, {} validation, {} test",
                    parts.train.len(),
                    parts.validation.len(),
                    parts.test.len()
                );
            }
        }
        Command::Synth { config, out } => {
            let settings = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    parse_synth_config(&text).with_context(|| format!("in {}", p.display()))?
                }
                None => Default::default(),
            };
            let split = pipeline::cmd_synth(&settings, &out)?;
            println!(
                "a: {} train examples, b: {} train examples",
                split.a.train.len(),
                split.b.train.len()
            );
        }
        Command::Train { config, out } => {
            ensure_dir(&out)?;
            print_report(&pipeline::cmd_train(&config, &out)?);
        }
        Command::Eval {
            checkpoint,
            split,
            data,
            out,
        } => {
            if split == SplitKind::Train {
                bail!("--split must be validation or test");
            }
            ensure_dir(&out)?;
            print_report(&pipeline::cmd_eval(&checkpoint, split, data.as_deref(), &out)?);
        }
        Command::Ablate { config, out } => {
            ensure_dir(&out)?;
            print_runs(&pipeline::cmd_ablate(&config, &out)?);
        }
        Command::SweepGroups { config, values, out } => {
            ensure_dir(&out)?;
            print_runs(&pipeline::cmd_sweep_groups(&config, &values, &out)?);
        }
        Command::Analyze { checkpoint, data, k, out } => {
            ensure_dir(&out)?;
            for s in pipeline::cmd_analyze(&checkpoint, data.as_deref(), k, &out)? {
                let a = s.alignment.map_or("-".to_string(), |v| format!("{v:.3}"));
                println!("{}: {} users, k={}, inertia {:.4}, alignment {a}", s.domain.tag(), s.users, s.k, s.inertia);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
