use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use epidg::eval::ProbeMode;
use epidg::{Error, Result};
use epidg_cli::config::ExperimentConfig;
use epidg_cli::evaluate::{eval_run, EvalKind, EvalOptions};
use epidg_cli::gen::{gen_data, GenOptions};
use epidg_cli::run::{rerun, train_run, FINAL_CHECKPOINT, METRICS_FILE};
use epidg_cli::sweep::{parse_grid_axis, parse_seeds, summarize, sweep_to_dir, SweepSpec};
use epidg_cli::exit_code;

#[derive(Parser)]
#[command(name = "epidg", version, about = "Episodic domain-generalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain benchmark as feature CSV files.
    GenData {
        /// synth-homog or synth-hetero.
        #[arg(long)]
        preset: String,
        /// Source domain count; defaults to 4, or to the length of
        /// --label-spaces for synth-hetero.
        #[arg(long)]
        domains: Option<usize>,
        /// Shared class count (synth-homog).
        #[arg(long)]
        classes: Option<usize>,
        /// Per-source class counts, e.g. 10,5,3 (synth-hetero).
        #[arg(long, value_delimiter = ',')]
        label_spaces: Option<Vec<usize>>,
        /// Target class count (synth-hetero).
        #[arg(long)]
        target_classes: Option<usize>,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 1000)]
        per_domain: usize,
        #[arg(long, default_value_t = 0.6)]
        shift: f64,
        #[arg(long, default_value_t = 1.0)]
        class_spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train from a config file (or repeat a run from its manifest).
    Train {
        /// Experiment config (TOML).
        #[arg(long, required_unless_present = "manifest")]
        config: Option<PathBuf>,
        /// Repeat the run recorded in this manifest or run directory.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        /// Override a config key, e.g. --set train.lambda1=2.5
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        /// Run directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a finished run; CSVs go to <run>/eval/.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// accuracy, routing, sharpness, probe or ensemble.
        #[arg(long)]
        which: String,
        /// Checkpoint to evaluate instead of the final one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 20)]
        draws: usize,
        /// trained, concat or mean.
        #[arg(long, default_value = "trained")]
        probe_mode: String,
        /// Run whose deployed features are combined with this run's in concat/mean probes.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = epidg::eval::probe::DEFAULT_L2)]
        l2: f64,
        /// Ensemble size (default: number of sources plus one).
        #[arg(long)]
        members: Option<usize>,
    },
    /// Run a grid of configurations and aggregate mean/std per cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        overrides: Vec<String>,
        /// Seeds as 0-9 or 0,3,7.
        #[arg(long)]
        seeds: Option<String>,
        /// Domains to hold out in turn: comma list or "all".
        #[arg(long)]
        holdout: Option<String>,
        /// Variants, e.g. agg,F,FC,FCR.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Grid axis section.key=v1,v2 (repeatable).
        #[arg(long = "grid")]
        grid: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            preset,
            domains,
            classes,
            label_spaces,
            target_classes,
            dim,
            per_domain,
            shift,
            class_spread,
            seed,
            out,
        } => {
            let opts = GenOptions {
                preset,
                domains,
                classes,
                label_spaces,
                target_classes,
                dim,
                per_domain,
                shift,
                class_spread,
                seed,
            };
            for p in gen_data(&opts, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Train {
            config,
            manifest,
            overrides,
            out,
        } => {
            let outcome = match (config, manifest) {
                (_, Some(m)) => {
                    if !overrides.is_empty() {
                        return Err(Error::Config("--set cannot be combined with --manifest".into()));
                    }
                    rerun(&m, &out)?
                }
                (Some(c), None) => train_run(&ExperimentConfig::load(&c, &overrides)?, &out)?,
                (None, None) => unreachable!("clap requires one of --config/--manifest"),
            };
            if let Some(last) = outcome.rows.last() {
                println!(
                    "trained {} iterations; final total loss {:.6}; val_acc {}",
                    last.report.iteration + 1,
                    last.report.total,
                    last.val_acc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
                );
            }
            println!("{}", outcome.dir.join(METRICS_FILE).display());
            println!("{}", outcome.dir.join(FINAL_CHECKPOINT).display());
        }
        Command::Eval {
            run,
            which,
            checkpoint,
            sigmas,
            draws,
            probe_mode,
            baseline,
            l2,
            members,
        } => {
            let mut opts = EvalOptions::new(which.parse::<EvalKind>()?);
            opts.checkpoint = checkpoint;
            if let Some(s) = sigmas {
                opts.sigmas = s;
            }
            opts.draws = draws;
            opts.probe_mode = probe_mode.parse::<ProbeMode>()?;
            opts.baseline = baseline;
            opts.l2 = l2;
            opts.members = members;
            for p in eval_run(&run, &opts)? {
                println!("{}", p.display());
            }
        }
        Command::Sweep {
            config,
            overrides,
            seeds,
            holdout,
            variants,
            grid,
            jobs,
            out,
        } => {
            let base = ExperimentConfig::load(&config, &overrides)?;
            let holdouts = match holdout.as_deref() {
                None => Vec::new(),
                Some("all") => base.all_domains()?.into_iter().map(|d| d.name).collect(),
                Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
            };
            let spec = SweepSpec {
                seeds: seeds.as_deref().map(parse_seeds).transpose()?.unwrap_or_default(),
                holdouts,
                variants,
                grid: grid.iter().map(|g| parse_grid_axis(g)).collect::<Result<_>>()?,
                jobs,
            };
            let (results, paths) = sweep_to_dir(&base, &spec, &out)?;
            for row in summarize(&results) {
                println!(
                    "{:>10} {:>5} {:<30} n={:<3} mean={:.4} std={:.4}{}",
                    row.holdout,
                    row.variant,
                    row.setting,
                    row.n,
                    row.mean,
                    row.std,
                    if row.failed > 0 { format!(" failed={}", row.failed) } else { String::new() }
                );
            }
            for p in paths {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
