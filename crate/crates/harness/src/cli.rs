//! The `basinwalk` command line.
//!
//! Exit codes: 0 on success, 1 on a usage error (the subcommand help is printed),
//! 2 when the command itself fails.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use basinwalk::datasets::split_validation;
use basinwalk::ensembling::{
    build_cyclic, build_global_de, build_local_de, evaluate_ensemble, CycleConfig, EnsembleMethod, EnsembleRun,
};
use basinwalk::landscape::{barrier_report, interpolate, Split, DEFAULT_BASIN_THRESHOLD, DEFAULT_GRID_SIZE};
use basinwalk::training::{fine_tune, grid_search, pretrain};
use clap::{CommandFactory, Parser, Subcommand};
use serde_json::json;

use crate::bbck::{load_checkpoint, save_checkpoint};
use crate::config::{load_setup, ExperimentPlan, PresetFile, Setup};
use crate::error::{HarnessError, Result};
use crate::report::{emit_report, fmt_sig6, load_record, ReportFormat};
use crate::sweep::{run_plan_with_workers, run_regimes, worker_count};

#[derive(Debug, Parser)]
#[command(name = "basinwalk", version, about = "Fine-tuned ensembles and their loss-landscape basins")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train source-task checkpoints, one per seed.
    Pretrain {
        #[arg(long)]
        setup: PathBuf,
        #[arg(long = "seed", required = true, num_args = 1..)]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Grid-search weight decay and learning rate on a validation split of the target.
    Tune {
        #[arg(long)]
        setup: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Fine-tune one network from a pre-trained checkpoint with the x1 recipe.
    Finetune {
        #[arg(long)]
        setup: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        /// Train on the grid-search subset (validation part held out) instead of the full set.
        #[arg(long)]
        sub_train: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build one ensemble and print its per-size metrics.
    Ensemble {
        #[arg(long)]
        setup: PathBuf,
        #[arg(long)]
        method: EnsembleMethod,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 1.0)]
        lr_mult: f64,
        #[arg(long, default_value_t = 1.0)]
        epoch_mult: f64,
        /// Pre-trained checkpoint(s); global-de takes one per member.
        #[arg(long = "checkpoint", required = true, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// Writes `member_<k>.bbck` for k = 1..=size.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate the straight segment between two checkpoints.
    Interpolate {
        #[arg(long)]
        setup: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
        grid: usize,
        /// CSV of the curve (alpha, train_loss, train_acc, test_loss, test_acc).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell of a plan file and write the report.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
        /// Overrides the plan seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the more-local, optimal and more-semi-local presets of one preset-file row.
    Regimes {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        preset_file: PathBuf,
        #[arg(long, default_value = "reference")]
        dataset: String,
        #[arg(long, default_value = "supervised")]
        pretraining: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-emit the report of a saved JSON run record.
    Report {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(out, "{}", e.render());
            return 0;
        }
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            let mut cmd = Cli::command();
            let sub = args.get(1).and_then(|a| a.to_str()).map(str::to_string);
            let help = match sub.as_deref().and_then(|s| cmd.find_subcommand_mut(s)) {
                Some(sc) => sc.render_help(),
                None => cmd.render_help(),
            };
            let _ = write!(err, "\n{help}");
            return 1;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn print_json(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn plan_with_seed(path: &Path, seed: Option<u64>) -> Result<ExperimentPlan> {
    let mut plan = ExperimentPlan::load(path)?;
    if let Some(s) = seed {
        plan.seed = s;
    }
    Ok(plan)
}

fn build_ensemble(
    setup: &Setup,
    method: EnsembleMethod,
    size: usize,
    lr_mult: f64,
    epoch_mult: f64,
    checkpoints: &[PathBuf],
    seed: u64,
) -> Result<EnsembleRun> {
    let target = setup.target_data()?;
    let base = setup.base_config()?;
    let sources = checkpoints.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?;
    let run = match method {
        EnsembleMethod::LocalDe => build_local_de(&sources[0], size, &target.train, &base, seed)?,
        EnsembleMethod::GlobalDe => {
            if sources.len() != size {
                return Err(HarnessError::Plan(format!(
                    "global-de of size {size} needs {size} checkpoints, got {}",
                    sources.len()
                )));
            }
            build_global_de(&sources, &target.train, &base, seed)?
        }
        EnsembleMethod::Sse | EnsembleMethod::Fge => {
            let first = fine_tune(&sources[0], &target.train, &base, seed)?;
            let cycle = CycleConfig::new(lr_mult, epoch_mult, base.lr, base.epochs)?;
            build_cyclic(&first, method, &cycle, size, &target.train, &base, seed)?
        }
    };
    Ok(run)
}

fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Pretrain { setup, seeds, out_dir } => {
            let setup = load_setup(&setup)?;
            let source = setup.source_data()?;
            std::fs::create_dir_all(&out_dir)?;
            for seed in seeds {
                let ck = pretrain(&source.train, &setup.pretrain, seed)?;
                let path = out_dir.join(format!("pretrain_{seed}.bbck"));
                save_checkpoint(&ck, &path)?;
                let (_, acc) = basinwalk::landscape::evaluate(&ck.params, &source.test)?;
                print_json(out, &json!({ "seed": seed, "path": path, "source_test_accuracy": acc }))?;
            }
        }
        Command::Tune { setup, checkpoint, seed } => {
            let setup = load_setup(&setup)?;
            let target = setup.target_data()?;
            let pretrained = load_checkpoint(&checkpoint)?;
            let result = grid_search(&pretrained, &target.train, &setup.tune.grid(seed), &setup.base_config()?)?;
            print_json(out, &result)?;
        }
        Command::Finetune {
            setup,
            checkpoint,
            seed,
            lr,
            weight_decay,
            sub_train,
            out: path,
        } => {
            let setup = load_setup(&setup)?;
            let target = setup.target_data()?;
            let train = if sub_train {
                split_validation(&target.train, setup.tune.val_ratio, setup.tune.split_seed)?.0
            } else {
                target.train.clone()
            };
            let mut cfg = setup.finetune.config(train.len())?;
            cfg.lr = lr.unwrap_or(cfg.lr);
            cfg.weight_decay = weight_decay.unwrap_or(cfg.weight_decay);
            let ck = fine_tune(&load_checkpoint(&checkpoint)?, &train, &cfg, seed)?;
            if let Some(path) = path {
                save_checkpoint(&ck, &path)?;
            }
            let run = EnsembleRun::from_members(EnsembleMethod::LocalDe, vec![ck], seed)?;
            print_json(out, &evaluate_ensemble(&run, &target.test)?)?;
        }
        Command::Ensemble {
            setup,
            method,
            size,
            lr_mult,
            epoch_mult,
            checkpoints,
            seed,
            out_dir,
        } => {
            let setup = load_setup(&setup)?;
            let run = build_ensemble(&setup, method, size, lr_mult, epoch_mult, &checkpoints, seed)?;
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)?;
                for (k, m) in run.members.iter().enumerate() {
                    save_checkpoint(m, &dir.join(format!("member_{}.bbck", k + 1)))?;
                }
            }
            if let Some(c) = run.diverged_at_cycle {
                return Err(HarnessError::Core(basinwalk::Error::NonFinite(format!(
                    "cycle {c} diverged after {} snapshots",
                    run.len()
                ))));
            }
            print_json(out, &evaluate_ensemble(&run, &setup.target_data()?.test)?)?;
        }
        Command::Interpolate {
            setup,
            a,
            b,
            grid,
            out: path,
        } => {
            let setup = load_setup(&setup)?;
            let target = setup.target_data()?;
            let curve = interpolate(&load_checkpoint(&a)?, &load_checkpoint(&b)?, grid, &target.train, &target.test)?;
            let test = barrier_report(&curve, Split::Test);
            if let Some(path) = path {
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(["alpha", "train_loss", "train_acc", "test_loss", "test_acc"])?;
                for p in &curve.points {
                    w.write_record([p.alpha, p.train_loss, p.train_acc, p.test_loss, p.test_acc].map(fmt_sig6))?;
                }
                w.flush()?;
            }
            print_json(
                out,
                &json!({
                    "train": barrier_report(&curve, Split::Train),
                    "test": test,
                    "same_basin": test.accuracy.height <= DEFAULT_BASIN_THRESHOLD,
                }),
            )?;
        }
        Command::Sweep {
            plan,
            out_dir,
            format,
            seed,
        } => {
            let plan = plan_with_seed(&plan, seed)?;
            let record = run_plan_with_workers(&plan, worker_count())?;
            for path in emit_report(&record, format, &out_dir)? {
                writeln!(out, "{}", path.display())?;
            }
        }
        Command::Regimes {
            plan,
            preset_file,
            dataset,
            pretraining,
            out_dir,
            format,
            seed,
        } => {
            let plan = plan_with_seed(&plan, seed)?;
            let presets = PresetFile::load(&preset_file)?;
            let selected = presets.select(&dataset, &pretraining);
            if selected.is_empty() {
                return Err(HarnessError::Plan(format!(
                    "preset file has no entries for dataset {dataset:?} with {pretraining:?} pre-training"
                )));
            }
            let record = run_regimes(&plan, &selected, worker_count())?;
            for path in emit_report(&record, format, &out_dir)? {
                writeln!(out, "{}", path.display())?;
            }
        }
        Command::Report { record, out_dir, format } => {
            let record = load_record(&record)?;
            for path in emit_report(&record, format, &out_dir)? {
                writeln!(out, "{}", path.display())?;
            }
        }
    }
    Ok(())
}
