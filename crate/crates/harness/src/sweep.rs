//! Executes experiment plans and aggregates them into run records.
//!
//! Every (cell, repeat) pair is an isolated job with its own seeds; jobs run on a
//! worker pool and are merged in plan order, so the record does not depend on
//! scheduling. A diverged job is flagged in its cell and never aborts the plan.

use std::time::Instant;

use basinwalk::datasets::{LabeledData, TaskSplits};
use basinwalk::ensembling::{
    build_cyclic, build_global_de, build_local_de, evaluate_ensemble, evaluate_ood, CycleConfig,
    EnsembleMethod, EnsembleMetrics, EnsembleRun,
};
use basinwalk::landscape::{segment_report, BarrierReport, InterpolationCurve};
use basinwalk::rng::{derive_seed, tag};
use basinwalk::training::{digest_bytes, fine_tune, pretrain, Checkpoint, FinetuneConfig};
use basinwalk::Error as CoreError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbck::canonical_json;
use crate::config::{Cell, ExperimentPlan, RegimePreset};
use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const WORKERS_ENV: &str = "BASINWALK_WORKERS";

/// Mean and sample (n - 1) standard deviation; `std` is `None` for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    /// Welford's running update.
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let (mut mean, mut m2) = (0.0, 0.0);
        for (i, &x) in values.iter().enumerate() {
            let delta = x - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (x - mean);
        }
        let n = values.len();
        let std = (n > 1).then(|| (m2 / (n - 1) as f64).sqrt());
        Some(Stat { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    /// 0-based member indices.
    pub pair: (usize, usize),
    pub train: BarrierReport,
    pub test: BarrierReport,
    pub curve: InterpolationCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatOutcome {
    pub repeat: usize,
    pub run_seed: u64,
    pub source_seeds: Vec<u64>,
    /// Training hit a non-finite value. Cyclic runs keep their earlier snapshots.
    pub diverged: bool,
    pub diverged_at_cycle: Option<usize>,
    pub metrics: Option<EnsembleMetrics>,
    /// Per-prefix mean accuracy over the corruption suite.
    pub ood_accuracy: Option<Vec<f64>>,
    pub segment: Option<SegmentSummary>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub accuracy: Stat,
    pub nll: Stat,
    pub ece: Stat,
    pub ood_accuracy: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell_id: usize,
    /// Regime preset name when the cell came from a preset file.
    pub label: Option<String>,
    pub method: EnsembleMethod,
    pub lr_multiplier: f64,
    pub epoch_multiplier: f64,
    pub cycle_epochs: Option<usize>,
    pub cycle_peak_lr: Option<f64>,
    /// One entry per ensemble size reached by at least one repeat.
    pub sizes: Vec<SizeSummary>,
    /// Individual test accuracy by member position, over repeats.
    pub member_accuracy: Vec<Stat>,
    pub diverged: bool,
    pub repeats: Vec<RepeatOutcome>,
    pub wall_clock_secs: f64,
}

impl CellRecord {
    /// The segment of the first repeat that has one.
    pub fn segment(&self) -> Option<&SegmentSummary> {
        self.repeats.iter().find_map(|r| r.segment.as_ref())
    }

    pub fn size(&self, size: usize) -> Option<&SizeSummary> {
        self.sizes.iter().find(|s| s.size == size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub plan_digest: String,
    pub method: EnsembleMethod,
    pub size: usize,
    pub repeats: usize,
    pub seed: u64,
    pub cells: Vec<CellRecord>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    /// The record with every wall-clock field zeroed.
    pub fn without_timing(&self) -> RunRecord {
        let mut r = self.clone();
        r.wall_clock_secs = 0.0;
        for c in &mut r.cells {
            c.wall_clock_secs = 0.0;
            for rep in &mut c.repeats {
                rep.wall_clock_secs = 0.0;
            }
        }
        r
    }
}

pub fn plan_digest(plan: &ExperimentPlan) -> Result<String> {
    Ok(digest_bytes(canonical_json(plan)?.as_bytes()))
}

/// Seed of the ensemble built for `cell` in `repeat`.
pub fn cell_seed(plan_seed: u64, cell: usize, repeat: usize) -> u64 {
    derive_seed(plan_seed, &[tag("cell"), cell as u64, repeat as u64])
}

/// Seed of the x1 fine-tune that starts every cyclic run of `repeat`.
pub fn first_finetune_seed(plan_seed: u64, repeat: usize) -> u64 {
    derive_seed(plan_seed, &[tag("first"), repeat as u64])
}

pub fn ood_seed(plan_seed: u64) -> u64 {
    derive_seed(plan_seed, &[tag("ood")])
}

/// Worker count from `BASINWALK_WORKERS`, else the number of available cores.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Source seeds pre-trained by a plan, in first-use order.
pub fn required_pretrains(plan: &ExperimentPlan) -> Vec<u64> {
    if plan.method == EnsembleMethod::GlobalDe {
        return plan.pretrain_seeds[..plan.size].to_vec();
    }
    let n = plan.repeats.min(plan.pretrain_seeds.len());
    plan.pretrain_seeds[..n].to_vec()
}

struct Context<'a> {
    plan: &'a ExperimentPlan,
    target: &'a TaskSplits,
    base: FinetuneConfig,
    pretrained: Vec<Checkpoint>,
    /// Cyclic methods only: the shared first fine-tune of each repeat.
    firsts: Vec<Option<Checkpoint>>,
}

impl Context<'_> {
    fn single_source(&self, repeat: usize) -> &Checkpoint {
        &self.pretrained[repeat % self.pretrained.len()]
    }
}

pub fn run_plan(plan: &ExperimentPlan) -> Result<RunRecord> {
    run_plan_with_workers(plan, worker_count())
}

pub fn run_plan_with_workers(plan: &ExperimentPlan, workers: usize) -> Result<RunRecord> {
    let cells: Vec<(Cell, Option<String>)> = plan.cells().into_iter().map(|c| (c, None)).collect();
    execute(plan, &cells, workers)
}

/// Runs one cyclic cell per preset, labeled with the preset name, in preset order.
pub fn run_regimes(plan: &ExperimentPlan, presets: &[&RegimePreset], workers: usize) -> Result<RunRecord> {
    if !plan.method.is_cyclic() {
        return Err(HarnessError::Plan("regimes need a cyclic method (sse or fge)".into()));
    }
    if presets.is_empty() {
        return Err(HarnessError::Plan("no presets selected".into()));
    }
    let base = plan.setup.base_config()?;
    let cells = presets
        .iter()
        .map(|p| {
            CycleConfig::new(p.lr_multiplier, p.epoch_multiplier, base.lr, base.epochs)?;
            Ok((
                Cell {
                    lr_multiplier: p.lr_multiplier,
                    epoch_multiplier: p.epoch_multiplier,
                },
                Some(p.name.name().to_string()),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    execute(plan, &cells, workers)
}

fn execute(plan: &ExperimentPlan, cells: &[(Cell, Option<String>)], workers: usize) -> Result<RunRecord> {
    plan.validate()?;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Plan(format!("cannot start worker pool: {e}")))?;

    pool.install(|| {
        let source = plan.setup.source_data()?;
        let target = plan.setup.target_data()?;
        let base = plan.setup.base_config()?;
        let pretrained = required_pretrains(plan)
            .par_iter()
            .map(|&s| pretrain(&source.train, &plan.setup.pretrain, s).map_err(HarnessError::from))
            .collect::<Result<Vec<_>>>()?;

        let mut ctx = Context {
            plan,
            target: &target,
            base,
            pretrained,
            firsts: Vec::new(),
        };
        if plan.method.is_cyclic() {
            ctx.firsts = (0..plan.repeats)
                .into_par_iter()
                .map(|r| {
                    match fine_tune(ctx.single_source(r), &target.train, &ctx.base, first_finetune_seed(plan.seed, r)) {
                        Ok(ck) => Ok(Some(ck)),
                        Err(CoreError::Diverged(_)) => Ok(None),
                        Err(e) => Err(HarnessError::from(e)),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
        }

        let jobs: Vec<(usize, usize)> = (0..cells.len())
            .flat_map(|c| (0..plan.repeats).map(move |r| (c, r)))
            .collect();
        let outcomes = jobs
            .par_iter()
            .map(|&(c, r)| run_job(&ctx, c, cells[c].0, r))
            .collect::<Result<Vec<_>>>()?;

        let mut outcomes = outcomes.into_iter();
        let records = cells
            .iter()
            .enumerate()
            .map(|(id, (cell, label))| {
                let reps: Vec<_> = outcomes.by_ref().take(plan.repeats).collect();
                aggregate(&ctx, id, *cell, label.clone(), reps)
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(RunRecord {
            schema_version: SCHEMA_VERSION,
            plan_digest: plan_digest(plan)?,
            method: plan.method,
            size: plan.size,
            repeats: plan.repeats,
            seed: plan.seed,
            cells: records,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        })
    })
}

fn build_run(ctx: &Context<'_>, cell: Cell, repeat: usize, run_seed: u64) -> Result<Option<EnsembleRun>> {
    let plan = ctx.plan;
    let train = &ctx.target.train;
    let built = match plan.method {
        EnsembleMethod::LocalDe => build_local_de(ctx.single_source(repeat), plan.size, train, &ctx.base, run_seed),
        EnsembleMethod::GlobalDe => build_global_de(&ctx.pretrained, train, &ctx.base, run_seed),
        EnsembleMethod::Sse | EnsembleMethod::Fge => {
            let Some(first) = &ctx.firsts[repeat] else {
                return Ok(None);
            };
            let cycle = CycleConfig::new(cell.lr_multiplier, cell.epoch_multiplier, ctx.base.lr, ctx.base.epochs)?;
            build_cyclic(first, plan.method, &cycle, plan.size, train, &ctx.base, run_seed)
        }
    };
    match built {
        Ok(run) => Ok(Some(run)),
        Err(CoreError::Diverged(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn run_job(ctx: &Context<'_>, cell_id: usize, cell: Cell, repeat: usize) -> Result<RepeatOutcome> {
    let started = Instant::now();
    let plan = ctx.plan;
    let run_seed = cell_seed(plan.seed, cell_id, repeat);
    let source_seeds = match plan.method {
        EnsembleMethod::GlobalDe => ctx.pretrained.iter().map(|p| p.provenance.source_seed).collect(),
        _ => vec![ctx.single_source(repeat).provenance.source_seed],
    };
    let mut outcome = RepeatOutcome {
        repeat,
        run_seed,
        source_seeds,
        diverged: true,
        diverged_at_cycle: None,
        metrics: None,
        ood_accuracy: None,
        segment: None,
        wall_clock_secs: 0.0,
    };
    if let Some(run) = build_run(ctx, cell, repeat, run_seed)? {
        outcome.diverged = run.diverged_at_cycle.is_some();
        outcome.diverged_at_cycle = run.diverged_at_cycle;
        outcome.metrics = Some(evaluate_ensemble(&run, &ctx.target.test)?);
        if plan.ood {
            outcome.ood_accuracy = Some(evaluate_ood(&run, &ctx.target.test, ood_seed(plan.seed))?);
        }
        if run.len() >= 2 {
            let mut report = segment_report(&run, &ctx.target.train, &ctx.target.test, plan.grid_size, run_seed)?;
            let s = report.remove(0);
            outcome.segment = Some(SegmentSummary {
                pair: s.pair,
                train: s.train,
                test: s.test,
                curve: s.curve,
            });
        }
    }
    outcome.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(outcome)
}

fn column(reps: &[RepeatOutcome], f: impl Fn(&RepeatOutcome) -> Option<f64>) -> Vec<f64> {
    reps.iter().filter_map(f).collect()
}

fn aggregate(
    ctx: &Context<'_>,
    cell_id: usize,
    cell: Cell,
    label: Option<String>,
    repeats: Vec<RepeatOutcome>,
) -> Result<CellRecord> {
    let plan = ctx.plan;
    let cycle = if plan.method.is_cyclic() {
        Some(CycleConfig::new(cell.lr_multiplier, cell.epoch_multiplier, ctx.base.lr, ctx.base.epochs)?)
    } else {
        None
    };
    let mut sizes = Vec::new();
    for size in 1..=plan.size {
        let prefix = |r: &RepeatOutcome| r.metrics.as_ref().and_then(|m| m.prefixes.get(size - 1).copied());
        let (Some(accuracy), Some(nll), Some(ece)) = (
            Stat::of(&column(&repeats, |r| prefix(r).map(|p| p.accuracy))),
            Stat::of(&column(&repeats, |r| prefix(r).map(|p| p.nll))),
            Stat::of(&column(&repeats, |r| prefix(r).map(|p| p.ece))),
        ) else {
            break;
        };
        let ood_accuracy = Stat::of(&column(&repeats, |r| {
            r.ood_accuracy.as_ref().and_then(|o| o.get(size - 1).copied())
        }));
        sizes.push(SizeSummary {
            size,
            accuracy,
            nll,
            ece,
            ood_accuracy,
        });
    }
    let member_accuracy = (0..plan.size)
        .map_while(|i| {
            Stat::of(&column(&repeats, |r| {
                r.metrics.as_ref().and_then(|m| m.member_accuracy.get(i).copied())
            }))
        })
        .collect();
    Ok(CellRecord {
        cell_id,
        label,
        method: plan.method,
        lr_multiplier: cell.lr_multiplier,
        epoch_multiplier: cell.epoch_multiplier,
        cycle_epochs: cycle.map(|c| c.cycle_epochs()),
        cycle_peak_lr: cycle.map(|c| c.cycle_peak_lr()),
        sizes,
        member_accuracy,
        diverged: repeats.iter().any(|r| r.diverged),
        wall_clock_secs: repeats.iter().map(|r| r.wall_clock_secs).sum(),
        repeats,
    })
}

/// Convenience for callers that already hold data: the x1 metrics of one fine-tune.
pub fn single_finetune_metrics(
    pretrained: &Checkpoint,
    train: &LabeledData,
    test: &LabeledData,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<EnsembleMetrics> {
    let ck = fine_tune(pretrained, train, cfg, seed)?;
    let run = EnsembleRun::from_members(EnsembleMethod::LocalDe, vec![ck], seed)?;
    Ok(evaluate_ensemble(&run, test)?)
}
