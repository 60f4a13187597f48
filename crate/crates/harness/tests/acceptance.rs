//! Acceptance criteria. Each test prints one `criterion N ...: PASS|FAIL` line with
//! the measured values, then asserts it. Criteria 5-9 run on the reference task in
//! `fixtures/reference_plan.toml` with the regimes pinned in
//! `fixtures/regime_presets.toml`; the expensive runs are shared through `OnceLock`s.

mod common;

use std::collections::HashSet;
use std::sync::OnceLock;
use std::time::Instant;

use basinwalk::datasets::{ood_suite, TaskSplits};
use basinwalk::ensembling::{
    build_cyclic, build_local_de, ensemble_predict, evaluate_ensemble, evaluate_ood, CycleConfig,
    EnsembleMethod, EnsembleMetrics, EnsembleRun,
};
use basinwalk::landscape::{barrier, interpolate, Metric, Split, DEFAULT_BASIN_THRESHOLD};
use basinwalk::metrics::accuracy;
use basinwalk::nn::{data_loss, init_params, loss_and_grad, Activation, ArchDescriptor, ParamVector};
use basinwalk::rng::{derive_seed, rng_from, tag};
use basinwalk::training::{
    epochs_from_steps, fine_tune, pretrain, train_from_scratch, Checkpoint, FinetuneConfig, Schedule,
};
use basinwalk_harness::bbck::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use basinwalk_harness::config::{ExperimentPlan, PresetFile, RegimeName};
use basinwalk_harness::report::{emit_report, ReportFormat, CURVES_FILE, MEMBERS_FILE, SEGMENTS_FILE};
use basinwalk_harness::sweep::{
    ood_seed, run_plan_with_workers, run_regimes, worker_count, CellRecord, RunRecord,
};
use common::fixture;
use ndarray::Array2;
use rand::Rng;

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_NETS: usize = 24;
const SCHEDULE_TOL: f64 = 1e-15;
const JENSEN_TOL: f64 = 1e-12;
const SCRATCH_MIN_BARRIER: f64 = 0.10;
const HARNESS_SEEDS: [u64; 3] = [0, 1, 2];
const MIN_GLOBAL_WINS: usize = 4;
/// Half a percentage point, as a fraction.
const HALF_POINT: f64 = 0.005;
const TWO_POINTS: f64 = 0.02;
const ONE_POINT: f64 = 0.01;
const OOD_SETS: usize = 30;
const REFERENCE_ROW: (&str, &str) = ("reference", "supervised");

fn verdict(id: u32, name: &str, pass: bool, detail: String, started: Instant) -> bool {
    println!(
        "criterion {id} {name}: {} ({detail}; {:.1}s)",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    pass
}

struct Reference {
    plan: ExperimentPlan,
    target: TaskSplits,
    base: FinetuneConfig,
    pretrained: Vec<Checkpoint>,
}

fn reference() -> &'static Reference {
    static CELL: OnceLock<Reference> = OnceLock::new();
    CELL.get_or_init(|| {
        let plan = ExperimentPlan::load(&fixture("reference_plan.toml")).unwrap();
        let source = plan.setup.source_data().unwrap();
        let pretrained = plan
            .pretrain_seeds
            .iter()
            .map(|&s| pretrain(&source.train, &plan.setup.pretrain, s).unwrap())
            .collect();
        Reference {
            target: plan.setup.target_data().unwrap(),
            base: plan.setup.base_config().unwrap(),
            pretrained,
            plan,
        }
    })
}

/// One size-5 Local DE per harness seed, member `j` of seed `h` fine-tuned from
/// pre-trained checkpoint `h`.
fn local_des() -> &'static Vec<EnsembleRun> {
    static CELL: OnceLock<Vec<EnsembleRun>> = OnceLock::new();
    CELL.get_or_init(|| {
        let r = reference();
        HARNESS_SEEDS
            .iter()
            .map(|&h| {
                let seed = derive_seed(r.plan.seed, &[tag("acceptance_local"), h]);
                build_local_de(&r.pretrained[h as usize], 5, &r.target.train, &r.base, seed).unwrap()
            })
            .collect()
    })
}

/// `grid[p][j]`: member `j` fine-tuned from pre-trained checkpoint `p`.
fn latin_grid() -> &'static Vec<Vec<Checkpoint>> {
    static CELL: OnceLock<Vec<Vec<Checkpoint>>> = OnceLock::new();
    CELL.get_or_init(|| {
        let r = reference();
        let n = r.pretrained.len();
        (0..n)
            .map(|p| {
                (0..n)
                    .map(|j| {
                        let seed = derive_seed(r.plan.seed, &[tag("acceptance_latin"), p as u64, j as u64]);
                        fine_tune(&r.pretrained[p], &r.target.train, &r.base, seed).unwrap()
                    })
                    .collect()
            })
            .collect()
    })
}

/// Paired trials: trial `t` compares the Local DE of checkpoint `t` with the Global DE
/// that takes member `(t + p) mod n` of every checkpoint `p`. Each fine-tune appears
/// once on each side, so both arms share the same fine-tuning randomness.
fn latin_trials() -> Vec<(EnsembleRun, EnsembleRun)> {
    let grid = latin_grid();
    let n = grid.len();
    (0..n)
        .map(|t| {
            let local = EnsembleRun::from_members(EnsembleMethod::LocalDe, grid[t].clone(), t as u64).unwrap();
            let global_members = (0..n).map(|p| grid[p][(t + p) % n].clone()).collect();
            let global = EnsembleRun::from_members(EnsembleMethod::GlobalDe, global_members, t as u64).unwrap();
            (local, global)
        })
        .collect()
}

fn presets() -> PresetFile {
    PresetFile::load(&fixture("regime_presets.toml")).unwrap()
}

/// SSE run of the three reference presets, in file order.
fn sse_regimes() -> &'static RunRecord {
    static CELL: OnceLock<RunRecord> = OnceLock::new();
    CELL.get_or_init(|| {
        let r = reference();
        let file = presets();
        let selected = file.select(REFERENCE_ROW.0, REFERENCE_ROW.1);
        assert_eq!(selected.len(), 3);
        run_regimes(&r.plan, &selected, worker_count()).unwrap()
    })
}

fn fge_optimal() -> &'static RunRecord {
    static CELL: OnceLock<RunRecord> = OnceLock::new();
    CELL.get_or_init(|| {
        let r = reference();
        let file = presets();
        let optimal = file.find(REFERENCE_ROW.0, REFERENCE_ROW.1, RegimeName::Optimal).unwrap();
        let plan = ExperimentPlan {
            method: EnsembleMethod::Fge,
            ..r.plan.clone()
        };
        run_regimes(&plan, &[optimal], worker_count()).unwrap()
    })
}

fn local_de_record() -> &'static RunRecord {
    static CELL: OnceLock<RunRecord> = OnceLock::new();
    CELL.get_or_init(|| {
        let plan = ExperimentPlan {
            method: EnsembleMethod::LocalDe,
            ..reference().plan.clone()
        };
        run_plan_with_workers(&plan, worker_count()).unwrap()
    })
}

fn regime(record: &RunRecord, name: RegimeName) -> &CellRecord {
    record.cells.iter().find(|c| c.label.as_deref() == Some(name.name())).unwrap()
}

fn size_acc(cell: &CellRecord, size: usize) -> f64 {
    cell.size(size).unwrap().accuracy.mean
}

fn gain(cell: &CellRecord) -> f64 {
    size_acc(cell, 5) - size_acc(cell, 1)
}

fn test_acc_barrier(a: &Checkpoint, b: &Checkpoint) -> f64 {
    let r = reference();
    let curve = interpolate(a, b, r.plan.grid_size, &r.target.train, &r.target.test).unwrap();
    barrier(&curve, Split::Test, Metric::Accuracy).height
}

fn penalized_loss(p: &ParamVector, x: &Array2<f64>, y: &[usize], l2: f64) -> f64 {
    data_loss(p, x.view(), y).unwrap() + 0.5 * l2 * p.weight_norm_sq()
}

fn max_relative_fd_error(p: &ParamVector, x: &Array2<f64>, y: &[usize], l2: f64) -> f64 {
    let h = 1e-5;
    let (_, g) = loss_and_grad(p, x.view(), y, l2).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let shifted = |d: f64| {
            let mut v = p.values().to_vec();
            v[i] += d;
            penalized_loss(&ParamVector::new(p.arch().clone(), v).unwrap(), x, y, l2)
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        let analytic = g.values[i];
        if analytic.abs() + numeric.abs() > 1e-8 {
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
        }
    }
    worst
}

#[test]
fn criterion_01_gradient_correctness() {
    let started = Instant::now();
    let mut rng = rng_from(91);
    let mut worst: f64 = 0.0;
    for net in 0..GRAD_NETS as u64 {
        let hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(2..9)).collect();
        let (d, k) = (rng.random_range(2..6), rng.random_range(2..5));
        let act = if net % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let arch = ArchDescriptor::new(d, hidden, k, act).unwrap();
        let init = init_params(&arch, net).unwrap();
        let values = init.values().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        let p = ParamVector::new(arch, values).unwrap();
        let x = Array2::from_shape_fn((10, d), |_| rng.random_range(-2.0..2.0));
        let y: Vec<usize> = (0..10).map(|_| rng.random_range(0..k)).collect();
        let l2 = if net % 3 == 0 { 0.0 } else { 1e-3 };
        worst = worst.max(max_relative_fd_error(&p, &x, &y, l2));
    }
    let pass = worst < GRAD_REL_TOL;
    let detail = format!("{GRAD_NETS} nets, worst relative error {worst:.2e} < {GRAD_REL_TOL:e}");
    assert!(verdict(1, "gradient correctness", pass, detail, started));
}

#[test]
fn criterion_02_schedule_exactness() {
    let started = Instant::now();
    let mut pass = true;
    for (lr, epochs) in [(0.025, 64.0), (0.1, 102.0), (1.0, 3.0)] {
        let s = Schedule::Cosine { lr, epochs };
        pass &= (s.lr_at(0.0) - lr).abs() <= SCHEDULE_TOL;
        pass &= s.lr_at(epochs).abs() <= SCHEDULE_TOL;
        pass &= (s.lr_at(epochs / 2.0) - lr / 2.0).abs() <= SCHEDULE_TOL;
    }
    let cycle = 16.0;
    let tri = Schedule::CyclicTriangular { peak_lr: 0.05, cycle_epochs: cycle };
    let cos = Schedule::CyclicCosine { peak_lr: 0.05, cycle_epochs: cycle };
    for i in 0..=1024 {
        let t = i as f64 * cycle / 1024.0;
        pass &= tri.lr_at(t) == tri.lr_at(cycle - t) || i == 0 || i == 1024;
        for k in 1..4 {
            let shifted = t + k as f64 * cycle;
            pass &= tri.lr_at(shifted) == tri.lr_at(t);
            pass &= cos.lr_at(shifted) == cos.lr_at(t);
        }
    }
    pass &= tri.lr_at(cycle / 2.0) == 0.05 && cos.lr_at(0.0) == 0.05;
    let detail = "cosine endpoints/midpoint within 1e-15, triangular symmetry and periodicity exact".to_string();
    assert!(verdict(2, "schedule exactness", pass, detail, started));
}

#[test]
fn criterion_03_step_budget() {
    let started = Instant::now();
    let epochs = epochs_from_steps(50000, 256, 20000).unwrap();
    let pass = epochs == 102;
    assert!(verdict(3, "epochs from steps", pass, format!("epochs_from_steps(50000, 256, 20000) = {epochs}"), started));
}

/// Largest `NLL(mean of first k) - mean(member NLL of first k)` over prefixes.
fn jensen_excess(m: &EnsembleMetrics) -> f64 {
    m.prefixes
        .iter()
        .map(|p| {
            let members = &m.member_nll[..p.size];
            p.nll - members.iter().sum::<f64>() / p.size as f64
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn criterion_04_jensen() {
    let started = Instant::now();
    let r = reference();
    let mut evaluated: Vec<EnsembleMetrics> = Vec::new();
    for run in local_des() {
        evaluated.push(evaluate_ensemble(run, &r.target.test).unwrap());
    }
    for (local, global) in latin_trials() {
        evaluated.push(evaluate_ensemble(&local, &r.target.test).unwrap());
        evaluated.push(evaluate_ensemble(&global, &r.target.test).unwrap());
    }
    let first = &local_des()[0].members[0];
    for (method, lr_mult) in [(EnsembleMethod::Sse, 4.0), (EnsembleMethod::Fge, 4.0), (EnsembleMethod::Sse, 64.0)] {
        let cycle = CycleConfig::new(lr_mult, 0.5, r.base.lr, r.base.epochs).unwrap();
        let run = build_cyclic(first, method, &cycle, 5, &r.target.train, &r.base, 4).unwrap();
        evaluated.push(evaluate_ensemble(&run, &r.target.test).unwrap());
    }
    for record in [sse_regimes(), fge_optimal(), local_de_record()] {
        for cell in &record.cells {
            evaluated.extend(cell.repeats.iter().filter_map(|rep| rep.metrics.clone()));
        }
    }
    let worst = evaluated.iter().map(jensen_excess).fold(f64::NEG_INFINITY, f64::max);
    let pass = worst <= JENSEN_TOL;
    let detail = format!("{} ensembles, max NLL excess over member mean {worst:.3e} <= {JENSEN_TOL:e}", evaluated.len());
    assert!(verdict(4, "Jensen property", pass, detail, started));
}

#[test]
fn criterion_05_local_de_basin_membership() {
    let started = Instant::now();
    let r = reference();
    let runs = local_des();
    let pairs: Vec<(usize, usize)> = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).collect();
    let mut pair_means = vec![0.0; pairs.len()];
    let mut worst_single: f64 = 0.0;
    for run in runs {
        for (slot, &(i, j)) in pairs.iter().enumerate() {
            let b = test_acc_barrier(&run.members[i], &run.members[j]);
            worst_single = worst_single.max(b);
            pair_means[slot] += b / runs.len() as f64;
        }
    }
    let worst_pair = pair_means.iter().copied().fold(0.0, f64::max);

    let arch = r.pretrained[0].params.arch().with_num_classes(r.target.train.num_classes);
    let scratch: f64 = HARNESS_SEEDS
        .iter()
        .map(|&h| {
            let a = train_from_scratch(&arch, &r.target.train, &r.base, derive_seed(h, &[tag("scratch_a")])).unwrap();
            let b = train_from_scratch(&arch, &r.target.train, &r.base, derive_seed(h, &[tag("scratch_b")])).unwrap();
            test_acc_barrier(&a, &b)
        })
        .sum::<f64>()
        / HARNESS_SEEDS.len() as f64;

    let pass = worst_pair <= DEFAULT_BASIN_THRESHOLD && scratch >= SCRATCH_MIN_BARRIER;
    let detail = format!(
        "worst Local pair barrier (mean of {} seeds) {worst_pair:.4} <= {DEFAULT_BASIN_THRESHOLD}, worst single {worst_single:.4}; \
         scratch pair barrier {scratch:.4} >= {SCRATCH_MIN_BARRIER}",
        runs.len()
    );
    assert!(verdict(5, "Local DE basin membership", pass, detail, started));
}

#[test]
fn criterion_06_global_beats_local() {
    let started = Instant::now();
    let r = reference();
    let mut wins = 0;
    let mut margins = Vec::new();
    for (local, global) in latin_trials() {
        let l = evaluate_ensemble(&local, &r.target.test).unwrap().prefixes[4].accuracy;
        let g = evaluate_ensemble(&global, &r.target.test).unwrap().prefixes[4].accuracy;
        wins += usize::from(g > l);
        margins.push(g - l);
    }
    let mean_margin = margins.iter().sum::<f64>() / margins.len() as f64;
    let pass = wins >= MIN_GLOBAL_WINS && mean_margin > 0.0;
    let per_trial: Vec<String> = margins.iter().map(|m| format!("{:+.2}", 100.0 * m)).collect();
    let detail = format!(
        "Global wins {wins}/{} >= {MIN_GLOBAL_WINS}, mean margin {:+.2} points, per trial [{}]",
        margins.len(),
        100.0 * mean_margin,
        per_trial.join(", ")
    );
    assert!(verdict(6, "Global DE beats Local DE", pass, detail, started));
}

#[test]
fn criterion_07_sse_regimes() {
    let started = Instant::now();
    let record = sse_regimes();
    let local = &local_de_record().cells[0];
    let more_local = regime(record, RegimeName::MoreLocal);
    let optimal = regime(record, RegimeName::Optimal);
    let semi = regime(record, RegimeName::MoreSemiLocal);

    let a = gain(more_local) < HALF_POINT;
    let b = gain(optimal) >= gain(local) - HALF_POINT;
    let (m1, m5) = (semi.member_accuracy[0].mean, semi.member_accuracy[4].mean);
    let barriers: Vec<f64> = semi.repeats.iter().filter_map(|rep| rep.segment.as_ref()).map(|s| s.test.accuracy.height).collect();
    let semi_barrier = barriers.iter().sum::<f64>() / barriers.len() as f64;
    let c = m5 <= m1 - TWO_POINTS && semi_barrier > DEFAULT_BASIN_THRESHOLD;

    let detail = format!(
        "(a) x{} gain {:+.2} < 0.5 points: {a}; (b) x{} gain {:+.2} >= Local DE gain {:+.2} - 0.5: {b}; \
         (c) x{} member 5 {:.4} vs member 1 {:.4}, 1-5 barrier {semi_barrier:.4} > {DEFAULT_BASIN_THRESHOLD}: {c}",
        more_local.lr_multiplier,
        100.0 * gain(more_local),
        optimal.lr_multiplier,
        100.0 * gain(optimal),
        100.0 * gain(local),
        semi.lr_multiplier,
        m5,
        m1
    );
    assert!(verdict(7, "SSE regime taxonomy", a && b && c, detail, started));
}

#[test]
fn criterion_08_fge_parity() {
    let started = Instant::now();
    let sse = regime(sse_regimes(), RegimeName::Optimal);
    let fge = &fge_optimal().cells[0];
    assert_eq!(fge.repeats.len(), 2);
    let (s, f) = (size_acc(sse, 5), size_acc(fge, 5));
    let pass = (f - s).abs() <= ONE_POINT;
    let detail = format!(
        "x{}/x{}: FGE {f:.4} vs SSE {s:.4}, |diff| {:.2} <= 1 point (2 repeats)",
        fge.lr_multiplier,
        fge.epoch_multiplier,
        100.0 * (f - s).abs()
    );
    assert!(verdict(8, "FGE parity", pass, detail, started));
}

#[test]
fn criterion_09_ood() {
    let started = Instant::now();
    let r = reference();
    let seed = ood_seed(r.plan.seed);
    let suite = ood_suite(&r.target.test, seed).unwrap();
    let distinct: HashSet<String> = suite.iter().map(|(spec, _)| format!("{spec:?}")).collect();
    let count_ok = suite.len() == OOD_SETS && distinct.len() == OOD_SETS;

    // evaluate_ood must be the plain mean over the 30 sets.
    let run = &local_des()[0];
    let reported = evaluate_ood(run, &r.target.test, seed).unwrap();
    let recomputed: Vec<f64> = (1..=run.len())
        .map(|k| {
            suite
                .iter()
                .map(|(_, data)| accuracy(&ensemble_predict(&run.members[..k], data.inputs()).unwrap().probs, &data.labels))
                .sum::<f64>()
                / OOD_SETS as f64
        })
        .collect();
    let mean_ok = reported.iter().zip(&recomputed).all(|(a, b)| (a - b).abs() <= 1e-12);

    let record = sse_regimes();
    let ood_curve = |cell: &CellRecord| -> Vec<f64> { cell.sizes.iter().map(|s| s.ood_accuracy.unwrap().mean).collect() };
    let flat = ood_curve(regime(record, RegimeName::MoreLocal));
    let spread = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max) - flat.iter().copied().fold(f64::INFINITY, f64::min);
    let flat_ok = flat.len() == 5 && spread < HALF_POINT;
    let below_clean = record
        .cells
        .iter()
        .all(|c| c.sizes.iter().all(|s| s.ood_accuracy.unwrap().mean <= s.accuracy.mean));

    let pass = count_ok && mean_ok && flat_ok && below_clean;
    let detail = format!(
        "{} distinct sets, mean matches recomputation: {mean_ok}; more-local OOD spread {:.2} < 0.5 points; \
         OOD <= clean for every regime and size: {below_clean}",
        distinct.len(),
        100.0 * spread
    );
    assert!(verdict(9, "OOD evaluation", pass, detail, started));
}

#[test]
fn criterion_10_determinism_and_persistence() {
    let started = Instant::now();
    let plan = ExperimentPlan {
        lr_multipliers: vec![2.0],
        repeats: 1,
        ..reference().plan.clone()
    };
    let dirs: Vec<_> = [1, 2]
        .iter()
        .map(|&workers| {
            let dir = tempfile::tempdir().unwrap();
            emit_report(&run_plan_with_workers(&plan, workers).unwrap(), ReportFormat::Csv, dir.path()).unwrap();
            dir
        })
        .collect();
    let csv_ok = [CURVES_FILE, MEMBERS_FILE, SEGMENTS_FILE].iter().all(|f| {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        !a.is_empty() && a == b
    });

    let ck = &latin_grid()[0][0];
    let bytes = encode_checkpoint(ck).unwrap();
    let decoded = decode_checkpoint(&bytes).unwrap();
    let bits_ok = decoded
        .params
        .values()
        .iter()
        .zip(ck.params.values())
        .all(|(d, o)| d.to_bits() == (*o as f32 as f64).to_bits());
    let path = dirs[0].path().join("member.bbck");
    save_checkpoint(ck, &path).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();
    let ckpt_ok = bits_ok
        && decoded.provenance == ck.provenance
        && reloaded == decoded
        && encode_checkpoint(&decoded).unwrap() == bytes;

    let pass = csv_ok && ckpt_ok;
    let detail = format!("CSV payloads byte-identical across worker counts: {csv_ok}; checkpoint f32 round trip bit-exact: {ckpt_ok}");
    assert!(verdict(10, "determinism and persistence", pass, detail, started));
}
