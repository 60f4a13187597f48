//! Metrics along straight lines between checkpoints and barrier statistics.
//!
//! A barrier is the largest shortfall of a metric along the segment relative to the
//! straight line joining its endpoint values, clamped at zero. Two checkpoints are in
//! the same basin when the test-accuracy barrier stays within a threshold.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledData;
use crate::ensembling::EnsembleRun;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, nll};
use crate::nn::{forward, ParamVector};
use crate::rng::{derive_seed, rng_from, tag};
use crate::training::Checkpoint;

pub const DEFAULT_GRID_SIZE: usize = 25;
pub const DEFAULT_BASIN_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCurve {
    pub points: Vec<CurvePoint>,
    pub start_digest: String,
    pub end_digest: String,
}

impl InterpolationCurve {
    pub fn alphas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.alpha).collect()
    }

    pub fn series(&self, split: Split, metric: Metric) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| match (split, metric) {
                (Split::Train, Metric::Loss) => p.train_loss,
                (Split::Train, Metric::Accuracy) => p.train_acc,
                (Split::Test, Metric::Loss) => p.test_loss,
                (Split::Test, Metric::Accuracy) => p.test_acc,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Loss,
    Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    pub height: f64,
    pub argmax_alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierReport {
    pub split: Split,
    pub accuracy: Barrier,
    pub loss: Barrier,
}

/// `(1 - alpha) * a + alpha * b`.
pub fn lerp(a: &ParamVector, b: &ParamVector, alpha: f64) -> Result<ParamVector> {
    if a.arch() != b.arch() {
        return Err(Error::ArchMismatch("cannot interpolate between different architectures".into()));
    }
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (1.0 - alpha) * x + alpha * y)
        .collect();
    ParamVector::new(a.arch().clone(), values)
}

/// Full-dataset `(mean cross-entropy, accuracy)`.
pub fn evaluate(params: &ParamVector, data: &LabeledData) -> Result<(f64, f64)> {
    let pred = forward(params, data.inputs())?;
    Ok((nll(&pred.probs, &data.labels), accuracy(&pred.probs, &data.labels)))
}

/// Evaluates `grid_size` evenly spaced points of the segment from `a` to `b`.
pub fn interpolate(
    a: &Checkpoint,
    b: &Checkpoint,
    grid_size: usize,
    train: &LabeledData,
    test: &LabeledData,
) -> Result<InterpolationCurve> {
    if grid_size < 3 {
        return Err(Error::config(format!("grid_size must be >= 3, got {grid_size}")));
    }
    if a.params.arch() != b.params.arch() {
        return Err(Error::ArchMismatch("segment endpoints differ in architecture".into()));
    }
    let last = (grid_size - 1) as f64;
    let points = (0..grid_size)
        .map(|i| {
            let alpha = i as f64 / last;
            let theta = lerp(&a.params, &b.params, alpha)?;
            let (train_loss, train_acc) = evaluate(&theta, train)?;
            let (test_loss, test_acc) = evaluate(&theta, test)?;
            Ok(CurvePoint {
                alpha,
                train_loss,
                train_acc,
                test_loss,
                test_acc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InterpolationCurve {
        points,
        start_digest: a.params_digest(),
        end_digest: b.params_digest(),
    })
}

/// Barrier of a raw series sampled at `alphas` (first 0, last 1). For accuracy the
/// shortfall is `line - value`; for loss it is `value - line`.
pub fn series_barrier(alphas: &[f64], values: &[f64], metric: Metric) -> Barrier {
    let (v0, v1) = (values[0], values[values.len() - 1]);
    let mut best = Barrier {
        height: 0.0,
        argmax_alpha: 0.0,
    };
    for (&alpha, &v) in alphas.iter().zip(values) {
        let line = (1.0 - alpha) * v0 + alpha * v1;
        let gap = match metric {
            Metric::Accuracy => line - v,
            Metric::Loss => v - line,
        };
        if gap > best.height {
            best = Barrier {
                height: gap,
                argmax_alpha: alpha,
            };
        }
    }
    best
}

pub fn barrier(curve: &InterpolationCurve, split: Split, metric: Metric) -> Barrier {
    series_barrier(&curve.alphas(), &curve.series(split, metric), metric)
}

pub fn barrier_report(curve: &InterpolationCurve, split: Split) -> BarrierReport {
    BarrierReport {
        split,
        accuracy: barrier(curve, split, Metric::Accuracy),
        loss: barrier(curve, split, Metric::Loss),
    }
}

/// True iff the test-accuracy barrier between `a` and `b` is at most `threshold`.
pub fn same_basin(
    a: &Checkpoint,
    b: &Checkpoint,
    train: &LabeledData,
    test: &LabeledData,
    threshold: f64,
) -> Result<bool> {
    if !(threshold > 0.0) {
        return Err(Error::config("basin threshold must be > 0"));
    }
    let curve = interpolate(a, b, DEFAULT_GRID_SIZE, train, test)?;
    Ok(barrier(&curve, Split::Test, Metric::Accuracy).height <= threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    /// 0-based member indices.
    pub pair: (usize, usize),
    pub curve: InterpolationCurve,
    pub train: BarrierReport,
    pub test: BarrierReport,
}

/// Member pair probed for a run: first and last snapshot for cyclic methods, a
/// seeded random pair for deep ensembles.
pub fn segment_pair(run: &EnsembleRun, seed: u64) -> Result<(usize, usize)> {
    let n = run.members.len();
    if n < 2 {
        return Err(Error::config("segment report needs at least two members"));
    }
    if run.method.is_cyclic() {
        return Ok((0, n - 1));
    }
    let mut rng = rng_from(derive_seed(seed, &[tag("segment_pair")]));
    let picked = sample(&mut rng, n, 2);
    let (i, j) = (picked.index(0), picked.index(1));
    Ok((i.min(j), i.max(j)))
}

pub fn segment_report(
    run: &EnsembleRun,
    train: &LabeledData,
    test: &LabeledData,
    grid_size: usize,
    seed: u64,
) -> Result<Vec<SegmentReport>> {
    let pair = segment_pair(run, seed)?;
    let curve = interpolate(&run.members[pair.0], &run.members[pair.1], grid_size, train, test)?;
    Ok(vec![SegmentReport {
        pair,
        train: barrier_report(&curve, Split::Train),
        test: barrier_report(&curve, Split::Test),
        curve,
    }])
}
