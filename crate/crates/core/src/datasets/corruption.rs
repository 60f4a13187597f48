//! Feature-space corruptions with five severity levels each.
//!
//! Random draws depend on `(seed, corruption name)` only, never on the severity, so
//! a higher severity perturbs the same samples in the same directions by a larger
//! amount. Quantization grids are nested (each step doubles), so displacement is
//! monotone in severity for every sample, not just on average.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledData;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, tag};

pub const SEVERITIES: [u8; 5] = [1, 2, 3, 4, 5];

/// Variants are declared in lexicographic order of their names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    AdditiveShift,
    ContrastScale,
    FeatureDropout,
    GaussNoise,
    Quantize,
    UniformNoise,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 6] = [
        CorruptionKind::AdditiveShift,
        CorruptionKind::ContrastScale,
        CorruptionKind::FeatureDropout,
        CorruptionKind::GaussNoise,
        CorruptionKind::Quantize,
        CorruptionKind::UniformNoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::AdditiveShift => "additive_shift",
            CorruptionKind::ContrastScale => "contrast_scale",
            CorruptionKind::FeatureDropout => "feature_dropout",
            CorruptionKind::GaussNoise => "gauss_noise",
            CorruptionKind::Quantize => "quantize",
            CorruptionKind::UniformNoise => "uniform_noise",
        }
    }

    /// Magnitude at severities 1..=5. Units: fraction of per-feature std for the
    /// noise, shift and quantization step; drop probability for dropout; contrast
    /// reduction `1 - c` for contrast scaling.
    pub fn table(self) -> [f64; 5] {
        match self {
            CorruptionKind::GaussNoise => [0.04, 0.08, 0.12, 0.16, 0.20],
            CorruptionKind::UniformNoise => [0.06, 0.12, 0.18, 0.24, 0.30],
            CorruptionKind::FeatureDropout => [0.05, 0.10, 0.15, 0.20, 0.25],
            CorruptionKind::ContrastScale => [0.1, 0.2, 0.3, 0.4, 0.5],
            CorruptionKind::AdditiveShift => [0.1, 0.2, 0.3, 0.4, 0.5],
            CorruptionKind::Quantize => [0.0625, 0.125, 0.25, 0.5, 1.0],
        }
    }
}

impl std::fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::config(format!("severity must be in 1..=5, got {severity}")));
        }
        Ok(Self { kind, severity })
    }

    pub fn magnitude(&self) -> f64 {
        self.kind.table()[usize::from(self.severity) - 1]
    }
}

fn feature_stats(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty data");
    let std = x.std_axis(Axis(0), 0.0);
    (mean, std)
}

/// Applies `spec` to a copy of `data`. Labels are untouched.
pub fn corrupt(data: &LabeledData, spec: CorruptionSpec, seed: u64) -> Result<LabeledData> {
    corrupt_with_strength(data, spec, seed, 1.0)
}

/// Like [`corrupt`] with every magnitude multiplied by `strength`; `0.0` is the identity.
pub fn corrupt_with_strength(
    data: &LabeledData,
    spec: CorruptionSpec,
    seed: u64,
    strength: f64,
) -> Result<LabeledData> {
    CorruptionSpec::new(spec.kind, spec.severity)?;
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::config("strength must be finite and >= 0"));
    }
    let level = spec.magnitude() * strength;
    let (mean, std) = feature_stats(&data.features);
    let mut rng = rng_from(derive_seed(seed, &[tag(spec.kind.name())]));
    let mut x = data.features.clone();
    let d = x.ncols();

    match spec.kind {
        CorruptionKind::GaussNoise => {
            for mut row in x.rows_mut() {
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    row[j] += level * std[j] * z;
                }
            }
        }
        CorruptionKind::UniformNoise => {
            for mut row in x.rows_mut() {
                for j in 0..d {
                    let u: f64 = rng.random_range(-1.0..1.0);
                    row[j] += level * std[j] * u;
                }
            }
        }
        CorruptionKind::FeatureDropout => {
            for v in x.iter_mut() {
                let u: f64 = rng.random();
                if u < level {
                    *v = 0.0;
                }
            }
        }
        CorruptionKind::ContrastScale => {
            for mut row in x.rows_mut() {
                for j in 0..d {
                    row[j] -= level * (row[j] - mean[j]);
                }
            }
        }
        CorruptionKind::AdditiveShift => {
            let signs: Vec<f64> = (0..d)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            for mut row in x.rows_mut() {
                for j in 0..d {
                    row[j] += level * std[j] * signs[j];
                }
            }
        }
        CorruptionKind::Quantize => {
            for mut row in x.rows_mut() {
                for j in 0..d {
                    let step = level * std[j];
                    if step > 0.0 {
                        row[j] = mean[j] + ((row[j] - mean[j]) / step).round() * step;
                    }
                }
            }
        }
    }
    LabeledData::new(x, data.labels.clone(), data.num_classes)
}

/// All 6 x 5 corrupted copies, ordered by corruption name then ascending severity.
pub fn ood_suite(data: &LabeledData, seed: u64) -> Result<Vec<(CorruptionSpec, LabeledData)>> {
    ood_suite_with_strength(data, seed, 1.0)
}

pub fn ood_suite_with_strength(
    data: &LabeledData,
    seed: u64,
    strength: f64,
) -> Result<Vec<(CorruptionSpec, LabeledData)>> {
    let mut out = Vec::with_capacity(CorruptionKind::ALL.len() * SEVERITIES.len());
    for kind in CorruptionKind::ALL {
        for severity in SEVERITIES {
            let spec = CorruptionSpec::new(kind, severity)?;
            out.push((spec, corrupt_with_strength(data, spec, seed, strength)?));
        }
    }
    Ok(out)
}

/// Mean over samples of the Euclidean distance between corresponding rows.
pub fn mean_displacement(a: &LabeledData, b: &LabeledData) -> f64 {
    let total: f64 = a
        .features
        .rows()
        .into_iter()
        .zip(b.features.rows())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .sum();
    total / a.len() as f64
}
