//! Synthetic source/target classification tasks.
//!
//! A target task is the source task pushed through an [`AffineTransform`]: a rotation
//! in the plane of the first two features, a translation and a class relabeling.
//! Train, validation and test splits are drawn from disjoint seed-derived streams.

mod bbdt;
mod corruption;

pub use bbdt::{read_bbdt, write_bbdt, BBDT_MAGIC, BBDT_VERSION};
pub use corruption::{
    corrupt, corrupt_with_strength, mean_displacement, ood_suite, ood_suite_with_strength,
    CorruptionKind, CorruptionSpec, SEVERITIES,
};

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskKind {
    /// Class means drawn once from `N(0, separation^2 I)` using `geometry_seed`.
    GaussianMixture { separation: f64 },
    /// Interleaved spiral arms in the first two features, one arm per class.
    /// Extra features carry only noise.
    Spirals { turns: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AffineTransform {
    /// Radians, applied in the plane of features 0 and 1.
    #[serde(default)]
    pub rotation: f64,
    /// Empty means zero translation.
    #[serde(default)]
    pub translation: Vec<f64>,
    /// `relabel[c]` is the new label of source class `c`.
    #[serde(default)]
    pub relabel: Option<Vec<usize>>,
}

impl AffineTransform {
    pub fn is_identity(&self) -> bool {
        self.rotation == 0.0
            && self.translation.iter().all(|&t| t == 0.0)
            && self
                .relabel
                .as_ref()
                .is_none_or(|p| p.iter().enumerate().all(|(i, &c)| i == c))
    }

    fn validate(&self, input_dim: usize, num_classes: usize) -> Result<()> {
        if !self.rotation.is_finite() {
            return Err(Error::config("rotation must be finite"));
        }
        if !self.translation.is_empty() && self.translation.len() != input_dim {
            return Err(Error::config(format!(
                "translation has {} entries for input_dim {input_dim}",
                self.translation.len()
            )));
        }
        if let Some(perm) = &self.relabel {
            let mut seen = vec![false; num_classes];
            if perm.len() != num_classes {
                return Err(Error::config("relabel must be a permutation of the classes"));
            }
            for &c in perm {
                if c >= num_classes || std::mem::replace(&mut seen[c], true) {
                    return Err(Error::config("relabel must be a permutation of the classes"));
                }
            }
        }
        Ok(())
    }

    fn apply_point(&self, x: &mut [f64]) {
        if self.rotation != 0.0 && x.len() >= 2 {
            let (s, c) = self.rotation.sin_cos();
            let (a, b) = (x[0], x[1]);
            x[0] = c * a - s * b;
            x[1] = s * a + c * b;
        }
        for (v, t) in x.iter_mut().zip(&self.translation) {
            *v += t;
        }
    }

    fn apply_label(&self, y: usize) -> usize {
        self.relabel.as_ref().map_or(y, |p| p[y])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub num_classes: usize,
    pub input_dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub noise_scale: f64,
    #[serde(default)]
    pub transform: Option<AffineTransform>,
    /// Seeds the generative parameters (mixture means). Shared between a source task
    /// and the targets derived from it.
    #[serde(default)]
    pub geometry_seed: u64,
    /// Seeds the samples.
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        if self.input_dim < 2 {
            return Err(Error::config("input_dim must be >= 2"));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::config("split sizes must be positive"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::config("noise_scale must be finite and >= 0"));
        }
        match self.kind {
            TaskKind::GaussianMixture { separation } if !(separation > 0.0) => {
                return Err(Error::config("separation must be > 0"))
            }
            TaskKind::Spirals { turns } if !(turns > 0.0) => {
                return Err(Error::config("turns must be > 0"))
            }
            _ => {}
        }
        if let Some(t) = &self.transform {
            t.validate(self.input_dim, self.num_classes)?;
        }
        Ok(())
    }

    /// Class centers in feature space (before the transform), one row per class.
    pub fn class_means(&self) -> Array2<f64> {
        match self.kind {
            TaskKind::GaussianMixture { separation } => {
                let mut rng = rng_from(derive_seed(self.geometry_seed, &[tag("means")]));
                Array2::from_shape_fn((self.num_classes, self.input_dim), |_| {
                    separation * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                })
            }
            TaskKind::Spirals { .. } => Array2::zeros((self.num_classes, self.input_dim)),
        }
    }
}

/// Features and integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledData {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Empty("dataset has no samples".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::dims(format!(
                "{} feature rows, {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::dims(format!("label {y} >= num_classes {num_classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features contain NaN or infinity".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledData {
        LabeledData {
            features: self.features.select(ndarray::Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplits {
    pub train: LabeledData,
    pub val: LabeledData,
    pub test: LabeledData,
}

fn sample_split(spec: &TaskSpec, means: &Array2<f64>, n: usize, stream: &str) -> LabeledData {
    let mut rng = rng_from(derive_seed(spec.seed, &[tag(stream)]));
    let d = spec.input_dim;
    let k = spec.num_classes;
    let identity = AffineTransform::default();
    let transform = spec.transform.as_ref().unwrap_or(&identity);

    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut point = vec![0.0; d];
    for i in 0..n {
        let class = i % k;
        match spec.kind {
            TaskKind::GaussianMixture { .. } => {
                for (j, p) in point.iter_mut().enumerate() {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    *p = means[[class, j]] + spec.noise_scale * eps;
                }
            }
            TaskKind::Spirals { turns } => {
                let t: f64 = rng.random();
                // sqrt keeps the point density roughly uniform along the arm
                let r = t.sqrt();
                let angle = std::f64::consts::TAU * (turns * r + class as f64 / k as f64);
                point[0] = r * angle.cos();
                point[1] = r * angle.sin();
                point[2..].fill(0.0);
                for p in point.iter_mut() {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    *p += spec.noise_scale * eps;
                }
            }
        }
        transform.apply_point(&mut point);
        features.row_mut(i).iter_mut().zip(&point).for_each(|(f, &p)| *f = p);
        labels.push(transform.apply_label(class));
    }
    LabeledData {
        features,
        labels,
        num_classes: k,
    }
}

/// Draws train/val/test splits. Deterministic in `spec`.
pub fn generate_task(spec: &TaskSpec) -> Result<TaskSplits> {
    spec.validate()?;
    let means = spec.class_means();
    Ok(TaskSplits {
        train: sample_split(spec, &means, spec.n_train, "train"),
        val: sample_split(spec, &means, spec.n_val, "val"),
        test: sample_split(spec, &means, spec.n_test, "test"),
    })
}

/// Splits `data` into training and validation parts in a `1 : k` ratio
/// (validation : training), i.e. `|val| = floor(n / (k + 1))`.
pub fn split_validation(data: &LabeledData, k: usize, seed: u64) -> Result<(LabeledData, LabeledData)> {
    if k == 0 {
        return Err(Error::config("validation ratio must be 1:k with k >= 1"));
    }
    let n = data.len();
    let n_val = n / (k + 1);
    if n_val == 0 {
        return Err(Error::config(format!(
            "{n} samples are too few for a 1:{k} validation split"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(derive_seed(seed, &[tag("split_validation")])));
    let (val_idx, train_idx) = order.split_at(n_val);
    Ok((data.select(train_idx), data.select(val_idx)))
}
