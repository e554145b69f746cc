//! Synthetic labeled signals, subject-grouped k-fold splits and binary
//! classification metrics.
//!
//! The built-in task is "hemisphere bump": each subject carries a Gaussian
//! bump at a fixed random vertex on the northern (class 0) or southern
//! (class 1) hemisphere, and every scan of that subject adds fresh noise.
//! The bump amplitude is identical for both classes, so a global mean
//! carries no label information; localizing the bump does.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geom;
use crate::hierarchy::MeshHierarchy;
use crate::nn::{NnError, Signal, Stack};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataError {
    /// Requested level does not exist in the hierarchy.
    BadLevel { level: usize, depth: usize },
    /// No vertex satisfies the hemisphere constraint.
    EmptyHemisphere { level: usize },
    /// Task parameters out of range (zero counts, negative widths).
    BadTask(&'static str),
    /// Fewer distinct subjects than folds.
    TooFewSubjects { distinct: usize, k: usize },
    /// `k` must be at least 2.
    InvalidFoldCount { k: usize },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::BadLevel { level, depth } => {
                write!(f, "level {level} out of range for hierarchy of depth {depth}")
            }
            DataError::EmptyHemisphere { level } => {
                write!(f, "no vertex off the equator at level {level}")
            }
            DataError::BadTask(what) => write!(f, "bad task parameter: {what}"),
            DataError::TooFewSubjects { distinct, k } => {
                write!(f, "{distinct} distinct subjects cannot fill {k} folds")
            }
            DataError::InvalidFoldCount { k } => write!(f, "fold count {k} must be >= 2"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for DataError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsError {
    LengthMismatch { predictions: usize, labels: usize },
    /// Sensitivity is undefined without positive samples.
    NoPositives,
    /// Specificity is undefined without negative samples.
    NoNegatives,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::LengthMismatch { predictions, labels } => {
                write!(f, "{predictions} predictions vs {labels} labels")
            }
            MetricsError::NoPositives => write!(f, "no positive samples: sensitivity undefined"),
            MetricsError::NoNegatives => write!(f, "no negative samples: specificity undefined"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MetricsError {}

/// Parameters of the hemisphere-bump generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticTask {
    /// Subjects per class.
    pub n_per_class: usize,
    /// Scans generated per subject (same bump vertex, fresh noise).
    pub scans_per_subject: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sigma: f64,
    pub bump_amplitude: f64,
    /// Angular width of the bump in degrees.
    pub bump_width_deg: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            n_per_class: 10,
            scans_per_subject: 3,
            noise_sigma: 0.1,
            bump_amplitude: 1.0,
            bump_width_deg: 30.0,
        }
    }
}

/// One labeled scan.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub subject_id: String,
    pub label: usize,
    pub signal: Signal<T>,
}

/// A labeled signal collection on one hierarchy level.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub level: usize,
    pub n_channels: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn subject_ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.subject_id.as_str()).collect()
    }

    /// Stacks the selected samples into a batch plus their labels.
    pub fn stack(&self, indices: &[usize]) -> Result<(Stack<T>, Vec<usize>), NnError> {
        let signals: Vec<&Signal<T>> = indices.iter().map(|&i| &self.samples[i].signal).collect();
        let labels = indices.iter().map(|&i| self.samples[i].label).collect();
        Ok((Stack::from_signals(&signals)?, labels))
    }
}

/// Generates the hemisphere-bump dataset at `level` of `hier`.
///
/// Class 0 bumps sit at vertices with `z > 0`, class 1 at `z < 0`. Each
/// subject draws one bump vertex; each of its scans draws fresh noise.
/// Fixed seed, fixed output.
pub fn gen_synthetic<T: Scalar>(
    hier: &MeshHierarchy,
    level: usize,
    task: &SyntheticTask,
    seed: u64,
) -> Result<Dataset<T>, DataError> {
    if level > hier.depth() {
        return Err(DataError::BadLevel { level, depth: hier.depth() });
    }
    if task.n_per_class == 0 || task.scans_per_subject == 0 {
        return Err(DataError::BadTask("subject and scan counts must be positive"));
    }
    if task.noise_sigma < 0.0 || task.bump_width_deg <= 0.0 {
        return Err(DataError::BadTask("noise sigma must be >= 0 and bump width positive"));
    }
    let mesh = hier.level(level);
    let n = mesh.n_vertices();
    let width = task.bump_width_deg.to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f64, task.noise_sigma).expect("sigma checked non-negative");

    let mut samples = Vec::with_capacity(2 * task.n_per_class * task.scans_per_subject);
    for class in 0..2usize {
        let wants_north = class == 0;
        if !mesh.vertices().iter().any(|v| if wants_north { v[2] > 0.0 } else { v[2] < 0.0 }) {
            return Err(DataError::EmptyHemisphere { level });
        }
        for subject in 0..task.n_per_class {
            let center = loop {
                let candidate = rng.gen_range(0..n);
                let z = mesh.vertex(candidate)[2];
                if (wants_north && z > 0.0) || (!wants_north && z < 0.0) {
                    break candidate;
                }
            };
            let center_pos = mesh.vertex(center);
            let subject_id = format!("c{class}s{subject:04}");
            for _scan in 0..task.scans_per_subject {
                let mut data = Vec::with_capacity(n);
                for v in 0..n {
                    let ang = geom::angle_between(mesh.vertex(v), center_pos);
                    let bump = task.bump_amplitude * (-0.5 * (ang / width) * (ang / width)).exp();
                    data.push(T::from_f64(bump + noise.sample(&mut rng)));
                }
                let signal = Signal::from_vec(level, n, 1, data)
                    .expect("generated values are finite");
                samples.push(Sample { subject_id: subject_id.clone(), label: class, signal });
            }
        }
    }
    Ok(Dataset {
        level,
        n_channels: 1,
        class_names: alloc::vec![String::from("north"), String::from("south")],
        samples,
    })
}

/// Splits sample indices into `k` folds with subject-disjoint membership.
///
/// Distinct subjects (in first-appearance order) are shuffled with the seed
/// and dealt into folds whose subject counts differ by at most one.
pub fn grouped_kfold<S: AsRef<str>>(
    subject_of_sample: &[S],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    if k < 2 {
        return Err(DataError::InvalidFoldCount { k });
    }
    let mut subjects: Vec<&str> = Vec::new();
    for s in subject_of_sample {
        let s = s.as_ref();
        if !subjects.contains(&s) {
            subjects.push(s);
        }
    }
    if subjects.len() < k {
        return Err(DataError::TooFewSubjects { distinct: subjects.len(), k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates; rand's shuffle would also do, but an explicit loop keeps
    // the draw sequence pinned for the determinism contract.
    for i in (1..subjects.len()).rev() {
        let j = rng.gen_range(0..=i);
        subjects.swap(i, j);
    }

    let base = subjects.len() / k;
    let remainder = subjects.len() % k;
    let mut fold_of_subject: Vec<(usize, &str)> = Vec::with_capacity(subjects.len());
    let mut cursor = 0usize;
    for fold in 0..k {
        let take = base + usize::from(fold < remainder);
        for _ in 0..take {
            fold_of_subject.push((fold, subjects[cursor]));
            cursor += 1;
        }
    }
    let fold_of = |name: &str| -> usize {
        fold_of_subject.iter().find(|(_, s)| *s == name).expect("subject listed").0
    };
    let mut folds = alloc::vec![Vec::new(); k];
    for (idx, s) in subject_of_sample.iter().enumerate() {
        folds[fold_of(s.as_ref())].push(idx);
    }
    Ok(folds)
}

/// Binary classification metrics with the exact geometric-mean identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    /// `sqrt(sen * spe)`, computed exactly from the stored rates.
    pub gmean: f64,
    /// `confusion[actual is positive][predicted positive]`:
    /// `[[tn, fp], [fn, tp]]`.
    pub confusion: [[usize; 2]; 2],
}

impl Metrics {
    pub fn true_negatives(&self) -> usize {
        self.confusion[0][0]
    }
    pub fn false_positives(&self) -> usize {
        self.confusion[0][1]
    }
    pub fn false_negatives(&self) -> usize {
        self.confusion[1][0]
    }
    pub fn true_positives(&self) -> usize {
        self.confusion[1][1]
    }
}

/// Confusion-matrix metrics for a binary task.
///
/// A sample is positive when its label (or prediction) equals
/// `positive_class`; all other values count as negative.
pub fn compute_metrics(
    predictions: &[usize],
    labels: &[usize],
    positive_class: usize,
) -> Result<Metrics, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut confusion = [[0usize; 2]; 2];
    for (&p, &l) in predictions.iter().zip(labels) {
        let actual = usize::from(l == positive_class);
        let predicted = usize::from(p == positive_class);
        confusion[actual][predicted] += 1;
    }
    let positives = confusion[1][0] + confusion[1][1];
    let negatives = confusion[0][0] + confusion[0][1];
    if positives == 0 {
        return Err(MetricsError::NoPositives);
    }
    if negatives == 0 {
        return Err(MetricsError::NoNegatives);
    }
    let sen = confusion[1][1] as f64 / positives as f64;
    let spe = confusion[0][0] as f64 / negatives as f64;
    let acc = (confusion[1][1] + confusion[0][0]) as f64 / (positives + negatives) as f64;
    Ok(Metrics { acc, sen, spe, gmean: (sen * spe).sqrt(), confusion })
}
