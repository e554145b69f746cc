//! Mini-batch Adam training with grouped cross-validation folds.
//!
//! Per-sample losses and gradients are independent, so a mini-batch can be
//! split into contiguous chunks evaluated in any execution context (a
//! [`BatchRunner`]); the chunk results are reduced in chunk order, which
//! pins the floating-point reduction for a fixed parallelism level. The
//! crate-provided [`SequentialRunner`] keeps everything on one thread; the
//! companion crate adds a threaded runner with identical semantics.

use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{compute_metrics, Dataset, Metrics};
use crate::nn::adam::{adam_step, AdamHyper, AdamState};
use crate::nn::model::MeshModel;
use crate::nn::params::NamedArrays;
use crate::nn::NnError;
use crate::Scalar;

/// Floating-point width of the training stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Single => write!(f, "single"),
            Precision::Double => write!(f, "double"),
        }
    }
}

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Decoupled weight decay on convolution and dense weights.
    pub weight_decay: f64,
    /// Ridge penalty on the fully connected layer's weights.
    pub fc_l2: f64,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Class index treated as positive by the validation metrics.
    pub positive_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 0.05,
            fc_l2: 5e-4,
            epochs: 20,
            seed: 42,
            precision: Precision::Double,
            positive_class: 1,
        }
    }
}

impl TrainConfig {
    fn adam_hyper(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
            weight_decay: self.weight_decay,
        }
    }
}

/// Derives the per-fold RNG seed from the experiment seed.
///
/// Parameter initialization and epoch shuffles for fold `f` all flow from
/// this value, so a fold is reproducible in isolation.
pub fn fold_seed(base: u64, fold: usize) -> u64 {
    base ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1)
}

/// Executes independent chunk closures; implementations may parallelize.
///
/// `run_chunks` must return outputs in chunk order (index `i` holds the
/// result of `ranges[i]`), which keeps gradient reduction deterministic for
/// a fixed chunk count.
pub trait BatchRunner {
    fn parallelism(&self) -> usize;

    fn run_chunks<Out: Send, F>(&self, ranges: &[Range<usize>], f: F) -> Vec<Out>
    where
        F: Fn(Range<usize>) -> Out + Sync;
}

/// Runs every chunk on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct SequentialRunner;

impl BatchRunner for SequentialRunner {
    fn parallelism(&self) -> usize {
        1
    }

    fn run_chunks<Out: Send, F>(&self, ranges: &[Range<usize>], f: F) -> Vec<Out>
    where
        F: Fn(Range<usize>) -> Out + Sync,
    {
        ranges.iter().cloned().map(f).collect()
    }
}

/// Splits `0..total` into at most `chunks` contiguous ranges of near-equal
/// length.
pub(crate) fn chunk_ranges(total: usize, chunks: usize) -> Vec<Range<usize>> {
    let chunks = chunks.max(1).min(total.max(1));
    let base = total / chunks;
    let remainder = total % chunks;
    let mut out = Vec::with_capacity(chunks);
    let mut start = 0;
    for c in 0..chunks {
        let len = base + usize::from(c < remainder);
        if len == 0 {
            continue;
        }
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Train/validation sample indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

impl FoldSplit {
    /// Fold `f` validates on `folds[f]` and trains on the rest, preserving
    /// ascending fold order.
    pub fn from_folds(folds: &[Vec<usize>], fold: usize) -> Self {
        let val = folds[fold].clone();
        let mut train = Vec::new();
        for (i, f) in folds.iter().enumerate() {
            if i != fold {
                train.extend_from_slice(f);
            }
        }
        Self { fold, train, val }
    }
}

/// One epoch's history row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub fold: usize,
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
}

/// Final state of one fold: the parameters and metrics of the epoch with the
/// best validation GMean.
#[derive(Debug, Clone)]
pub struct FoldOutcome<T> {
    pub fold: usize,
    /// Epoch whose parameters were kept (0 when training ran zero epochs).
    pub best_epoch: usize,
    pub best_params: NamedArrays<T>,
    pub best_metrics: Metrics,
    pub history: Vec<EpochRecord>,
}

/// All folds of one cross-validated run.
#[derive(Debug, Clone)]
pub struct CvOutcome<T> {
    pub folds: Vec<FoldOutcome<T>>,
}

impl<T> CvOutcome<T> {
    /// History rows flattened in (fold, epoch) order.
    pub fn history(&self) -> Vec<&EpochRecord> {
        self.folds.iter().flat_map(|f| f.history.iter()).collect()
    }

    pub fn mean_gmean(&self) -> f64 {
        let n = self.folds.len().max(1) as f64;
        self.folds.iter().map(|f| f.best_metrics.gmean).sum::<f64>() / n
    }

    pub fn mean_acc(&self) -> f64 {
        let n = self.folds.len().max(1) as f64;
        self.folds.iter().map(|f| f.best_metrics.acc).sum::<f64>() / n
    }
}

/// Epoch-stepped trainer for one fold.
///
/// `M: Sync` because mini-batch chunks may be evaluated on worker threads.
pub struct Trainer<'a, T: Scalar, M: MeshModel<T>> {
    model: M,
    dataset: &'a Dataset<T>,
    split: FoldSplit,
    config: &'a TrainConfig,
    adam: AdamState<T>,
    rng: ChaCha8Rng,
    epoch: usize,
    best: Option<(usize, NamedArrays<T>, Metrics)>,
}

impl<'a, T: Scalar, M: MeshModel<T> + Sync> Trainer<'a, T, M> {
    /// Validates the split (non-empty, two classes on both sides) and seeds
    /// the epoch shuffler from [`fold_seed`].
    pub fn new(
        model: M,
        dataset: &'a Dataset<T>,
        split: FoldSplit,
        config: &'a TrainConfig,
    ) -> Result<Self, NnError> {
        if config.batch_size == 0 {
            return Err(NnError::ShapeMismatch { context: "batch size" });
        }
        if split.train.is_empty() || split.val.is_empty() {
            return Err(NnError::EmptyFold { fold: split.fold });
        }
        for side in [&split.train, &split.val] {
            let first = dataset.samples[side[0]].label;
            if side.iter().all(|&i| dataset.samples[i].label == first) {
                return Err(NnError::SingleClassFold { fold: split.fold });
            }
        }
        let adam = AdamState::new(model.params());
        let rng = ChaCha8Rng::seed_from_u64(fold_seed(config.seed, split.fold));
        Ok(Self { model, dataset, split, config, adam, rng, epoch: 0, best: None })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    /// Mean objective and an optimizer step per mini-batch, then a
    /// validation pass. Returns the epoch's history row.
    pub fn run_epoch<R: BatchRunner>(&mut self, runner: &R) -> Result<EpochRecord, NnError> {
        self.epoch += 1;
        let mut order = self.split.train.clone();
        // Fisher-Yates, pinned to the fold RNG for reproducibility.
        for i in (1..order.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let fc_l2 = T::from_f64(self.config.fc_l2);
        let hyper = self.config.adam_hyper();
        let mut loss_acc = 0.0f64;
        for batch_indices in order.chunks(self.config.batch_size) {
            let batch = batch_indices.len();
            let ranges = chunk_ranges(batch, runner.parallelism());
            let results: Vec<Result<(T, NamedArrays<T>), NnError>> =
                runner.run_chunks(&ranges, |range| {
                    let (stack, labels) = self.dataset.stack(&batch_indices[range])?;
                    self.model.ce_sum_and_grads(&stack, &labels)
                });
            let mut ce_sum = T::zero();
            let mut grads: Option<NamedArrays<T>> = None;
            for result in results {
                let (chunk_ce, chunk_grads) = result?;
                ce_sum += chunk_ce;
                match &mut grads {
                    None => grads = Some(chunk_grads),
                    Some(g) => g.accumulate(&chunk_grads)?,
                }
            }
            let mut grads = grads.expect("at least one chunk per batch");
            let inv_batch = T::from_f64(1.0 / batch as f64);
            grads.scale(inv_batch);
            self.model.add_fc_penalty_grad(fc_l2, &mut grads);
            let loss = ce_sum * inv_batch + self.model.fc_penalty(fc_l2);
            loss_acc += loss.to_f64() * batch as f64;
            adam_step(self.model.params_mut(), &grads, &mut self.adam, &hyper)?;
        }
        let train_loss = loss_acc / self.split.train.len() as f64;

        let val = self.evaluate(&self.split.val)?;
        let record =
            EpochRecord { fold: self.split.fold, epoch: self.epoch, train_loss, val };
        let improved = match &self.best {
            None => true,
            Some((_, _, best)) => val.gmean > best.gmean,
        };
        if improved {
            self.best = Some((self.epoch, self.model.params().clone(), val));
        }
        Ok(record)
    }

    /// Metrics of the current parameters on the given sample indices.
    pub fn evaluate(&self, indices: &[usize]) -> Result<Metrics, NnError> {
        let preds = self.predict(indices)?;
        let labels: Vec<usize> =
            indices.iter().map(|&i| self.dataset.samples[i].label).collect();
        Ok(compute_metrics(&preds, &labels, self.config.positive_class)?)
    }

    /// Argmax class per sample, evaluated in mini-batches.
    pub fn predict(&self, indices: &[usize]) -> Result<Vec<usize>, NnError> {
        let mut preds = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(self.config.batch_size.max(1)) {
            let (stack, _) = self.dataset.stack(chunk)?;
            let probs = self.model.forward_probs(&stack)?;
            for row in probs.rows() {
                let mut best = 0usize;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                preds.push(best);
            }
        }
        Ok(preds)
    }

    /// Closes the fold: parameters of the best-GMean epoch (or the initial
    /// parameters when no epoch ran, with metrics freshly evaluated).
    pub fn finish(self, history: Vec<EpochRecord>) -> Result<FoldOutcome<T>, NnError> {
        let (best_epoch, best_params, best_metrics) = match self.best {
            Some(b) => b,
            None => {
                let metrics = self.evaluate(&self.split.val)?;
                (0, self.model.params().clone(), metrics)
            }
        };
        Ok(FoldOutcome {
            fold: self.split.fold,
            best_epoch,
            best_params,
            best_metrics,
            history,
        })
    }
}

/// Trains one fold for `config.epochs` epochs.
pub fn run_fold<'a, T, M, R>(
    model: M,
    dataset: &'a Dataset<T>,
    split: FoldSplit,
    config: &'a TrainConfig,
    runner: &R,
) -> Result<FoldOutcome<T>, NnError>
where
    T: Scalar,
    M: MeshModel<T> + Sync,
    R: BatchRunner,
{
    let mut trainer = Trainer::new(model, dataset, split, config)?;
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        history.push(trainer.run_epoch(runner)?);
    }
    trainer.finish(history)
}

/// Cross-validated training: builds a fresh model per fold (seeded by
/// [`fold_seed`]) and trains it on the fold's split.
pub fn train_cv<'a, T, M, R, B>(
    mut build_model: B,
    dataset: &'a Dataset<T>,
    folds: &[Vec<usize>],
    config: &'a TrainConfig,
    runner: &R,
) -> Result<CvOutcome<T>, NnError>
where
    T: Scalar,
    M: MeshModel<T> + Sync,
    R: BatchRunner,
    B: FnMut(usize, u64) -> Result<M, NnError>,
{
    let mut outcomes = Vec::with_capacity(folds.len());
    for fold in 0..folds.len() {
        let model = build_model(fold, fold_seed(config.seed, fold))?;
        let split = FoldSplit::from_folds(folds, fold);
        outcomes.push(run_fold(model, dataset, split, config, runner)?);
    }
    Ok(CvOutcome { folds: outcomes })
}
