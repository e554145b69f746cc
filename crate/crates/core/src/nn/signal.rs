//! Per-vertex signal containers.

use alloc::vec::Vec;

use ndarray::Array2;

use crate::nn::NnError;
use crate::Scalar;

/// An `N x C` array of channel values on the vertices of one hierarchy level.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal<T> {
    level: usize,
    values: Array2<T>,
}

impl<T: Scalar> Signal<T> {
    /// Wraps an array after checking that every value is finite.
    pub fn new(level: usize, values: Array2<T>) -> Result<Self, NnError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite);
        }
        Ok(Self { level, values })
    }

    pub fn from_vec(
        level: usize,
        n_vertices: usize,
        n_channels: usize,
        data: Vec<T>,
    ) -> Result<Self, NnError> {
        let values = Array2::from_shape_vec((n_vertices, n_channels), data)
            .map_err(|_| NnError::ShapeMismatch { context: "signal construction" })?;
        Self::new(level, values)
    }

    /// Constant signal of a single channel.
    pub fn constant(level: usize, n_vertices: usize, value: T) -> Self {
        Self { level, values: Array2::from_elem((n_vertices, 1), value) }
    }

    pub(crate) fn from_values(level: usize, values: Array2<T>) -> Self {
        Self { level, values }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn n_vertices(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<T> {
        &self.values
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }
}

/// A mini-batch of same-shape signals stacked along the vertex axis.
///
/// Row `b * n_per_sample + i` holds vertex `i` of sample `b`; this keeps the
/// batch in one contiguous matrix so convolution and the dense head reduce
/// to single matrix products.
#[derive(Debug, Clone)]
pub struct Stack<T> {
    pub level: usize,
    pub batch: usize,
    pub n_per_sample: usize,
    /// Shape `(batch * n_per_sample, channels)`.
    pub values: Array2<T>,
}

impl<T: Scalar> Stack<T> {
    pub fn from_signals(signals: &[&Signal<T>]) -> Result<Self, NnError> {
        let first = signals.first().ok_or(NnError::ShapeMismatch { context: "empty stack" })?;
        let (level, n, c) = (first.level(), first.n_vertices(), first.n_channels());
        let mut values = Array2::zeros((signals.len() * n, c));
        for (b, s) in signals.iter().enumerate() {
            if s.level() != level {
                return Err(NnError::LevelMismatch { expected: level, found: s.level() });
            }
            if s.n_vertices() != n || s.n_channels() != c {
                return Err(NnError::ShapeMismatch { context: "stacking signals" });
            }
            values.slice_mut(ndarray::s![b * n..(b + 1) * n, ..]).assign(s.values());
        }
        Ok(Self { level, batch: signals.len(), n_per_sample: n, values })
    }

    pub fn single(signal: &Signal<T>) -> Self {
        Self {
            level: signal.level(),
            batch: 1,
            n_per_sample: signal.n_vertices(),
            values: signal.values().clone(),
        }
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }
}
