//! Mesh convolution, pooling, the dense softmax head, Adam, and training.
//!
//! Layers come in pairs: a forward function and an explicit reverse-mode
//! gradient. Everything is generic over [`Scalar`](crate::Scalar) (`f64`
//! for testability, `f32` for speed) and operates on dense vertex-major
//! signal arrays. Mini-batches are stacked along the vertex axis so the
//! heavy lifting runs through plain matrix products.

mod adam;
mod conv;
mod dense;
mod gradcheck;
mod model;
mod params;
mod pool;
mod signal;
mod train;

pub use adam::{adam_step, AdamState};
pub use conv::{mesh_conv, mesh_conv_grad, ConvFilter};
pub use dense::{dense_softmax_ce, relu, relu_grad, DenseGrads, FcParams};
pub use gradcheck::{gradcheck, GradcheckGroup, GradcheckReport};
#[doc(hidden)]
pub use gradcheck::{gradcheck_with_fault, Fault};
pub use model::{model_forward, MeshModel, ModelKind, VertexCnn};
pub use params::{init_params, BlockSpec, ModelSpec, NamedArray, NamedArrays, PoolMode};
pub use pool::{mesh_pool, mesh_pool_grad, PoolMap};
pub use signal::{Signal, Stack};
pub use train::{
    fold_seed, run_fold, train_cv, BatchRunner, CvOutcome, EpochRecord, FoldOutcome,
    FoldSplit, Precision, SequentialRunner, TrainConfig, Trainer,
};

// Internals shared with the spectral baseline, which reuses the head,
// activation and pooling machinery verbatim.
pub(crate) use dense::{
    ce_sum as softmax_ce_sum, head_backward as dense_head_backward,
    head_forward as dense_head_forward, relu_grad_values, relu_values, HeadCache,
};
pub(crate) use params::fill_uniform as fill_uniform_into;
pub(crate) use pool::{
    pool_backward as pool_backward_values, pool_forward as pool_forward_values, PoolCache,
};

use core::fmt;

use crate::data::MetricsError;
use crate::hierarchy::HierarchyError;
use crate::ordering::OrderingError;

/// Errors from layer shape checks and the training loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NnError {
    /// Array dimensions do not line up; the context names the operation.
    ShapeMismatch { context: &'static str },
    /// A signal was paired with a structure built for a different level.
    LevelMismatch { expected: usize, found: usize },
    /// A signal contained a NaN or infinity.
    NonFinite,
    /// A cross-validation fold has no training or no validation samples.
    EmptyFold { fold: usize },
    /// A fold's training or validation split contains a single class.
    SingleClassFold { fold: usize },
    Hierarchy(HierarchyError),
    Ordering(OrderingError),
    Metrics(MetricsError),
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::ShapeMismatch { context } => write!(f, "shape mismatch in {context}"),
            NnError::LevelMismatch { expected, found } => {
                write!(f, "level mismatch (expected {expected}, found {found})")
            }
            NnError::NonFinite => write!(f, "signal contains non-finite values"),
            NnError::EmptyFold { fold } => write!(f, "fold {fold} has an empty split"),
            NnError::SingleClassFold { fold } => {
                write!(f, "fold {fold} has a single-class split")
            }
            NnError::Hierarchy(e) => write!(f, "{e}"),
            NnError::Ordering(e) => write!(f, "{e}"),
            NnError::Metrics(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for NnError {}

impl From<HierarchyError> for NnError {
    fn from(e: HierarchyError) -> Self {
        NnError::Hierarchy(e)
    }
}

impl From<OrderingError> for NnError {
    fn from(e: OrderingError) -> Self {
        NnError::Ordering(e)
    }
}

impl From<MetricsError> for NnError {
    fn from(e: MetricsError) -> Self {
        NnError::Metrics(e)
    }
}
