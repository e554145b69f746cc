//! Vertex-domain convolutional networks on semi-regular triangulated meshes.
//!
//! The crate is organised around the pipeline a mesh signal travels through:
//!
//! - [`mesh`] — triangulated-mesh representation, manifold validation, normals.
//! - [`hierarchy`] — midpoint subdivision, icosphere generation and the
//!   coarse-to-fine mesh hierarchy that drives pooling.
//! - [`ordering`] — tangent-plane neighbor ordering and the per-vertex gather
//!   table that turns ring convolution into a matrix product.
//! - [`nn`] — ring convolution, ReLU, mean/max pooling, a dense softmax head,
//!   reverse-mode gradients, Adam, and the training loop.
//! - [`baseline`] — a minimal spectral comparator: normalized graph Laplacian
//!   plus Chebyshev polynomial convolution.
//! - [`data`] — synthetic labeled signals, subject-grouped k-fold splits and
//!   binary classification metrics.
//!
//! The crate is `no_std`-compatible (with `alloc`); all file formats, the CLI
//! and threading live in the companion `meshcnn` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baseline;
pub mod data;
pub mod geom;
pub mod hierarchy;
pub mod mesh;
pub mod nn;
pub mod ordering;

mod scalar;

pub use scalar::Scalar;
