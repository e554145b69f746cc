//! Ring convolution through the gather table.
//!
//! The forward pass gathers every vertex's ordered support into a
//! `(N, support * C_in)` matrix and multiplies it against the flattened
//! filter bank, which is exactly the per-channel `h^T D` product in matrix
//! form. Sentinel slots contribute zero (zero-padding boundary extension).

use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3};

use crate::nn::signal::Signal;
use crate::nn::NnError;
use crate::ordering::{support_size, GatherTable, SENTINEL};
use crate::Scalar;

/// A bank of k-ring filters: `support_size x C_in x C_out` weights plus a
/// per-output-channel bias. Slot 0 is the center weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilter<T> {
    k: usize,
    weights: Array3<T>,
    bias: Array1<T>,
}

impl<T: Scalar> ConvFilter<T> {
    pub fn new(k: usize, weights: Array3<T>, bias: Array1<T>) -> Result<Self, NnError> {
        if weights.shape()[0] != support_size(k) || weights.shape()[2] != bias.len() {
            return Err(NnError::ShapeMismatch { context: "conv filter construction" });
        }
        Ok(Self { k, weights, bias })
    }

    /// The delta filter: weight 1 at the center slot of the diagonal channel
    /// map, zero elsewhere. Convolving with it reproduces the input.
    pub fn identity(k: usize, channels: usize) -> Self {
        let mut weights = Array3::zeros((support_size(k), channels, channels));
        for c in 0..channels {
            weights[[0, c, c]] = T::one();
        }
        Self { k, weights, bias: Array1::zeros(channels) }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn weights(&self) -> &Array3<T> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<T> {
        &self.bias
    }
}

/// Gathers the support values of every vertex into `(batch * n, s * c)` rows;
/// sentinel slots stay zero.
pub(crate) fn gather<T: Scalar>(
    values: &ArrayView2<'_, T>,
    batch: usize,
    n: usize,
    table: &GatherTable,
) -> Array2<T> {
    let c = values.ncols();
    let s = table.support_size();
    let v = values.as_slice().expect("signals are standard layout");
    let mut g = vec![T::zero(); batch * n * s * c];
    for b in 0..batch {
        let sample_base = b * n;
        for i in 0..n {
            let row = table.row(i);
            let out_base = (sample_base + i) * s * c;
            for (j, &e) in row.iter().enumerate() {
                if e != SENTINEL {
                    let src = (sample_base + e as usize) * c;
                    g[out_base + j * c..out_base + (j + 1) * c]
                        .copy_from_slice(&v[src..src + c]);
                }
            }
        }
    }
    Array2::from_shape_vec((batch * n, s * c), g).expect("gather shape")
}

/// Scatters gradient rows back through the transposed gather.
fn scatter_add<T: Scalar>(
    grad_gathered: &Array2<T>,
    batch: usize,
    n: usize,
    c: usize,
    table: &GatherTable,
) -> Array2<T> {
    let s = table.support_size();
    let gg = grad_gathered.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); batch * n * c];
    for b in 0..batch {
        let sample_base = b * n;
        for i in 0..n {
            let row = table.row(i);
            let in_base = (sample_base + i) * s * c;
            for (j, &e) in row.iter().enumerate() {
                if e != SENTINEL {
                    let dst = (sample_base + e as usize) * c;
                    for cc in 0..c {
                        out[dst + cc] += gg[in_base + j * c + cc];
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((batch * n, c), out).expect("scatter shape")
}

pub(crate) fn conv_forward<T: Scalar>(
    values: &ArrayView2<'_, T>,
    batch: usize,
    n: usize,
    table: &GatherTable,
    weights: &ArrayView3<'_, T>,
    bias: &ArrayView1<'_, T>,
) -> Array2<T> {
    let (s, c_in, c_out) = weights.dim();
    debug_assert_eq!(s, table.support_size());
    let gathered = gather(values, batch, n, table);
    let w2 = weights
        .view()
        .into_shape((s * c_in, c_out))
        .expect("contiguous filter weights");
    let mut out = gathered.dot(&w2);
    out += bias;
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Array2<T>,
    pub weights: Array3<T>,
    pub bias: Array1<T>,
}

pub(crate) fn conv_backward<T: Scalar>(
    grad_out: &ArrayView2<'_, T>,
    input: &ArrayView2<'_, T>,
    batch: usize,
    n: usize,
    table: &GatherTable,
    weights: &ArrayView3<'_, T>,
) -> ConvGrads<T> {
    let (s, c_in, c_out) = weights.dim();
    let gathered = gather(input, batch, n, table);
    let w2 = weights
        .view()
        .into_shape((s * c_in, c_out))
        .expect("contiguous filter weights");

    #[allow(unused_mut)]
    let mut grad_w2 = gathered.t().dot(grad_out);
    #[cfg(feature = "fault-inject")]
    {
        grad_w2.mapv_inplace(|x| x + x);
    }
    let grad_weights = grad_w2.into_shape((s, c_in, c_out)).expect("weight grad shape");
    let grad_bias = grad_out.sum_axis(ndarray::Axis(0));
    let grad_gathered = grad_out.dot(&w2.t());
    let grad_input = scatter_add(&grad_gathered, batch, n, c_in, table);
    ConvGrads { input: grad_input, weights: grad_weights, bias: grad_bias }
}

fn check_conv_shapes<T: Scalar>(
    signal: &Signal<T>,
    filter: &ConvFilter<T>,
    table: &GatherTable,
) -> Result<(), NnError> {
    if table.n_vertices() != signal.n_vertices() {
        // The table was built for a different level's vertex count.
        return Err(NnError::LevelMismatch {
            expected: table.n_vertices(),
            found: signal.n_vertices(),
        });
    }
    if filter.k() != table.k() || filter.in_channels() != signal.n_channels() {
        return Err(NnError::ShapeMismatch { context: "mesh convolution" });
    }
    Ok(())
}

/// Convolves `signal` with `filter` over the supports in `table`.
///
/// `out[i, co] = bias[co] + sum_j sum_ci gathered(i, j, ci) * w[j, ci, co]`,
/// with `gathered(i, j, .) = 0` for sentinel slots.
pub fn mesh_conv<T: Scalar>(
    signal: &Signal<T>,
    filter: &ConvFilter<T>,
    table: &GatherTable,
) -> Result<Signal<T>, NnError> {
    check_conv_shapes(signal, filter, table)?;
    let out = conv_forward(
        &signal.values().view(),
        1,
        signal.n_vertices(),
        table,
        &filter.weights.view(),
        &filter.bias.view(),
    );
    Ok(Signal::from_values(signal.level(), out))
}

/// Reverse-mode gradients of [`mesh_conv`].
///
/// Returns `(grad_input, grad_weights, grad_bias)` for the cached forward
/// input and the given upstream signal.
pub fn mesh_conv_grad<T: Scalar>(
    upstream: &Signal<T>,
    input: &Signal<T>,
    filter: &ConvFilter<T>,
    table: &GatherTable,
) -> Result<(Signal<T>, Array3<T>, Array1<T>), NnError> {
    check_conv_shapes(input, filter, table)?;
    if upstream.n_vertices() != input.n_vertices()
        || upstream.n_channels() != filter.out_channels()
    {
        return Err(NnError::ShapeMismatch { context: "mesh convolution gradient" });
    }
    let grads = conv_backward(
        &upstream.values().view(),
        &input.values().view(),
        1,
        input.n_vertices(),
        table,
        &filter.weights.view(),
    );
    Ok((
        Signal::from_values(input.level(), grads.input),
        grads.weights,
        grads.bias,
    ))
}
