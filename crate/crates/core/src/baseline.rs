//! Spectral graph-CNN comparator: normalized graph Laplacian and Chebyshev
//! polynomial convolution.
//!
//! The filter is a degree-K polynomial in the rescaled Laplacian
//! `Lt = 2 L / lambda_max - I`, evaluated with the recurrence
//! `T_k = 2 Lt T_(k-1) - T_(k-2)`, `T_0 = I`, `T_1 = Lt`. Pooling and the
//! dense head are shared with the vertex CNN, which isolates the convolution
//! comparison (the coarsening scheme of the original spectral approach is a
//! non-goal here).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hierarchy::MeshHierarchy;
use crate::mesh::SemiRegularMesh;
use crate::nn::{
    dense_head_backward, dense_head_forward, relu_grad_values, relu_values, softmax_ce_sum,
    FcParams, HeadCache, MeshModel, ModelKind, NamedArray, NamedArrays, NnError, PoolCache,
    PoolMap, PoolMode, Signal, Stack,
};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineError {
    /// The mesh graph is not connected (or has fewer than two vertices).
    DisconnectedGraph,
}

impl fmt::Display for BaselineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineError::DisconnectedGraph => write!(f, "graph is not connected"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for BaselineError {}

/// Symmetric normalized graph Laplacian `L = I - D^(-1/2) A D^(-1/2)` in
/// coordinate form, with a power-method estimate of its largest eigenvalue.
#[derive(Debug, Clone)]
pub struct SparseLaplacian<T> {
    n: usize,
    rows: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<T>,
    /// Entries of the rescaled operator `2 L / lambda_max - I`.
    scaled_vals: Vec<T>,
    lambda_max: f64,
}

impl<T: Scalar> SparseLaplacian<T> {
    /// Builds the Laplacian of an arbitrary undirected graph given as
    /// per-vertex neighbor lists.
    pub fn from_adjacency(adjacency: &[Vec<usize>]) -> Result<Self, BaselineError> {
        let n = adjacency.len();
        if n < 2 || !is_connected(adjacency) {
            return Err(BaselineError::DisconnectedGraph);
        }
        let degree: Vec<f64> = adjacency.iter().map(|a| a.len() as f64).collect();

        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut vals_f64 = Vec::new();
        for i in 0..n {
            rows.push(i as u32);
            cols.push(i as u32);
            vals_f64.push(1.0);
            let mut neighbors = adjacency[i].clone();
            neighbors.sort_unstable();
            for j in neighbors {
                rows.push(i as u32);
                cols.push(j as u32);
                vals_f64.push(-1.0 / (degree[i] * degree[j]).sqrt());
            }
        }

        let lambda_max = estimate_lambda_max(n, &rows, &cols, &vals_f64, &degree);
        // Rescaled operator: scale every entry by 2 / lambda, then shift the
        // diagonal by -1.
        let scale = 2.0 / lambda_max;
        let scaled_f64: Vec<f64> = rows
            .iter()
            .zip(&cols)
            .zip(&vals_f64)
            .map(|((&r, &c), &v)| if r == c { v * scale - 1.0 } else { v * scale })
            .collect();
        Ok(Self {
            n,
            rows,
            cols,
            vals: vals_f64.iter().map(|&v| T::from_f64(v)).collect(),
            scaled_vals: scaled_f64.iter().map(|&v| T::from_f64(v)).collect(),
            lambda_max,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    /// Coordinate entries `(row, col, value)` of `L`, row-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r as usize, c as usize, v))
    }

    pub fn lambda_max_estimate(&self) -> f64 {
        self.lambda_max
    }

    /// `out = L x` (block-diagonal over stacked samples).
    pub fn apply(&self, x: &ArrayView2<'_, T>, batch: usize) -> Array2<T> {
        self.apply_vals(&self.vals, x, batch)
    }

    /// `out = (2 L / lambda_max - I) x` over stacked samples.
    pub(crate) fn apply_scaled(&self, x: &ArrayView2<'_, T>, batch: usize) -> Array2<T> {
        self.apply_vals(&self.scaled_vals, x, batch)
    }

    fn apply_vals(&self, vals: &[T], x: &ArrayView2<'_, T>, batch: usize) -> Array2<T> {
        let c = x.ncols();
        let xs = x.as_slice().expect("standard layout");
        let mut out = vec![T::zero(); batch * self.n * c];
        for b in 0..batch {
            let base = b * self.n;
            for ((&r, &cidx), &v) in self.rows.iter().zip(&self.cols).zip(vals) {
                let dst = (base + r as usize) * c;
                let src = (base + cidx as usize) * c;
                for cc in 0..c {
                    out[dst + cc] += v * xs[src + cc];
                }
            }
        }
        Array2::from_shape_vec((batch * self.n, c), out).expect("spmm shape")
    }
}

fn is_connected(adjacency: &[Vec<usize>]) -> bool {
    let n = adjacency.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adjacency[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == n
}

/// Power-method estimate of `lambda_max(L)`, run on the shifted operator
/// `B = L - I` whose spectrum lies in `[-1, 1]`.
///
/// The known kernel eigenvector of `L` (`D^(1/2) 1`, eigenvalue -1 of `B`)
/// is deflated out of the iteration; the returned `1 + |mu|` therefore never
/// undershoots the true maximum, which keeps the rescaled spectrum inside
/// `[-1, 1]`.
fn estimate_lambda_max(
    n: usize,
    rows: &[u32],
    cols: &[u32],
    vals: &[f64],
    degree: &[f64],
) -> f64 {
    let apply_b = |x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for ((&r, &c), &v) in rows.iter().zip(cols).zip(vals) {
            out[r as usize] += v * x[c as usize];
        }
        for i in 0..n {
            out[i] -= x[i];
        }
    };
    let mut kernel: Vec<f64> = degree.iter().map(|&d| d.sqrt()).collect();
    normalize_in_place(&mut kernel);

    let mut rng = ChaCha8Rng::seed_from_u64(0x6C61_6D62_6461);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    deflate(&mut v, &kernel);
    normalize_in_place(&mut v);
    let mut w = vec![0.0f64; n];
    for _ in 0..100 {
        apply_b(&v, &mut w);
        deflate(&mut w, &kernel);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            break;
        }
        for i in 0..n {
            v[i] = w[i] / norm;
        }
    }
    apply_b(&v, &mut w);
    let mu: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
    (1.0 + mu.abs()).min(2.0)
}

fn normalize_in_place(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
}

fn deflate(x: &mut [f64], unit: &[f64]) {
    let proj: f64 = x.iter().zip(unit).map(|(a, b)| a * b).sum();
    for (xi, ui) in x.iter_mut().zip(unit) {
        *xi -= proj * ui;
    }
}

/// Laplacian of a mesh's vertex graph (unweighted 1-ring adjacency).
pub fn graph_laplacian<T: Scalar>(
    mesh: &SemiRegularMesh,
) -> Result<SparseLaplacian<T>, BaselineError> {
    let adjacency: Vec<Vec<usize>> =
        (0..mesh.n_vertices()).map(|i| mesh.neighbors(i).to_vec()).collect();
    SparseLaplacian::from_adjacency(&adjacency)
}

pub(crate) struct ChebCache<T> {
    /// `zs[k] = T_k(Lt) x`, one array per polynomial order.
    pub zs: Vec<Array2<T>>,
}

/// Forward recurrence: returns the convolution output and the cached
/// polynomial terms.
pub(crate) fn cheb_forward<T: Scalar>(
    values: &ArrayView2<'_, T>,
    batch: usize,
    lap: &SparseLaplacian<T>,
    theta: &ArrayView3<'_, T>,
) -> (Array2<T>, ChebCache<T>) {
    let (orders, c_in, c_out) = theta.dim();
    debug_assert_eq!(values.ncols(), c_in);
    let mut zs: Vec<Array2<T>> = Vec::with_capacity(orders);
    zs.push(values.to_owned());
    if orders > 1 {
        zs.push(lap.apply_scaled(values, batch));
    }
    for k in 2..orders {
        let next = {
            let two = T::from_f64(2.0);
            let mut t = lap.apply_scaled(&zs[k - 1].view(), batch);
            t.mapv_inplace(|x| x * two);
            t - &zs[k - 2]
        };
        zs.push(next);
    }
    let mut out = Array2::zeros((values.nrows(), c_out));
    for (k, z) in zs.iter().enumerate() {
        out = out + z.dot(&theta.slice(ndarray::s![k, .., ..]));
    }
    (out, ChebCache { zs })
}

pub(crate) struct ChebGrads<T> {
    pub input: Array2<T>,
    pub theta: Array3<T>,
}

/// Reverse pass through the recurrence.
///
/// `grad_theta[k] = Z_k^T g`; the input gradient walks the recurrence
/// backwards using the symmetry of the rescaled Laplacian.
pub(crate) fn cheb_backward<T: Scalar>(
    grad_out: &ArrayView2<'_, T>,
    batch: usize,
    lap: &SparseLaplacian<T>,
    theta: &ArrayView3<'_, T>,
    cache: &ChebCache<T>,
) -> ChebGrads<T> {
    let (orders, c_in, c_out) = theta.dim();
    let mut grad_theta = Array3::zeros((orders, c_in, c_out));
    let mut gz: Vec<Array2<T>> = Vec::with_capacity(orders);
    for k in 0..orders {
        grad_theta
            .slice_mut(ndarray::s![k, .., ..])
            .assign(&cache.zs[k].t().dot(grad_out));
        gz.push(grad_out.dot(&theta.slice(ndarray::s![k, .., ..]).t()));
    }
    let two = T::from_f64(2.0);
    for k in (2..orders).rev() {
        let mut propagated = lap.apply_scaled(&gz[k].view(), batch);
        propagated.mapv_inplace(|x| x * two);
        let updated = &gz[k - 1] + &propagated;
        gz[k - 1] = updated;
        let reduced = &gz[k - 2] - &gz[k];
        gz[k - 2] = reduced;
    }
    let mut grad_input = gz[0].clone();
    if orders > 1 {
        grad_input = grad_input + lap.apply_scaled(&gz[1].view(), batch);
    }
    ChebGrads { input: grad_input, theta: grad_theta }
}

/// Chebyshev convolution `sum_k T_k(Lt) x theta_k` of a single signal.
pub fn chebyshev_conv<T: Scalar>(
    signal: &Signal<T>,
    lap: &SparseLaplacian<T>,
    theta: &Array3<T>,
) -> Result<Signal<T>, NnError> {
    if lap.n_vertices() != signal.n_vertices() {
        return Err(NnError::LevelMismatch {
            expected: lap.n_vertices(),
            found: signal.n_vertices(),
        });
    }
    if theta.dim().1 != signal.n_channels() || theta.dim().0 == 0 {
        return Err(NnError::ShapeMismatch { context: "chebyshev convolution" });
    }
    let (out, _) = cheb_forward(&signal.values().view(), 1, lap, &theta.view());
    Ok(Signal::from_values(signal.level(), out))
}

/// Gradients of [`chebyshev_conv`] for a given upstream signal.
pub fn chebyshev_conv_grad<T: Scalar>(
    upstream: &Signal<T>,
    input: &Signal<T>,
    lap: &SparseLaplacian<T>,
    theta: &Array3<T>,
) -> Result<(Signal<T>, Array3<T>), NnError> {
    if upstream.n_vertices() != input.n_vertices()
        || upstream.n_channels() != theta.dim().2
        || theta.dim().1 != input.n_channels()
    {
        return Err(NnError::ShapeMismatch { context: "chebyshev gradient" });
    }
    let (_, cache) = cheb_forward(&input.values().view(), 1, lap, &theta.view());
    let grads =
        cheb_backward(&upstream.values().view(), 1, lap, &theta.view(), &cache);
    Ok((Signal::from_values(input.level(), grads.input), grads.theta))
}

/// Architecture of the spectral comparator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChebSpec {
    pub input_level: usize,
    pub in_channels: usize,
    /// Filter counts per block.
    pub layers: Vec<usize>,
    /// Chebyshev polynomial order K (filters use K + 1 coefficients).
    pub order: usize,
    pub pool: PoolMode,
    pub fc_nodes: usize,
    pub n_classes: usize,
    pub fc_relu: bool,
}

impl ChebSpec {
    /// The comparison defaults: three blocks of 8, 16 and 32 filters,
    /// order-3 polynomials, mean pooling, a 128-node dense layer.
    pub fn three_block(input_level: usize, in_channels: usize, n_classes: usize) -> Self {
        Self {
            input_level,
            in_channels,
            layers: vec![8, 16, 32],
            order: 3,
            pool: PoolMode::Mean,
            fc_nodes: 128,
            n_classes,
            fc_relu: true,
        }
    }

    pub fn validate(&self, hier: &MeshHierarchy) -> Result<(), NnError> {
        if self.input_level > hier.depth()
            || self.layers.len() > self.input_level
            || self.layers.is_empty()
            || self.layers.iter().any(|&f| f == 0)
            || self.n_classes < 2
            || self.fc_nodes == 0
            || self.in_channels == 0
        {
            return Err(NnError::ShapeMismatch { context: "chebyshev model spec" });
        }
        Ok(())
    }

    pub fn output_level(&self) -> usize {
        self.input_level - self.layers.len()
    }

    pub fn feature_len(&self, hier: &MeshHierarchy) -> usize {
        hier.level(self.output_level()).n_vertices() * self.layers.last().unwrap()
    }
}

/// Seeded parameter initialization for [`ChebNet`]; mirrors the vertex CNN's
/// uniform fan-scaled scheme.
pub fn init_cheb_params<T: Scalar>(
    spec: &ChebSpec,
    hier: &MeshHierarchy,
    rng: &mut ChaCha8Rng,
) -> Result<NamedArrays<T>, NnError> {
    spec.validate(hier)?;
    let coeffs = spec.order + 1;
    let mut arrays = Vec::new();
    let mut c_in = spec.in_channels;
    for (b, &filters) in spec.layers.iter().enumerate() {
        let mut w = NamedArray::zeros(
            &alloc::format!("block{b}.weights"),
            &[coeffs, c_in, filters],
            true,
        );
        crate::nn::fill_uniform_into(&mut w.data, coeffs * c_in, coeffs * filters, rng);
        arrays.push(w);
        arrays.push(NamedArray::zeros(&alloc::format!("block{b}.bias"), &[filters], false));
        c_in = filters;
    }
    let features = spec.feature_len(hier);
    let mut fc_w = NamedArray::zeros("fc.weights", &[features, spec.fc_nodes], true);
    crate::nn::fill_uniform_into(&mut fc_w.data, features, spec.fc_nodes, rng);
    arrays.push(fc_w);
    arrays.push(NamedArray::zeros("fc.bias", &[spec.fc_nodes], false));
    let mut out_w = NamedArray::zeros("out.weights", &[spec.fc_nodes, spec.n_classes], true);
    crate::nn::fill_uniform_into(&mut out_w.data, spec.fc_nodes, spec.n_classes, rng);
    arrays.push(out_w);
    arrays.push(NamedArray::zeros("out.bias", &[spec.n_classes], false));
    Ok(NamedArrays::new(arrays))
}

struct ChebBlockCache<T> {
    conv_in: Array2<T>,
    cheb: ChebCache<T>,
    relu_in: Array2<T>,
    pool: PoolCache,
}

/// The spectral comparator network: Chebyshev blocks, shared pooling, and
/// the same dense softmax head as the vertex CNN.
pub struct ChebNet<'h, T> {
    spec: ChebSpec,
    hier: &'h MeshHierarchy,
    laps: Vec<SparseLaplacian<T>>,
    pools: Vec<PoolMap>,
    params: NamedArrays<T>,
}

impl<'h, T: Scalar> ChebNet<'h, T> {
    pub fn new(
        spec: ChebSpec,
        hier: &'h MeshHierarchy,
        params: NamedArrays<T>,
    ) -> Result<Self, NnError> {
        spec.validate(hier)?;
        let mut laps = Vec::with_capacity(spec.layers.len());
        let mut pools = Vec::with_capacity(spec.layers.len());
        for b in 0..spec.layers.len() {
            let level = spec.input_level - b;
            let lap = graph_laplacian(hier.level(level))
                .map_err(|_| NnError::ShapeMismatch { context: "disconnected mesh graph" })?;
            laps.push(lap);
            pools.push(PoolMap::build(hier, level - 1, 2)?);
        }
        Ok(Self { spec, hier, laps, pools, params })
    }

    pub fn spec(&self) -> &ChebSpec {
        &self.spec
    }

    fn head_params(&self) -> FcParams<'_, T> {
        FcParams {
            fc_weights: self.params.get("fc.weights").unwrap().view2(),
            fc_bias: self.params.get("fc.bias").unwrap().view1(),
            out_weights: self.params.get("out.weights").unwrap().view2(),
            out_bias: self.params.get("out.bias").unwrap().view1(),
            fc_relu: self.spec.fc_relu,
        }
    }

    fn forward_cached(
        &self,
        stack: &Stack<T>,
    ) -> Result<(Vec<ChebBlockCache<T>>, Array2<T>, HeadCache<T>), NnError> {
        if stack.level != self.spec.input_level {
            return Err(NnError::LevelMismatch {
                expected: self.spec.input_level,
                found: stack.level,
            });
        }
        if stack.n_channels() != self.spec.in_channels || stack.batch == 0 {
            return Err(NnError::ShapeMismatch { context: "chebyshev input stack" });
        }
        let batch = stack.batch;
        let mut x = stack.values.clone();
        let mut blocks = Vec::with_capacity(self.spec.layers.len());
        for b in 0..self.spec.layers.len() {
            let theta = self.params.get(&alloc::format!("block{b}.weights")).unwrap().view3();
            let bias = self.params.get(&alloc::format!("block{b}.bias")).unwrap().view1();
            let conv_in = x;
            let (mut conv_out, cheb) =
                cheb_forward(&conv_in.view(), batch, &self.laps[b], &theta);
            conv_out += &bias;
            let relu_in = conv_out;
            let pooled_in = relu_values(&relu_in);
            let (pooled, pool) =
                crate::nn::pool_forward_values(&pooled_in.view(), batch, &self.pools[b], self.spec.pool);
            blocks.push(ChebBlockCache { conv_in, cheb, relu_in, pool });
            x = pooled;
        }
        let features = x
            .into_shape((batch, self.spec.feature_len(self.hier)))
            .expect("contiguous features");
        let head = dense_head_forward(&features.view(), &self.head_params());
        Ok((blocks, features, head))
    }
}

impl<'h, T: Scalar> MeshModel<T> for ChebNet<'h, T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Chebyshev
    }

    fn params(&self) -> &NamedArrays<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut NamedArrays<T> {
        &mut self.params
    }

    fn input_level(&self) -> usize {
        self.spec.input_level
    }

    fn in_channels(&self) -> usize {
        self.spec.in_channels
    }

    fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    fn forward_probs(&self, stack: &Stack<T>) -> Result<Array2<T>, NnError> {
        Ok(self.forward_cached(stack)?.2.probs)
    }

    fn ce_sum_and_grads(
        &self,
        stack: &Stack<T>,
        labels: &[usize],
    ) -> Result<(T, NamedArrays<T>), NnError> {
        if labels.len() != stack.batch || labels.iter().any(|&l| l >= self.spec.n_classes) {
            return Err(NnError::ShapeMismatch { context: "chebyshev labels" });
        }
        let (blocks, features, head) = self.forward_cached(stack)?;
        let loss = softmax_ce_sum(&head.probs, labels);
        let batch = stack.batch;
        let mut grads = self.params.zeros_like();
        let head_grads =
            dense_head_backward(&features.view(), &self.head_params(), &head, labels);
        grads
            .get_mut("fc.weights")
            .unwrap()
            .data
            .copy_from_slice(head_grads.fc_weights.as_slice().unwrap());
        grads
            .get_mut("fc.bias")
            .unwrap()
            .data
            .copy_from_slice(head_grads.fc_bias.as_slice().unwrap());
        grads
            .get_mut("out.weights")
            .unwrap()
            .data
            .copy_from_slice(head_grads.out_weights.as_slice().unwrap());
        grads
            .get_mut("out.bias")
            .unwrap()
            .data
            .copy_from_slice(head_grads.out_bias.as_slice().unwrap());

        let out_n = self.hier.level(self.spec.output_level()).n_vertices();
        let out_c = *self.spec.layers.last().unwrap();
        let mut upstream = head_grads
            .features
            .into_shape((batch * out_n, out_c))
            .expect("contiguous feature gradient");
        for b in (0..self.spec.layers.len()).rev() {
            let cacheb = &blocks[b];
            let grad_pool_in = crate::nn::pool_backward_values(
                &upstream.view(),
                batch,
                &self.pools[b],
                self.spec.pool,
                &cacheb.pool,
            );
            let grad_relu_in = relu_grad_values(&grad_pool_in, &cacheb.relu_in);
            let theta = self.params.get(&alloc::format!("block{b}.weights")).unwrap().view3();
            let cheb_grads = cheb_backward(
                &grad_relu_in.view(),
                batch,
                &self.laps[b],
                &theta,
                &cacheb.cheb,
            );
            grads
                .get_mut(&alloc::format!("block{b}.weights"))
                .unwrap()
                .data
                .copy_from_slice(cheb_grads.theta.as_slice().unwrap());
            grads
                .get_mut(&alloc::format!("block{b}.bias"))
                .unwrap()
                .data
                .copy_from_slice(grad_relu_in.sum_axis(Axis(0)).as_slice().unwrap());
            upstream = cheb_grads.input;
        }
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::icosphere;
    use crate::mesh::icosahedron;

    fn triangle_graph() -> SparseLaplacian<f64> {
        let adjacency = vec![vec![1, 2], vec![0, 2], vec![0, 1]];
        SparseLaplacian::from_adjacency(&adjacency).unwrap()
    }

    #[test]
    fn complete_graph_k3_has_closed_form() {
        let lap = triangle_graph();
        for (r, c, v) in lap.entries() {
            if r == c {
                assert_eq!(v, 1.0);
            } else {
                assert!((v - (-0.5)).abs() < 1e-15);
            }
        }
        // Eigenvalues are {0, 3/2, 3/2}; the deflated power method finds the
        // non-kernel extreme exactly.
        assert!((lap.lambda_max_estimate() - 1.5).abs() < 1e-10);
    }

    #[test]
    fn kernel_vector_is_annihilated() {
        let hier = icosphere(1);
        let lap: SparseLaplacian<f64> = graph_laplacian(hier.level(1)).unwrap();
        let n = lap.n_vertices();
        // L (D^(1/2) 1) = 0 for the normalized Laplacian of a regular-ish
        // graph; degrees vary here so build the true kernel vector.
        let kernel: Vec<f64> =
            (0..n).map(|i| (hier.level(1).valence(i) as f64).sqrt()).collect();
        let x = Array2::from_shape_vec((n, 1), kernel).unwrap();
        let out = lap.apply(&x.view(), 1);
        for v in out.iter() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn two_vertex_path_has_lambda_two() {
        let adjacency = vec![vec![1], vec![0]];
        let lap: SparseLaplacian<f64> = SparseLaplacian::from_adjacency(&adjacency).unwrap();
        // Eigenvalues {0, 2}.
        assert!((lap.lambda_max_estimate() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let adjacency = vec![vec![1], vec![0], vec![]];
        assert_eq!(
            SparseLaplacian::<f64>::from_adjacency(&adjacency).unwrap_err(),
            BaselineError::DisconnectedGraph
        );
    }

    #[test]
    fn order_zero_with_identity_theta_is_identity() {
        let lap: SparseLaplacian<f64> = graph_laplacian(&icosahedron()).unwrap();
        let mut theta = Array3::zeros((1, 2, 2));
        theta[[0, 0, 0]] = 1.0;
        theta[[0, 1, 1]] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let signal = Signal::from_vec(0, 12, 2, data).unwrap();
        let out = chebyshev_conv(&signal, &lap, &theta).unwrap();
        assert_eq!(out.values(), signal.values());
    }

    /// Dense polynomial-of-matrix oracle: explicitly builds `T_k(Lt)` as a
    /// dense matrix via the recurrence and multiplies.
    fn dense_cheb_oracle(
        lap: &SparseLaplacian<f64>,
        theta: &Array3<f64>,
        x: &Array2<f64>,
    ) -> Array2<f64> {
        let n = lap.n_vertices();
        let scale = 2.0 / lap.lambda_max_estimate();
        let mut lt = Array2::<f64>::zeros((n, n));
        for (r, c, v) in lap.entries() {
            lt[[r, c]] += v * scale;
        }
        for i in 0..n {
            lt[[i, i]] -= 1.0;
        }
        let orders = theta.dim().0;
        let mut tk: Vec<Array2<f64>> = Vec::new();
        tk.push(Array2::eye(n));
        if orders > 1 {
            tk.push(lt.clone());
        }
        for k in 2..orders {
            let next = 2.0 * lt.dot(&tk[k - 1]) - &tk[k - 2];
            tk.push(next);
        }
        let mut out = Array2::zeros((n, theta.dim().2));
        for k in 0..orders {
            out = out + tk[k].dot(x).dot(&theta.slice(ndarray::s![k, .., ..]));
        }
        out
    }

    #[test]
    fn recurrence_matches_dense_oracle() {
        let hier = icosphere(1);
        let lap: SparseLaplacian<f64> = graph_laplacian(hier.level(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let theta = Array3::from_shape_fn((4, 2, 3), |_| rng.gen_range(-1.0..1.0));
        let data: Vec<f64> = (0..42 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let signal = Signal::from_vec(1, 42, 2, data).unwrap();
        let fast = chebyshev_conv(&signal, &lap, &theta).unwrap();
        let dense = dense_cheb_oracle(&lap, &theta, signal.values());
        for (a, b) in fast.values().iter().zip(dense.iter()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn constant_signal_matches_oracle_too() {
        let hier = icosphere(1);
        let lap: SparseLaplacian<f64> = graph_laplacian(hier.level(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let theta = Array3::from_shape_fn((4, 1, 2), |_| rng.gen_range(-1.0..1.0));
        let signal = Signal::constant(1, 42, 1.0);
        let fast = chebyshev_conv(&signal, &lap, &theta).unwrap();
        let dense = dense_cheb_oracle(&lap, &theta, signal.values());
        for (a, b) in fast.values().iter().zip(dense.iter()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn cheb_gradients_match_finite_differences() {
        let hier = icosphere(1);
        let lap: SparseLaplacian<f64> = graph_laplacian(hier.level(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut theta = Array3::from_shape_fn((3, 2, 2), |_| rng.gen_range(-0.8..0.8));
        let projection = Array2::from_shape_fn((42, 2), |_| rng.gen_range(-1.0..1.0));
        let data: Vec<f64> = (0..42 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut signal_values = Array2::from_shape_vec((42, 2), data).unwrap();

        let loss = |sig: &Array2<f64>, th: &Array3<f64>| -> f64 {
            let s = Signal::from_values(1, sig.clone());
            let out = chebyshev_conv(&s, &lap, th).unwrap();
            (out.values() * &projection).sum()
        };

        let upstream = Signal::from_values(1, projection.clone());
        let input = Signal::from_values(1, signal_values.clone());
        let (gi, gt) = chebyshev_conv_grad(&upstream, &input, &lap, &theta).unwrap();

        let step = 1e-6;
        for idx in 0..signal_values.len() {
            let orig = signal_values.as_slice().unwrap()[idx];
            signal_values.as_slice_mut().unwrap()[idx] = orig + step;
            let up = loss(&signal_values, &theta);
            signal_values.as_slice_mut().unwrap()[idx] = orig - step;
            let down = loss(&signal_values, &theta);
            signal_values.as_slice_mut().unwrap()[idx] = orig;
            let fd = (up - down) / (2.0 * step);
            let a = gi.values().as_slice().unwrap()[idx];
            assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1.0) < 1e-6);
        }
        for idx in 0..theta.len() {
            let orig = theta.as_slice().unwrap()[idx];
            theta.as_slice_mut().unwrap()[idx] = orig + step;
            let up = loss(&signal_values, &theta);
            theta.as_slice_mut().unwrap()[idx] = orig - step;
            let down = loss(&signal_values, &theta);
            theta.as_slice_mut().unwrap()[idx] = orig;
            let fd = (up - down) / (2.0 * step);
            let a = gt.as_slice().unwrap()[idx];
            assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1.0) < 1e-6);
        }
    }

    #[test]
    fn chebnet_trains_end_to_end() {
        use crate::data::{gen_synthetic, grouped_kfold, SyntheticTask};
        use crate::nn::{run_fold, FoldSplit, SequentialRunner, TrainConfig};
        let hier = icosphere(2);
        let task = SyntheticTask {
            n_per_class: 6,
            scans_per_subject: 2,
            noise_sigma: 0.05,
            ..Default::default()
        };
        let dataset = gen_synthetic::<f64>(&hier, 2, &task, 55).unwrap();
        let folds = grouped_kfold(&dataset.subject_ids(), 3, 55).unwrap();
        let spec = ChebSpec {
            layers: vec![4, 8],
            fc_nodes: 16,
            ..ChebSpec::three_block(2, 1, 2)
        };
        let params =
            init_cheb_params::<f64>(&spec, &hier, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let model = ChebNet::new(spec, &hier, params).unwrap();
        let config = TrainConfig { epochs: 8, seed: 5, ..Default::default() };
        let outcome = run_fold(
            model,
            &dataset,
            FoldSplit::from_folds(&folds, 0),
            &config,
            &SequentialRunner,
        )
        .unwrap();
        assert!(outcome.history[7].train_loss < outcome.history[0].train_loss);
    }
}
