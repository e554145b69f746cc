//! The vertex CNN: stacked convolution/ReLU/pool blocks plus the dense head.

use alloc::vec::Vec;

use ndarray::{Array1, Array2};

use crate::hierarchy::MeshHierarchy;
use crate::nn::conv::{conv_backward, conv_forward};
use crate::nn::dense::{
    head_backward, head_forward, relu_grad_values, relu_values, ce_sum, FcParams, HeadCache,
};
use crate::nn::params::{conv_bias_name, conv_weight_name, ModelSpec, NamedArrays};
use crate::nn::pool::{pool_backward, pool_forward, PoolCache, PoolMap};
use crate::nn::signal::{Signal, Stack};
use crate::nn::NnError;
use crate::ordering::{build_gather_table, GatherTable};
use crate::Scalar;

/// Distinguishes checkpointed model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Vertex,
    Chebyshev,
}

impl core::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ModelKind::Vertex => write!(f, "vertex"),
            ModelKind::Chebyshev => write!(f, "chebyshev"),
        }
    }
}

/// A trainable classifier over stacked mesh signals.
///
/// `ce_sum_and_grads` returns the *summed* cross-entropy over the stack and
/// its gradients; the trainer scales to a mean and adds the ridge penalty,
/// which keeps chunked (threaded) gradient reduction exact.
pub trait MeshModel<T: Scalar> {
    fn kind(&self) -> ModelKind;
    fn params(&self) -> &NamedArrays<T>;
    fn params_mut(&mut self) -> &mut NamedArrays<T>;
    fn input_level(&self) -> usize;
    fn in_channels(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// Row-stochastic class probabilities, one row per sample.
    fn forward_probs(&self, stack: &Stack<T>) -> Result<Array2<T>, NnError>;
    fn ce_sum_and_grads(&self, stack: &Stack<T>, labels: &[usize])
        -> Result<(T, NamedArrays<T>), NnError>;

    /// `fc_l2 * ||fc.weights||^2`.
    fn fc_penalty(&self, fc_l2: T) -> T {
        let w = self.params().get("fc.weights").expect("models carry fc.weights");
        w.data.iter().fold(T::zero(), |acc, &x| acc + x * x) * fc_l2
    }

    /// Adds `2 * fc_l2 * fc.weights` to the matching gradient array.
    fn add_fc_penalty_grad(&self, fc_l2: T, grads: &mut NamedArrays<T>) {
        let two = T::from_f64(2.0);
        let w = self.params().get("fc.weights").expect("models carry fc.weights");
        let g = grads.get_mut("fc.weights").expect("gradients mirror parameters");
        for (gi, &wi) in g.data.iter_mut().zip(&w.data) {
            *gi += two * fc_l2 * wi;
        }
    }
}

/// Per-block activations cached by the forward pass.
struct BlockCache<T> {
    conv_in: Array2<T>,
    relu_in: Array2<T>,
    pool: PoolCache,
}

pub(crate) struct ForwardCache<T> {
    blocks: Vec<BlockCache<T>>,
    features: Array2<T>,
    head: HeadCache<T>,
}

/// Shape trace of one forward pass, coarsest block last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTrace {
    /// `(vertices, channels)` of each block's convolution output.
    pub conv_outputs: Vec<(usize, usize)>,
    /// `(vertices, channels)` after each block's pooling.
    pub pooled_outputs: Vec<(usize, usize)>,
    /// Length of the flattened feature vector.
    pub feature_len: usize,
}

/// The vertex-domain CNN of ring-convolution blocks and a softmax head.
pub struct VertexCnn<'h, T> {
    spec: ModelSpec,
    hier: &'h MeshHierarchy,
    tables: Vec<GatherTable>,
    pools: Vec<PoolMap>,
    params: NamedArrays<T>,
}

impl<'h, T: Scalar> VertexCnn<'h, T> {
    /// Builds gather tables and pool maps for every block level.
    pub fn new(
        spec: ModelSpec,
        hier: &'h MeshHierarchy,
        params: NamedArrays<T>,
    ) -> Result<Self, NnError> {
        spec.validate(hier)?;
        let mut tables = Vec::with_capacity(spec.blocks.len());
        let mut pools = Vec::with_capacity(spec.blocks.len());
        for (b, block) in spec.blocks.iter().enumerate() {
            let level = spec.level_before_block(b);
            tables.push(build_gather_table(hier.level(level), block.ring)?);
            pools.push(PoolMap::build(hier, level - block.pool_stride / 2, block.pool_stride)?);
        }
        let model = Self { spec, hier, tables, pools, params };
        model.check_param_shapes()?;
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn hier(&self) -> &'h MeshHierarchy {
        self.hier
    }

    pub fn tables(&self) -> &[GatherTable] {
        &self.tables
    }

    fn check_param_shapes(&self) -> Result<(), NnError> {
        let mut c_in = self.spec.in_channels;
        for (b, block) in self.spec.blocks.iter().enumerate() {
            let w = self
                .params
                .get(&conv_weight_name(b))
                .ok_or(NnError::ShapeMismatch { context: "missing conv weights" })?;
            let expected = [self.tables[b].support_size(), c_in, block.filters];
            if w.shape != expected {
                return Err(NnError::ShapeMismatch { context: "conv weight shape" });
            }
            let bias = self
                .params
                .get(&conv_bias_name(b))
                .ok_or(NnError::ShapeMismatch { context: "missing conv bias" })?;
            if bias.shape != [block.filters] {
                return Err(NnError::ShapeMismatch { context: "conv bias shape" });
            }
            c_in = block.filters;
        }
        let f = self.spec.feature_len(self.hier);
        for (name, shape) in [
            ("fc.weights", alloc::vec![f, self.spec.fc_nodes]),
            ("fc.bias", alloc::vec![self.spec.fc_nodes]),
            ("out.weights", alloc::vec![self.spec.fc_nodes, self.spec.n_classes]),
            ("out.bias", alloc::vec![self.spec.n_classes]),
        ] {
            let a = self
                .params
                .get(name)
                .ok_or(NnError::ShapeMismatch { context: "missing head parameters" })?;
            if a.shape != shape {
                return Err(NnError::ShapeMismatch { context: "head parameter shape" });
            }
        }
        Ok(())
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

    fn check_stack(&self, stack: &Stack<T>) -> Result<(), NnError> {
        if stack.level != self.spec.input_level {
            return Err(NnError::LevelMismatch {
                expected: self.spec.input_level,
                found: stack.level,
            });
        }
        let n = self.hier.level(self.spec.input_level).n_vertices();
        if stack.n_per_sample != n
            || stack.n_channels() != self.spec.in_channels
            || stack.batch == 0
        {
            return Err(NnError::ShapeMismatch { context: "model input stack" });
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, stack: &Stack<T>)
        -> Result<ForwardCache<T>, NnError>
    {
        self.check_stack(stack)?;
        let batch = stack.batch;
        let mut x = stack.values.clone();
        let mut blocks = Vec::with_capacity(self.spec.blocks.len());
        for (b, block) in self.spec.blocks.iter().enumerate() {
            let n = self.hier.level(self.spec.level_before_block(b)).n_vertices();
            let w = self.params.get(&conv_weight_name(b)).unwrap().view3();
            let bias = self.params.get(&conv_bias_name(b)).unwrap().view1();
            let conv_in = x;
            let relu_in = conv_forward(&conv_in.view(), batch, n, &self.tables[b], &w, &bias);
            let pool_in = relu_values(&relu_in);
            let (pooled, pool) =
                pool_forward(&pool_in.view(), batch, &self.pools[b], block.pool);
            blocks.push(BlockCache { conv_in, relu_in, pool });
            x = pooled;
        }
        let feature_len = self.spec.feature_len(self.hier);
        let features = x.into_shape((batch, feature_len)).expect("contiguous features");
        let head = head_forward(&features.view(), &self.head_params());
        Ok(ForwardCache { blocks, features, head })
    }

    /// Reverse-mode pass: gradients of the summed CE w.r.t. every parameter
    /// array, plus the gradient w.r.t. the stacked input.
    fn backward(&self, stack: &Stack<T>, labels: &[usize], cache: &ForwardCache<T>)
        -> Result<(NamedArrays<T>, Array2<T>), NnError>
    {
        let batch = stack.batch;
        let mut grads = self.params.zeros_like();
        let head_grads =
            head_backward(&cache.features.view(), &self.head_params(), &cache.head, labels);
        grads.get_mut("fc.weights").unwrap().data.copy_from_slice(
            head_grads.fc_weights.as_slice().expect("standard layout"),
        );
        grads
            .get_mut("fc.bias")
            .unwrap()
            .data
            .copy_from_slice(head_grads.fc_bias.as_slice().unwrap());
        grads.get_mut("out.weights").unwrap().data.copy_from_slice(
            head_grads.out_weights.as_slice().unwrap(),
        );
        grads
            .get_mut("out.bias")
            .unwrap()
            .data
            .copy_from_slice(head_grads.out_bias.as_slice().unwrap());

        let out_level = self.spec.output_level();
        let out_n = self.hier.level(out_level).n_vertices();
        let out_c = self.spec.blocks.last().unwrap().filters;
        let mut upstream = head_grads
            .features
            .into_shape((batch * out_n, out_c))
            .expect("contiguous feature gradient");

        for (b, block) in self.spec.blocks.iter().enumerate().rev() {
            let cacheb = &cache.blocks[b];
            let n = self.hier.level(self.spec.level_before_block(b)).n_vertices();
            let grad_pool_in =
                pool_backward(&upstream.view(), batch, &self.pools[b], block.pool, &cacheb.pool);
            let grad_relu_in = relu_grad_values(&grad_pool_in, &cacheb.relu_in);
            let w = self.params.get(&conv_weight_name(b)).unwrap().view3();
            let conv_grads = conv_backward(
                &grad_relu_in.view(),
                &cacheb.conv_in.view(),
                batch,
                n,
                &self.tables[b],
                &w,
            );
            grads.get_mut(&conv_weight_name(b)).unwrap().data.copy_from_slice(
                conv_grads.weights.as_slice().expect("standard layout"),
            );
            grads
                .get_mut(&conv_bias_name(b))
                .unwrap()
                .data
                .copy_from_slice(conv_grads.bias.as_slice().unwrap());
            upstream = conv_grads.input;
        }
        Ok((grads, upstream))
    }

    /// Like `ce_sum_and_grads` but also returns the input gradient
    /// (used by the gradient checker).
    pub(crate) fn ce_sum_grads_and_input_grad(
        &self,
        stack: &Stack<T>,
        labels: &[usize],
    ) -> Result<(T, NamedArrays<T>, Array2<T>), NnError> {
        let cache = self.forward_cached(stack)?;
        let loss = ce_sum(&cache.head.probs, labels);
        let (grads, input_grad) = self.backward(stack, labels, &cache)?;
        Ok((loss, grads, input_grad))
    }

    /// Shape trace of a forward pass on this hierarchy, for inspection.
    pub fn shape_trace(&self) -> ShapeTrace {
        let conv_outputs = self
            .spec
            .blocks
            .iter()
            .enumerate()
            .map(|(b, block)| {
                (self.hier.level(self.spec.level_before_block(b)).n_vertices(), block.filters)
            })
            .collect();
        let pooled_outputs = self
            .spec
            .blocks
            .iter()
            .enumerate()
            .map(|(b, block)| {
                (self.hier.level(self.spec.level_before_block(b + 1)).n_vertices(), block.filters)
            })
            .collect();
        ShapeTrace {
            conv_outputs,
            pooled_outputs,
            feature_len: self.spec.feature_len(self.hier),
        }
    }
}

impl<'h, T: Scalar> MeshModel<T> for VertexCnn<'h, T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Vertex
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
        Ok(self.forward_cached(stack)?.head.probs)
    }

    fn ce_sum_and_grads(
        &self,
        stack: &Stack<T>,
        labels: &[usize],
    ) -> Result<(T, NamedArrays<T>), NnError> {
        if labels.len() != stack.batch || labels.iter().any(|&l| l >= self.spec.n_classes) {
            return Err(NnError::ShapeMismatch { context: "model labels" });
        }
        let cache = self.forward_cached(stack)?;
        let loss = ce_sum(&cache.head.probs, labels);
        let (grads, _) = self.backward(stack, labels, &cache)?;
        Ok((loss, grads))
    }
}

/// One forward pass of the block architecture on a single signal.
///
/// Returns the class probabilities and the shape trace of the pass. This is
/// the inference entry point; training uses the batched path internally.
pub fn model_forward<T: Scalar>(
    spec: &ModelSpec,
    params: &NamedArrays<T>,
    hier: &MeshHierarchy,
    input: &Signal<T>,
) -> Result<(Array1<T>, ShapeTrace), NnError> {
    let model = VertexCnn::new(spec.clone(), hier, params.clone())?;
    let stack = Stack::single(input);
    let probs = model.forward_probs(&stack)?;
    Ok((probs.row(0).to_owned(), model.shape_trace()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::icosphere;
    use crate::nn::params::init_params;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_give_uniform_probabilities() {
        let hier = icosphere(2);
        let spec = ModelSpec {
            blocks: ModelSpec::four_block(2, 1, 2).blocks[..2].to_vec(),
            ..ModelSpec::four_block(2, 1, 2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = init_params::<f64>(&spec, &hier, &mut rng).unwrap();
        let zeros = params.zeros_like();
        let input = Signal::constant(2, 162, 0.3);
        let (probs, trace) = model_forward(&spec, &zeros, &hier, &input).unwrap();
        assert!((probs[0] - 0.5).abs() < 1e-15);
        assert!((probs[1] - 0.5).abs() < 1e-15);
        assert_eq!(trace.conv_outputs, vec![(162, 8), (42, 16)]);
        assert_eq!(trace.pooled_outputs, vec![(42, 8), (12, 16)]);
        assert_eq!(trace.feature_len, 12 * 16);
    }

    #[test]
    fn default_architecture_shape_trace_on_level_four() {
        let hier = icosphere(4);
        let spec = ModelSpec::four_block(4, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = init_params::<f64>(&spec, &hier, &mut rng).unwrap();
        let model = VertexCnn::new(spec, &hier, params).unwrap();
        let trace = model.shape_trace();
        assert_eq!(trace.conv_outputs, vec![(2562, 8), (642, 16), (162, 32), (42, 64)]);
        assert_eq!(trace.pooled_outputs, vec![(642, 8), (162, 16), (42, 32), (12, 64)]);
        assert_eq!(trace.feature_len, 768);
    }

    #[test]
    fn batch_order_does_not_change_summed_loss() {
        let hier = icosphere(2);
        let spec = ModelSpec {
            blocks: ModelSpec::four_block(2, 1, 2).blocks[..2].to_vec(),
            fc_nodes: 16,
            ..ModelSpec::four_block(2, 1, 2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = init_params::<f64>(&spec, &hier, &mut rng).unwrap();
        let model = VertexCnn::new(spec, &hier, params).unwrap();
        let mk = |seed: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> =
                (0..162).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect();
            Signal::from_vec(2, 162, 1, data).unwrap()
        };
        let (a, b) = (mk(10), mk(11));
        let s1 = Stack::from_signals(&[&a, &b]).unwrap();
        let s2 = Stack::from_signals(&[&b, &a]).unwrap();
        let (l1, _) = model.ce_sum_and_grads(&s1, &[0, 1]).unwrap();
        let (l2, _) = model.ce_sum_and_grads(&s2, &[1, 0]).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
    }

    #[test]
    fn wrong_level_input_is_rejected() {
        let hier = icosphere(2);
        let spec = ModelSpec {
            blocks: ModelSpec::four_block(2, 1, 2).blocks[..1].to_vec(),
            ..ModelSpec::four_block(2, 1, 2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = init_params::<f64>(&spec, &hier, &mut rng).unwrap();
        let model = VertexCnn::new(spec, &hier, params).unwrap();
        let input = Signal::constant(1, 42, 1.0);
        assert!(matches!(
            model.forward_probs(&Stack::single(&input)).unwrap_err(),
            NnError::LevelMismatch { .. }
        ));
    }
}
