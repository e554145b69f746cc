//! Architecture description and named parameter arrays.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use ndarray::{ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, ArrayViewMut3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::hierarchy::MeshHierarchy;
use crate::nn::NnError;
use crate::ordering::support_size;
use crate::Scalar;

/// Pooling flavor used between blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Mean,
    Max,
}

impl core::fmt::Display for PoolMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PoolMode::Mean => write!(f, "mean"),
            PoolMode::Max => write!(f, "max"),
        }
    }
}

/// One feature-extraction block: ring convolution, ReLU, then pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub filters: usize,
    /// Ring order of the convolution support.
    pub ring: usize,
    pub pool: PoolMode,
    pub pool_stride: usize,
}

/// Architecture of the vertex CNN: feature blocks plus a dense softmax head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    /// Hierarchy level the input signal lives on.
    pub input_level: usize,
    pub in_channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub fc_nodes: usize,
    pub n_classes: usize,
    /// Apply ReLU between the fully connected layer and the softmax layer.
    pub fc_relu: bool,
}

impl ModelSpec {
    /// The default architecture: four 1-ring blocks with 8, 16, 32 and 64
    /// filters, mean pooling with stride 2, and a 512-node dense layer.
    pub fn four_block(input_level: usize, in_channels: usize, n_classes: usize) -> Self {
        Self {
            input_level,
            in_channels,
            blocks: [8, 16, 32, 64]
                .iter()
                .map(|&filters| BlockSpec {
                    filters,
                    ring: 1,
                    pool: PoolMode::Mean,
                    pool_stride: 2,
                })
                .collect(),
            fc_nodes: 512,
            n_classes,
            fc_relu: true,
        }
    }

    /// Checks the block count against the hierarchy depth and the basic
    /// shape constraints.
    pub fn validate(&self, hier: &MeshHierarchy) -> Result<(), NnError> {
        let levels_consumed: usize = self.blocks.iter().map(|b| b.pool_stride / 2).sum();
        if self.input_level > hier.depth()
            || levels_consumed > self.input_level
            || self.blocks.is_empty()
        {
            return Err(NnError::ShapeMismatch { context: "model spec vs hierarchy depth" });
        }
        if self.n_classes < 2 || self.fc_nodes == 0 || self.in_channels == 0 {
            return Err(NnError::ShapeMismatch { context: "model spec head" });
        }
        for b in &self.blocks {
            if b.filters == 0 || b.ring == 0 || !(b.pool_stride == 2 || b.pool_stride == 4) {
                return Err(NnError::ShapeMismatch { context: "model spec block" });
            }
        }
        Ok(())
    }

    /// Level the signal sits on when entering block `b` (0-based).
    pub fn level_before_block(&self, b: usize) -> usize {
        self.input_level
            - self.blocks[..b].iter().map(|blk| blk.pool_stride / 2).sum::<usize>()
    }

    /// Coarsest level reached after all blocks.
    pub fn output_level(&self) -> usize {
        self.level_before_block(self.blocks.len())
    }

    /// Length of the flattened feature vector entering the dense layer
    /// (vertex-major, channel-minor).
    pub fn feature_len(&self, hier: &MeshHierarchy) -> usize {
        hier.level(self.output_level()).n_vertices() * self.blocks.last().unwrap().filters
    }
}

/// A parameter or gradient array with a stable name and shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Whether decoupled weight decay applies (weights yes, biases no).
    pub decay: bool,
}

impl<T: Scalar> NamedArray<T> {
    pub fn zeros(name: &str, shape: &[usize], decay: bool) -> Self {
        let len = shape.iter().product();
        Self { name: String::from(name), shape: shape.to_vec(), data: vec![T::zero(); len], decay }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn view1(&self) -> ArrayView1<'_, T> {
        ArrayView1::from_shape(self.shape[0], &self.data).expect("1-d named array")
    }

    pub fn view2(&self) -> ArrayView2<'_, T> {
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.data)
            .expect("2-d named array")
    }

    pub fn view3(&self) -> ArrayView3<'_, T> {
        ArrayView3::from_shape((self.shape[0], self.shape[1], self.shape[2]), &self.data)
            .expect("3-d named array")
    }

    pub fn view1_mut(&mut self) -> ArrayViewMut1<'_, T> {
        ArrayViewMut1::from_shape(self.shape[0], &mut self.data).expect("1-d named array")
    }

    pub fn view2_mut(&mut self) -> ArrayViewMut2<'_, T> {
        ArrayViewMut2::from_shape((self.shape[0], self.shape[1]), &mut self.data)
            .expect("2-d named array")
    }

    pub fn view3_mut(&mut self) -> ArrayViewMut3<'_, T> {
        ArrayViewMut3::from_shape((self.shape[0], self.shape[1], self.shape[2]), &mut self.data)
            .expect("3-d named array")
    }
}

/// An ordered set of named arrays; the order is the serialization and
/// optimizer-iteration order.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArrays<T> {
    arrays: Vec<NamedArray<T>>,
}

impl<T: Scalar> NamedArrays<T> {
    pub fn new(arrays: Vec<NamedArray<T>>) -> Self {
        Self { arrays }
    }

    pub fn arrays(&self) -> &[NamedArray<T>] {
        &self.arrays
    }

    pub fn arrays_mut(&mut self) -> &mut [NamedArray<T>] {
        &mut self.arrays
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray<T>> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedArray<T>> {
        self.arrays.iter_mut().find(|a| a.name == name)
    }

    /// Zeroed arrays with identical names and shapes (gradient buffers).
    pub fn zeros_like(&self) -> Self {
        Self {
            arrays: self
                .arrays
                .iter()
                .map(|a| NamedArray::zeros(&a.name, &a.shape, a.decay))
                .collect(),
        }
    }

    /// Element-wise accumulate, used for chunked gradient reduction.
    pub fn accumulate(&mut self, other: &Self) -> Result<(), NnError> {
        if self.arrays.len() != other.arrays.len() {
            return Err(NnError::ShapeMismatch { context: "gradient accumulation" });
        }
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            if a.shape != b.shape {
                return Err(NnError::ShapeMismatch { context: "gradient accumulation" });
            }
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for a in &mut self.arrays {
            for x in &mut a.data {
                *x *= factor;
            }
        }
    }

    pub fn total_len(&self) -> usize {
        self.arrays.iter().map(|a| a.len()).sum()
    }
}

/// Names of the parameter arrays for a given spec, in serialization order.
pub(crate) fn conv_weight_name(block: usize) -> String {
    format!("block{block}.weights")
}

pub(crate) fn conv_bias_name(block: usize) -> String {
    format!("block{block}.bias")
}

/// Initializes parameters with the scale-preserving uniform distribution
/// `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
///
/// Sampling always happens in `f64` and is cast to `T`, so single- and
/// double-precision runs draw identical parameter sequences.
pub fn init_params<T: Scalar>(
    spec: &ModelSpec,
    hier: &MeshHierarchy,
    rng: &mut ChaCha8Rng,
) -> Result<NamedArrays<T>, NnError> {
    spec.validate(hier)?;
    let mut arrays = Vec::new();
    let mut c_in = spec.in_channels;
    for (b, block) in spec.blocks.iter().enumerate() {
        let s = support_size(block.ring);
        let mut w = NamedArray::zeros(&conv_weight_name(b), &[s, c_in, block.filters], true);
        fill_uniform(&mut w.data, s * c_in, s * block.filters, rng);
        arrays.push(w);
        arrays.push(NamedArray::zeros(&conv_bias_name(b), &[block.filters], false));
        c_in = block.filters;
    }
    let features = spec.feature_len(hier);
    let mut fc_w = NamedArray::zeros("fc.weights", &[features, spec.fc_nodes], true);
    fill_uniform(&mut fc_w.data, features, spec.fc_nodes, rng);
    arrays.push(fc_w);
    arrays.push(NamedArray::zeros("fc.bias", &[spec.fc_nodes], false));
    let mut out_w = NamedArray::zeros("out.weights", &[spec.fc_nodes, spec.n_classes], true);
    fill_uniform(&mut out_w.data, spec.fc_nodes, spec.n_classes, rng);
    arrays.push(out_w);
    arrays.push(NamedArray::zeros("out.bias", &[spec.n_classes], false));
    Ok(NamedArrays::new(arrays))
}

pub(crate) fn fill_uniform<T: Scalar>(
    data: &mut [T],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for x in data {
        *x = T::from_f64(rng.gen_range(-bound..bound));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::icosphere;
    use rand::SeedableRng;

    #[test]
    fn four_block_spec_shapes() {
        let hier = icosphere(4);
        let spec = ModelSpec::four_block(4, 1, 2);
        spec.validate(&hier).unwrap();
        assert_eq!(spec.output_level(), 0);
        assert_eq!(spec.feature_len(&hier), 12 * 64);
        let levels: Vec<usize> = (0..4).map(|b| spec.level_before_block(b)).collect();
        assert_eq!(levels, vec![4, 3, 2, 1]);
    }

    #[test]
    fn init_is_seed_deterministic_and_bounded() {
        let hier = icosphere(2);
        let spec = ModelSpec::four_block(2, 1, 2);
        // Two blocks fit on a depth-2 hierarchy.
        let spec = ModelSpec { blocks: spec.blocks[..2].to_vec(), ..spec };
        let a: NamedArrays<f64> =
            init_params(&spec, &hier, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b: NamedArrays<f64> =
            init_params(&spec, &hier, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let w = a.get("block0.weights").unwrap();
        assert_eq!(w.shape, vec![7, 1, 8]);
        let bound = (6.0 / (7.0 + 56.0)).sqrt();
        assert!(w.data.iter().all(|x| x.abs() < bound));
        assert!(a.get("block0.bias").unwrap().data.iter().all(|&x| x == 0.0));
        // f32 draws the same underlying sequence.
        let c: NamedArrays<f32> =
            init_params(&spec, &hier, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for (x, y) in a.get("fc.weights").unwrap().data.iter().zip(&c.get("fc.weights").unwrap().data)
        {
            assert_eq!(*y, *x as f32);
        }
    }

    #[test]
    fn spec_deeper_than_hierarchy_is_rejected() {
        let hier = icosphere(2);
        let spec = ModelSpec::four_block(4, 1, 2);
        assert!(spec.validate(&hier).is_err());
    }
}
