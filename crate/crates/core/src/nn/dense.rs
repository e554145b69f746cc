//! ReLU and the fully connected softmax classification head.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::nn::signal::Signal;
use crate::nn::NnError;
use crate::Scalar;

/// Element-wise `max(0, x)`.
pub fn relu<T: Scalar>(signal: &Signal<T>) -> Signal<T> {
    Signal::from_values(signal.level(), relu_values(signal.values()))
}

/// Gradient of [`relu`]: passes `upstream` where the cached input is
/// positive; zero elsewhere (including at exactly zero).
pub fn relu_grad<T: Scalar>(upstream: &Signal<T>, input: &Signal<T>) -> Signal<T> {
    let mut out = upstream.values().clone();
    out.zip_mut_with(input.values(), |u, &x| {
        if x <= T::zero() {
            *u = T::zero();
        }
    });
    Signal::from_values(upstream.level(), out)
}

pub(crate) fn relu_values<T: Scalar>(values: &Array2<T>) -> Array2<T> {
    values.mapv(|x| if x > T::zero() { x } else { T::zero() })
}

pub(crate) fn relu_grad_values<T: Scalar>(upstream: &Array2<T>, input: &Array2<T>) -> Array2<T> {
    let mut out = upstream.clone();
    out.zip_mut_with(input, |u, &x| {
        if x <= T::zero() {
            *u = T::zero();
        }
    });
    out
}

/// Row-wise softmax with max-subtraction for overflow stability.
pub(crate) fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// Parameter views of the classification head.
#[derive(Clone, Copy)]
pub struct FcParams<'a, T> {
    pub fc_weights: ArrayView2<'a, T>,
    pub fc_bias: ArrayView1<'a, T>,
    pub out_weights: ArrayView2<'a, T>,
    pub out_bias: ArrayView1<'a, T>,
    /// Apply ReLU between the dense layer and the softmax layer.
    pub fc_relu: bool,
}

pub(crate) struct HeadCache<T> {
    pub hidden_pre: Array2<T>,
    pub hidden: Array2<T>,
    pub probs: Array2<T>,
}

pub(crate) fn head_forward<T: Scalar>(features: &ArrayView2<'_, T>, p: &FcParams<'_, T>) -> HeadCache<T> {
    let mut hidden_pre = features.dot(&p.fc_weights);
    hidden_pre += &p.fc_bias;
    let hidden = if p.fc_relu { relu_values(&hidden_pre) } else { hidden_pre.clone() };
    let mut logits = hidden.dot(&p.out_weights);
    logits += &p.out_bias;
    let probs = softmax_rows(&logits);
    HeadCache { hidden_pre, hidden, probs }
}

/// `-sum_b ln p[b, label_b]`.
pub(crate) fn ce_sum<T: Scalar>(probs: &Array2<T>, labels: &[usize]) -> T {
    let mut loss = T::zero();
    for (b, &label) in labels.iter().enumerate() {
        loss -= probs[[b, label]].max(T::min_positive_value()).ln();
    }
    loss
}

pub(crate) struct HeadGrads<T> {
    pub features: Array2<T>,
    pub fc_weights: Array2<T>,
    pub fc_bias: Array1<T>,
    pub out_weights: Array2<T>,
    pub out_bias: Array1<T>,
}

/// Backward pass of the head for the summed cross-entropy objective.
pub(crate) fn head_backward<T: Scalar>(
    features: &ArrayView2<'_, T>,
    p: &FcParams<'_, T>,
    cache: &HeadCache<T>,
    labels: &[usize],
) -> HeadGrads<T> {
    // d(sum CE)/d logits = probs - onehot
    let mut dlogits = cache.probs.clone();
    for (b, &label) in labels.iter().enumerate() {
        dlogits[[b, label]] -= T::one();
    }
    let out_weights = cache.hidden.t().dot(&dlogits);
    let out_bias = dlogits.sum_axis(Axis(0));
    let dhidden = dlogits.dot(&p.out_weights.t());
    let dhidden_pre = if p.fc_relu {
        relu_grad_values(&dhidden, &cache.hidden_pre)
    } else {
        dhidden
    };
    let fc_weights = features.t().dot(&dhidden_pre);
    let fc_bias = dhidden_pre.sum_axis(Axis(0));
    let dfeatures = dhidden_pre.dot(&p.fc_weights.t());
    HeadGrads { features: dfeatures, fc_weights, fc_bias, out_weights, out_bias }
}

/// Gradients returned by [`dense_softmax_ce`].
pub struct DenseGrads<T> {
    pub features: Array2<T>,
    pub fc_weights: Array2<T>,
    pub fc_bias: Array1<T>,
    pub out_weights: Array2<T>,
    pub out_bias: Array1<T>,
}

/// Dense layer, optional ReLU, softmax and cross-entropy in one call.
///
/// The loss is the mean cross-entropy over the batch plus the ridge penalty
/// `fc_l2 * ||fc_weights||^2`; the returned probabilities are row-stochastic.
pub fn dense_softmax_ce<T: Scalar>(
    features: &Array2<T>,
    params: &FcParams<'_, T>,
    labels: &[usize],
    fc_l2: T,
) -> Result<(T, Array2<T>, DenseGrads<T>), NnError> {
    let (batch, f) = features.dim();
    if batch != labels.len()
        || f != params.fc_weights.nrows()
        || params.fc_weights.ncols() != params.fc_bias.len()
        || params.out_weights.nrows() != params.fc_weights.ncols()
        || params.out_weights.ncols() != params.out_bias.len()
    {
        return Err(NnError::ShapeMismatch { context: "dense softmax head" });
    }
    let n_classes = params.out_bias.len();
    if labels.iter().any(|&l| l >= n_classes) {
        return Err(NnError::ShapeMismatch { context: "dense softmax labels" });
    }
    let cache = head_forward(&features.view(), params);
    let inv_batch = T::from_f64(1.0 / batch as f64);
    let penalty = params.fc_weights.iter().fold(T::zero(), |acc, &w| acc + w * w) * fc_l2;
    let loss = ce_sum(&cache.probs, labels) * inv_batch + penalty;
    let mut grads = head_backward(&features.view(), params, &cache, labels);
    // Mean objective: scale the summed CE gradients, then add the penalty.
    for g in [&mut grads.features, &mut grads.fc_weights, &mut grads.out_weights] {
        g.mapv_inplace(|x| x * inv_batch);
    }
    grads.fc_bias.mapv_inplace(|x| x * inv_batch);
    grads.out_bias.mapv_inplace(|x| x * inv_batch);
    let two = T::from_f64(2.0);
    grads
        .fc_weights
        .zip_mut_with(&params.fc_weights, |g, &w| *g += two * fc_l2 * w);
    let probs = cache.probs;
    Ok((
        loss,
        probs,
        DenseGrads {
            features: grads.features,
            fc_weights: grads.fc_weights,
            fc_bias: grads.fc_bias,
            out_weights: grads.out_weights,
            out_bias: grads.out_bias,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_clamps_negatives_and_zero() {
        let s = Signal::from_vec(0, 3, 1, vec![-1.0, 0.0, 2.0]).unwrap();
        let out = relu(&s);
        assert_eq!(out.values().as_slice().unwrap(), &[0.0, 0.0, 2.0]);
        let upstream = Signal::from_vec(0, 3, 1, vec![10.0, 10.0, 10.0]).unwrap();
        let g = relu_grad(&upstream, &s);
        assert_eq!(g.values().as_slice().unwrap(), &[0.0, 0.0, 10.0]);
    }

    #[test]
    fn all_negative_input_kills_signal_and_gradient() {
        let s = Signal::from_vec(0, 2, 2, vec![-3.0, -0.5, -1.0, -2.0]).unwrap();
        assert!(relu(&s).values().iter().all(|&x| x == 0.0));
        let upstream = Signal::from_vec(0, 2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(relu_grad(&upstream, &s).values().iter().all(|&x| x == 0.0));
    }

    fn zero_head(f: usize, h: usize, k: usize) -> (Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>) {
        (Array2::zeros((f, h)), Array1::zeros(h), Array2::zeros((h, k)), Array1::zeros(k))
    }

    #[test]
    fn zero_parameters_give_uniform_probabilities_and_ln2() {
        let (w1, b1, w2, b2) = zero_head(4, 8, 2);
        let params = FcParams {
            fc_weights: w1.view(),
            fc_bias: b1.view(),
            out_weights: w2.view(),
            out_bias: b2.view(),
            fc_relu: true,
        };
        let features = Array2::from_elem((1, 4), 0.3);
        let (loss, probs, _) = dense_softmax_ce(&features, &params, &[1], 0.0).unwrap();
        assert!((probs[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((probs[[0, 1]] - 0.5).abs() < 1e-15);
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let logits = Array2::from_shape_vec((1, 2), vec![1000.0f64, 0.0]).unwrap();
        let p = softmax_rows(&logits);
        assert!((p[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(p[[0, 1]] >= 0.0 && p[[0, 1]] < 1e-300);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let logits = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-30.0..30.0));
        let p = softmax_rows(&logits);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (f, h, k, batch) = (5, 4, 3, 2);
        let mut w1 = Array2::from_shape_fn((f, h), |_| rng.gen_range(-0.8..0.8));
        let mut b1 = Array1::from_shape_fn(h, |_| rng.gen_range(-0.5..0.5));
        let mut w2 = Array2::from_shape_fn((h, k), |_| rng.gen_range(-0.8..0.8));
        let mut b2 = Array1::from_shape_fn(k, |_| rng.gen_range(-0.5..0.5));
        let mut features = Array2::from_shape_fn((batch, f), |_| rng.gen_range(-1.0..1.0));
        let labels = vec![2usize, 0];
        let fc_l2 = 5e-4;

        let loss_fn = |features: &Array2<f64>,
                       w1: &Array2<f64>,
                       b1: &Array1<f64>,
                       w2: &Array2<f64>,
                       b2: &Array1<f64>| {
            let params = FcParams {
                fc_weights: w1.view(),
                fc_bias: b1.view(),
                out_weights: w2.view(),
                out_bias: b2.view(),
                fc_relu: true,
            };
            dense_softmax_ce(features, &params, &labels, fc_l2).unwrap().0
        };

        let params = FcParams {
            fc_weights: w1.view(),
            fc_bias: b1.view(),
            out_weights: w2.view(),
            out_bias: b2.view(),
            fc_relu: true,
        };
        let (_, _, grads) = dense_softmax_ce(&features, &params, &labels, fc_l2).unwrap();

        let step = 1e-6;
        let check = |analytic: &[f64], fd: Vec<f64>| {
            for (a, d) in analytic.iter().zip(fd) {
                let rel = (a - d).abs() / a.abs().max(d.abs()).max(1.0);
                assert!(rel < 1e-6, "analytic {a} vs fd {d}");
            }
        };

        macro_rules! fd_for {
            ($target:ident) => {{
                let mut fd = Vec::new();
                for idx in 0..$target.len() {
                    let orig = $target.as_slice().unwrap()[idx];
                    $target.as_slice_mut().unwrap()[idx] = orig + step;
                    let up = loss_fn(&features, &w1, &b1, &w2, &b2);
                    $target.as_slice_mut().unwrap()[idx] = orig - step;
                    let down = loss_fn(&features, &w1, &b1, &w2, &b2);
                    $target.as_slice_mut().unwrap()[idx] = orig;
                    fd.push((up - down) / (2.0 * step));
                }
                fd
            }};
        }

        let fd = fd_for!(features);
        check(grads.features.as_slice().unwrap(), fd);
        let fd = fd_for!(w1);
        check(grads.fc_weights.as_slice().unwrap(), fd);
        let fd = fd_for!(b1);
        check(grads.fc_bias.as_slice().unwrap(), fd);
        let fd = fd_for!(w2);
        check(grads.out_weights.as_slice().unwrap(), fd);
        let fd = fd_for!(b2);
        check(grads.out_bias.as_slice().unwrap(), fd);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (w1, b1, w2, b2) = zero_head(4, 8, 2);
        let params = FcParams {
            fc_weights: w1.view(),
            fc_bias: b1.view(),
            out_weights: w2.view(),
            out_bias: b2.view(),
            fc_relu: true,
        };
        let features = Array2::<f64>::zeros((1, 5));
        assert!(dense_softmax_ce(&features, &params, &[0], 0.0).is_err());
        let features = Array2::<f64>::zeros((1, 4));
        assert!(dense_softmax_ce(&features, &params, &[7], 0.0).is_err());
    }
}
