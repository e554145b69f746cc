//! Adam with bias correction and decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::params::NamedArrays;
use crate::nn::NnError;
use crate::Scalar;

/// First and second moment estimates, one buffer per parameter array.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &NamedArrays<T>) -> Self {
        let m = params.arrays().iter().map(|a| vec![T::zero(); a.len()]).collect();
        let v = params.arrays().iter().map(|a| vec![T::zero(); a.len()]).collect();
        Self { t: 0, m, v }
    }

    /// Completed steps (the bias-correction exponent).
    pub fn t(&self) -> u64 {
        self.t
    }
}

/// Hyperparameters of a single optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay, applied only to arrays flagged `decay`.
    pub weight_decay: f64,
}

/// One Adam update:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `p <- p - lr * mhat / (sqrt(vhat) + eps)`, then for weight arrays
/// `p <- p - lr * weight_decay * p`.
pub fn adam_step<T: Scalar>(
    params: &mut NamedArrays<T>,
    grads: &NamedArrays<T>,
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<(), NnError> {
    if params.arrays().len() != grads.arrays().len()
        || params.arrays().len() != state.m.len()
    {
        return Err(NnError::ShapeMismatch { context: "adam step" });
    }
    state.t += 1;
    let lr = T::from_f64(hyper.learning_rate);
    let b1 = T::from_f64(hyper.beta1);
    let b2 = T::from_f64(hyper.beta2);
    let eps = T::from_f64(hyper.epsilon);
    let decay = T::from_f64(hyper.weight_decay);
    let one = T::one();
    let corr1 = one - b1.powi(state.t as i32);
    let corr2 = one - b2.powi(state.t as i32);

    for (idx, (p, g)) in params.arrays_mut().iter_mut().zip(grads.arrays()).enumerate() {
        if p.shape != g.shape {
            return Err(NnError::ShapeMismatch { context: "adam step" });
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let apply_decay = p.decay && hyper.weight_decay != 0.0;
        for ((pi, &gi), (mi, vi)) in
            p.data.iter_mut().zip(&g.data).zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let mhat = *mi / corr1;
            let vhat = *vi / corr2;
            *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
            if apply_decay {
                *pi = *pi - lr * decay * *pi;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::NamedArray;

    fn single_param(value: f64, decay: bool) -> NamedArrays<f64> {
        let mut a = NamedArray::zeros("p", &[1], decay);
        a.data[0] = value;
        NamedArrays::new(alloc::vec![a])
    }

    fn grad_of(value: f64) -> NamedArrays<f64> {
        single_param(value, true)
    }

    const HYPER: AdamHyper = AdamHyper {
        learning_rate: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
        weight_decay: 0.0,
    };

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = single_param(0.0, false);
        let grads = grad_of(1.0);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &HYPER).unwrap();
        // Bias-corrected first step: -lr * g / (|g| + eps).
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((params.arrays()[0].data[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut params = single_param(0.7, false);
        let grads = grad_of(0.0);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &HYPER).unwrap();
        adam_step(&mut params, &grads, &mut state, &HYPER).unwrap();
        assert_eq!(params.arrays()[0].data[0], 0.7);
    }

    #[test]
    fn two_steps_match_scalar_hand_trace() {
        // Independent scalar re-derivation of the update rule, including
        // sequential decoupled decay.
        let (lr, b1, b2, eps, wd) = (1e-3, 0.9, 0.999, 1e-8, 0.05);
        let g = 0.3f64;
        let mut theta = 0.5f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2u32 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t as i32));
            let vhat = v / (1.0 - b2.powi(t as i32));
            theta -= lr * mhat / (vhat.sqrt() + eps);
            theta -= lr * wd * theta;
        }

        let mut params = single_param(0.5, true);
        let grads = grad_of(g);
        let mut state = AdamState::new(&params);
        let hyper = AdamHyper { weight_decay: wd, ..HYPER };
        adam_step(&mut params, &grads, &mut state, &hyper).unwrap();
        adam_step(&mut params, &grads, &mut state, &hyper).unwrap();
        assert!((params.arrays()[0].data[0] - theta).abs() < 1e-12);
        assert_eq!(state.t(), 2);
    }

    #[test]
    fn decay_skips_bias_arrays() {
        let hyper = AdamHyper { weight_decay: 0.05, ..HYPER };
        let mut with_decay = single_param(1.0, true);
        let mut without = single_param(1.0, false);
        let grads = grad_of(0.0);
        let mut s1 = AdamState::new(&with_decay);
        let mut s2 = AdamState::new(&without);
        adam_step(&mut with_decay, &grads, &mut s1, &hyper).unwrap();
        adam_step(&mut without, &grads, &mut s2, &hyper).unwrap();
        assert!((with_decay.arrays()[0].data[0] - (1.0 - 1e-3 * 0.05)).abs() < 1e-15);
        assert_eq!(without.arrays()[0].data[0], 1.0);
    }
}
