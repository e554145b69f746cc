//! Central finite-difference verification of every layer's gradients.
//!
//! Each check builds a small random instance on an icosphere, computes a
//! scalar loss, and compares the analytic gradient of every parameter (and
//! of the input) against `(f(x + h) - f(x - h)) / 2h`. Layer outputs are
//! reduced to a scalar through a fixed random projection; the head and the
//! full model use their real cross-entropy objective.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baseline::{chebyshev_conv, chebyshev_conv_grad, graph_laplacian, SparseLaplacian};
use crate::hierarchy::{icosphere, MeshHierarchy};
use crate::nn::conv::{mesh_conv, mesh_conv_grad, ConvFilter};
use crate::nn::dense::{dense_softmax_ce, relu, relu_grad, FcParams};
use crate::nn::model::{MeshModel, VertexCnn};
use crate::nn::params::{init_params, BlockSpec, ModelSpec, PoolMode};
use crate::nn::pool::{mesh_pool, mesh_pool_grad};
use crate::nn::signal::{Signal, Stack};
use crate::ordering::build_gather_table;
use crate::Scalar;

/// Deliberate gradient corruptions for exercising the checker itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Double the convolution weight gradient.
    ScaleConvWeightGrad,
}

/// Result of one gradient group.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckGroup {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

/// All checked groups plus the overall verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub threshold: f64,
    pub step: f64,
    pub groups: Vec<GradcheckGroup>,
    pub pass: bool,
}

impl GradcheckReport {
    fn push(&mut self, name: &str, max_rel_err: f64) {
        let pass = max_rel_err < self.threshold;
        self.pass &= pass;
        self.groups.push(GradcheckGroup { name: String::from(name), max_rel_err, pass });
    }
}

/// Finite-difference step and pass threshold per precision.
pub fn fd_defaults<T: Scalar>() -> (f64, f64) {
    if core::mem::size_of::<T>() == 4 {
        (5e-3, 1e-4)
    } else {
        (1e-6, 1e-6)
    }
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0)
}

/// Max relative error between an analytic gradient slice and central
/// differences of `loss` over `values`.
fn check_slice<T: Scalar, F: FnMut(&[T]) -> T>(
    values: &mut [T],
    analytic: &[T],
    step: f64,
    mut loss: F,
) -> f64 {
    let h = T::from_f64(step);
    let mut worst = 0.0f64;
    for i in 0..values.len() {
        let orig = values[i];
        values[i] = orig + h;
        let up = loss(values).to_f64();
        values[i] = orig - h;
        let down = loss(values).to_f64();
        values[i] = orig;
        let fd = (up - down) / (2.0 * step);
        worst = worst.max(rel_err(analytic[i].to_f64(), fd));
    }
    worst
}

fn random_array2<T: Scalar>(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<T> {
    Array2::from_shape_fn(shape, |_| T::from_f64(rng.gen_range(-1.0..1.0)))
}

/// Random values bounded away from zero, for kink-free ReLU checks.
fn random_array2_offzero<T: Scalar>(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<T> {
    Array2::from_shape_fn(shape, |_| {
        let magnitude = rng.gen_range(0.1..1.0);
        let sign = if rng.gen_range(0..2) == 0 { -1.0 } else { 1.0 };
        T::from_f64(sign * magnitude)
    })
}

fn projected_sum<T: Scalar>(out: &Array2<T>, projection: &Array2<T>) -> T {
    out.iter().zip(projection.iter()).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

/// Runs every layer and full-model check at the given step/threshold.
pub fn gradcheck<T: Scalar>(seed: u64) -> GradcheckReport {
    gradcheck_with_fault::<T>(seed, default_fault())
}

#[cfg(feature = "fault-inject")]
fn default_fault() -> Fault {
    Fault::ScaleConvWeightGrad
}

#[cfg(not(feature = "fault-inject"))]
fn default_fault() -> Fault {
    Fault::None
}

/// [`gradcheck`] with an explicit fault injection (testing hook).
pub fn gradcheck_with_fault<T: Scalar>(seed: u64, fault: Fault) -> GradcheckReport {
    let (step, threshold) = fd_defaults::<T>();
    let mut report = GradcheckReport { threshold, step, groups: Vec::new(), pass: true };
    let hier = icosphere(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    check_mesh_conv::<T>(&hier, &mut rng, step, fault, &mut report);
    check_relu::<T>(&mut rng, step, &mut report);
    check_pools::<T>(&hier, &mut rng, step, &mut report);
    check_dense_head::<T>(&mut rng, step, &mut report);
    check_chebyshev::<T>(&hier, &mut rng, step, &mut report);
    check_full_model::<T>(&hier, &mut rng, step, fault, &mut report);
    report
}

fn check_mesh_conv<T: Scalar>(
    hier: &MeshHierarchy,
    rng: &mut ChaCha8Rng,
    step: f64,
    fault: Fault,
    report: &mut GradcheckReport,
) {
    let mesh = hier.level(1);
    let n = mesh.n_vertices();
    let table = build_gather_table(mesh, 1).expect("icosphere tables build");
    let (ci, co) = (2, 3);
    let mut input = random_array2::<T>(rng, (n, ci));
    let weights = Array3::from_shape_fn((7, ci, co), |_| T::from_f64(rng.gen_range(-1.0..1.0)));
    let bias = ndarray::Array1::from_shape_fn(co, |_| T::from_f64(rng.gen_range(-1.0..1.0)));
    let projection = random_array2::<T>(rng, (n, co));

    let filter = ConvFilter::new(1, weights.clone(), bias.clone()).unwrap();
    let upstream = Signal::from_values(1, projection.clone());
    let cached = Signal::from_values(1, input.clone());
    let (gi, mut gw, gb) = mesh_conv_grad(&upstream, &cached, &filter, &table).unwrap();
    if fault == Fault::ScaleConvWeightGrad {
        gw.mapv_inplace(|x| x + x);
    }

    let loss_of = |inp: &Array2<T>, w: &Array3<T>, b: &ndarray::Array1<T>| {
        let f = ConvFilter::new(1, w.clone(), b.clone()).unwrap();
        let out = mesh_conv(&Signal::from_values(1, inp.clone()), &f, &table).unwrap();
        projected_sum(out.values(), &projection)
    };

    let gi_slice: Vec<T> = gi.values().iter().copied().collect();
    let err = check_slice(
        input.as_slice_mut().unwrap(),
        &gi_slice,
        step,
        |vals| {
            let inp = Array2::from_shape_vec((n, ci), vals.to_vec()).unwrap();
            loss_of(&inp, &weights, &bias)
        },
    );
    report.push("mesh_conv.input", err);

    let mut w_mut = weights.clone();
    let gw_slice: Vec<T> = gw.iter().copied().collect();
    let err = check_slice(w_mut.clone().as_slice_mut().unwrap(), &gw_slice, step, |vals| {
        let w = Array3::from_shape_vec((7, ci, co), vals.to_vec()).unwrap();
        loss_of(&input, &w, &bias)
    });
    let _ = &mut w_mut;
    report.push("mesh_conv.weights", err);

    let mut b_mut = bias.clone();
    let gb_slice: Vec<T> = gb.iter().copied().collect();
    let err = check_slice(b_mut.as_slice_mut().unwrap(), &gb_slice, step, |vals| {
        let b = ndarray::Array1::from_vec(vals.to_vec());
        loss_of(&input, &weights, &b)
    });
    report.push("mesh_conv.bias", err);
}

fn check_relu<T: Scalar>(rng: &mut ChaCha8Rng, step: f64, report: &mut GradcheckReport) {
    let mut input = random_array2_offzero::<T>(rng, (20, 3));
    let projection = random_array2::<T>(rng, (20, 3));
    let upstream = Signal::from_values(0, projection.clone());
    let cached = Signal::from_values(0, input.clone());
    let g = relu_grad(&upstream, &cached);
    let g_slice: Vec<T> = g.values().iter().copied().collect();
    let err = check_slice(input.as_slice_mut().unwrap(), &g_slice, step, |vals| {
        let s = Signal::from_values(0, Array2::from_shape_vec((20, 3), vals.to_vec()).unwrap());
        projected_sum(relu(&s).values(), &projection)
    });
    report.push("relu.input", err);
}

fn check_pools<T: Scalar>(
    hier: &MeshHierarchy,
    rng: &mut ChaCha8Rng,
    step: f64,
    report: &mut GradcheckReport,
) {
    for mode in [PoolMode::Mean, PoolMode::Max] {
        let n_fine = hier.level(1).n_vertices();
        let n_coarse = hier.level(0).n_vertices();
        let mut input = random_array2::<T>(rng, (n_fine, 2));
        let projection = random_array2::<T>(rng, (n_coarse, 2));
        let cached = Signal::from_values(1, input.clone());
        let upstream = Signal::from_values(0, projection.clone());
        let g = mesh_pool_grad(&upstream, hier, mode, &cached, 2).unwrap();
        let g_slice: Vec<T> = g.values().iter().copied().collect();
        let err = check_slice(input.as_slice_mut().unwrap(), &g_slice, step, |vals| {
            let s = Signal::from_values(
                1,
                Array2::from_shape_vec((n_fine, 2), vals.to_vec()).unwrap(),
            );
            projected_sum(mesh_pool(&s, hier, mode, 2).unwrap().values(), &projection)
        });
        report.push(&format!("pool.{mode}.input"), err);
    }
}

fn check_dense_head<T: Scalar>(rng: &mut ChaCha8Rng, step: f64, report: &mut GradcheckReport) {
    let (f, h, k, batch) = (6, 5, 3, 2);
    let mut features = random_array2::<T>(rng, (batch, f));
    let mut w1 = random_array2::<T>(rng, (f, h));
    let mut b1 = ndarray::Array1::from_shape_fn(h, |_| T::from_f64(rng.gen_range(-0.5..0.5)));
    let mut w2 = random_array2::<T>(rng, (h, k));
    let mut b2 = ndarray::Array1::from_shape_fn(k, |_| T::from_f64(rng.gen_range(-0.5..0.5)));
    let labels = alloc::vec![1usize, 2];
    let fc_l2 = T::from_f64(5e-4);

    let loss_of = |feat: &Array2<T>,
                   w1: &Array2<T>,
                   b1: &ndarray::Array1<T>,
                   w2: &Array2<T>,
                   b2: &ndarray::Array1<T>| {
        let p = FcParams {
            fc_weights: w1.view(),
            fc_bias: b1.view(),
            out_weights: w2.view(),
            out_bias: b2.view(),
            fc_relu: true,
        };
        dense_softmax_ce(feat, &p, &labels, fc_l2).unwrap().0
    };

    let p = FcParams {
        fc_weights: w1.view(),
        fc_bias: b1.view(),
        out_weights: w2.view(),
        out_bias: b2.view(),
        fc_relu: true,
    };
    let (_, _, grads) = dense_softmax_ce(&features, &p, &labels, fc_l2).unwrap();

    let gf: Vec<T> = grads.features.iter().copied().collect();
    let err = check_slice(features.clone().as_slice_mut().unwrap(), &gf, step, |vals| {
        let feat = Array2::from_shape_vec((batch, f), vals.to_vec()).unwrap();
        loss_of(&feat, &w1, &b1, &w2, &b2)
    });
    report.push("dense.features", err);

    let g: Vec<T> = grads.fc_weights.iter().copied().collect();
    let err = check_slice(w1.clone().as_slice_mut().unwrap(), &g, step, |vals| {
        let w = Array2::from_shape_vec((f, h), vals.to_vec()).unwrap();
        loss_of(&features, &w, &b1, &w2, &b2)
    });
    report.push("dense.fc_weights", err);

    let g: Vec<T> = grads.fc_bias.iter().copied().collect();
    let err = check_slice(b1.clone().as_slice_mut().unwrap(), &g, step, |vals| {
        let b = ndarray::Array1::from_vec(vals.to_vec());
        loss_of(&features, &w1, &b, &w2, &b2)
    });
    report.push("dense.fc_bias", err);

    let g: Vec<T> = grads.out_weights.iter().copied().collect();
    let err = check_slice(w2.clone().as_slice_mut().unwrap(), &g, step, |vals| {
        let w = Array2::from_shape_vec((h, k), vals.to_vec()).unwrap();
        loss_of(&features, &w1, &b1, &w, &b2)
    });
    report.push("dense.out_weights", err);

    let g: Vec<T> = grads.out_bias.iter().copied().collect();
    let err = check_slice(b2.clone().as_slice_mut().unwrap(), &g, step, |vals| {
        let b = ndarray::Array1::from_vec(vals.to_vec());
        loss_of(&features, &w1, &b1, &w2, &b)
    });
    report.push("dense.out_bias", err);

    // Keep the originals alive for the closures above.
    let _ = (&mut features, &mut w1, &mut b1, &mut w2, &mut b2);
}

fn check_chebyshev<T: Scalar>(
    hier: &MeshHierarchy,
    rng: &mut ChaCha8Rng,
    step: f64,
    report: &mut GradcheckReport,
) {
    let mesh = hier.level(1);
    let n = mesh.n_vertices();
    let lap: SparseLaplacian<T> = graph_laplacian(mesh).expect("icosphere is connected");
    let mut input = random_array2::<T>(rng, (n, 2));
    let theta = Array3::from_shape_fn((4, 2, 2), |_| T::from_f64(rng.gen_range(-0.8..0.8)));
    let projection = random_array2::<T>(rng, (n, 2));

    let upstream = Signal::from_values(1, projection.clone());
    let cached = Signal::from_values(1, input.clone());
    let (gi, gt) = chebyshev_conv_grad(&upstream, &cached, &lap, &theta).unwrap();

    let loss_of = |inp: &Array2<T>, th: &Array3<T>| {
        let out = chebyshev_conv(&Signal::from_values(1, inp.clone()), &lap, th).unwrap();
        projected_sum(out.values(), &projection)
    };

    let g: Vec<T> = gi.values().iter().copied().collect();
    let err = check_slice(input.as_slice_mut().unwrap(), &g, step, |vals| {
        let inp = Array2::from_shape_vec((n, 2), vals.to_vec()).unwrap();
        loss_of(&inp, &theta)
    });
    report.push("chebyshev.input", err);

    let mut theta_mut = theta.clone();
    let g: Vec<T> = gt.iter().copied().collect();
    let err = check_slice(theta_mut.as_slice_mut().unwrap(), &g, step, |vals| {
        let th = Array3::from_shape_vec((4, 2, 2), vals.to_vec()).unwrap();
        loss_of(&input, &th)
    });
    report.push("chebyshev.theta", err);
}

/// End-to-end check: mean CE (plus the fc ridge penalty) of a two-block
/// model on a batch of two signals, differentiated through every parameter
/// group and the input.
fn check_full_model<T: Scalar>(
    hier: &MeshHierarchy,
    rng: &mut ChaCha8Rng,
    step: f64,
    fault: Fault,
    report: &mut GradcheckReport,
) {
    let spec = ModelSpec {
        input_level: 2,
        in_channels: 1,
        blocks: alloc::vec![
            BlockSpec { filters: 3, ring: 1, pool: PoolMode::Mean, pool_stride: 2 },
            BlockSpec { filters: 4, ring: 1, pool: PoolMode::Max, pool_stride: 2 },
        ],
        fc_nodes: 8,
        n_classes: 2,
        fc_relu: true,
    };
    let n = hier.level(2).n_vertices();
    let batch = 2usize;
    let params = init_params::<T>(&spec, hier, rng).expect("valid gradcheck spec");
    let labels = alloc::vec![0usize, 1];
    let fc_l2 = T::from_f64(5e-4);
    let mut input = random_array2::<T>(rng, (batch * n, 1));

    let loss_of = |p: &crate::nn::params::NamedArrays<T>, values: &Array2<T>| {
        let model = VertexCnn::new(spec.clone(), hier, p.clone()).unwrap();
        let stack = Stack { level: 2, batch, n_per_sample: n, values: values.clone() };
        let (ce, _) = model.ce_sum_and_grads(&stack, &labels).unwrap();
        ce * T::from_f64(1.0 / batch as f64) + model.fc_penalty(fc_l2)
    };

    let model = VertexCnn::new(spec.clone(), hier, params.clone()).unwrap();
    let stack = Stack { level: 2, batch, n_per_sample: n, values: input.clone() };
    let (_, mut grads, input_grad) =
        model.ce_sum_grads_and_input_grad(&stack, &labels).unwrap();
    let inv_batch = T::from_f64(1.0 / batch as f64);
    grads.scale(inv_batch);
    model.add_fc_penalty_grad(fc_l2, &mut grads);
    if fault == Fault::ScaleConvWeightGrad {
        let g = grads.get_mut("block0.weights").unwrap();
        for x in &mut g.data {
            *x = *x + *x;
        }
    }

    for idx in 0..params.arrays().len() {
        let name = params.arrays()[idx].name.clone();
        let mut mutated = params.clone();
        let analytic = grads.arrays()[idx].data.clone();
        let err = check_slice(
            &mut mutated.arrays_mut()[idx].data.clone(),
            &analytic,
            step,
            |vals| {
                let mut p = params.clone();
                p.arrays_mut()[idx].data.copy_from_slice(vals);
                loss_of(&p, &input)
            },
        );
        let _ = &mut mutated;
        report.push(&format!("model.{name}"), err);
    }

    let gi: Vec<T> = input_grad.iter().map(|&x| x * inv_batch).collect();
    let err = check_slice(input.as_slice_mut().unwrap(), &gi, step, |vals| {
        let values = Array2::from_shape_vec((batch * n, 1), vals.to_vec()).unwrap();
        loss_of(&params, &values)
    });
    report.push("model.input", err);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_precision_gradcheck_passes() {
        let report = gradcheck_with_fault::<f64>(7, Fault::None);
        for g in &report.groups {
            assert!(g.pass, "{} failed with {}", g.name, g.max_rel_err);
        }
        assert!(report.pass);
        // Every layer family is represented.
        for prefix in ["mesh_conv", "relu", "pool", "dense", "chebyshev", "model"] {
            assert!(
                report.groups.iter().any(|g| g.name.starts_with(prefix)),
                "missing {prefix} group"
            );
        }
    }

    #[test]
    fn single_precision_gradcheck_passes() {
        let report = gradcheck_with_fault::<f32>(7, Fault::None);
        assert!(report.pass, "groups: {:?}", report.groups);
    }

    #[test]
    fn corrupted_conv_backward_is_caught() {
        let report = gradcheck_with_fault::<f64>(7, Fault::ScaleConvWeightGrad);
        assert!(!report.pass);
        let conv_group =
            report.groups.iter().find(|g| g.name == "mesh_conv.weights").unwrap();
        assert!(!conv_group.pass, "fault must surface in the conv weight group");
        // Unrelated groups still pass.
        assert!(report.groups.iter().find(|g| g.name == "relu.input").unwrap().pass);
    }
}
