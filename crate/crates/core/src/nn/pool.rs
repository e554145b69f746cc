//! Mean and max pooling over subdivision neighborhoods.
//!
//! A coarse vertex pools over itself and its 1-ring at the next finer level
//! (stride 2; stride 4 adds the 2-ring two levels finer). Mean pooling
//! divides by the actual member count — 7 at valence-6 vertices, 6 at
//! valence-5 — so constant signals are preserved everywhere.

use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array2, ArrayView2};

use crate::hierarchy::MeshHierarchy;
use crate::nn::params::PoolMode;
use crate::nn::signal::Signal;
use crate::nn::NnError;
use crate::Scalar;

/// Flattened pooling neighborhoods from one fine level down to a coarse one.
#[derive(Debug, Clone)]
pub struct PoolMap {
    coarse_level: usize,
    fine_level: usize,
    coarse_n: usize,
    fine_n: usize,
    offsets: Vec<u32>,
    members: Vec<u32>,
}

impl PoolMap {
    /// Builds the stride-2 (or stride-4) neighborhood table for pooling
    /// signals at `coarse_level + stride/2` down to `coarse_level`.
    pub fn build(
        hier: &MeshHierarchy,
        coarse_level: usize,
        stride: usize,
    ) -> Result<Self, NnError> {
        let hops = stride / 2;
        let coarse_n = hier.level(coarse_level).n_vertices();
        let mut offsets = Vec::with_capacity(coarse_n + 1);
        let mut members = Vec::new();
        offsets.push(0u32);
        for i in 0..coarse_n {
            let hood = hier.pool_neighborhood(coarse_level, i, stride)?;
            members.extend(hood.members.iter().map(|&m| m as u32));
            offsets.push(members.len() as u32);
        }
        Ok(Self {
            coarse_level,
            fine_level: coarse_level + hops,
            coarse_n,
            fine_n: hier.level(coarse_level + hops).n_vertices(),
            offsets,
            members,
        })
    }

    pub fn coarse_level(&self) -> usize {
        self.coarse_level
    }

    pub fn fine_level(&self) -> usize {
        self.fine_level
    }

    pub fn members_of(&self, i: usize) -> &[u32] {
        &self.members[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }
}

pub(crate) struct PoolCache {
    /// For max pooling: the winning fine vertex per (sample, coarse vertex,
    /// channel), in row-major order.
    pub argmax: Option<Vec<u32>>,
}

pub(crate) fn pool_forward<T: Scalar>(
    values: &ArrayView2<'_, T>,
    batch: usize,
    map: &PoolMap,
    mode: PoolMode,
) -> (Array2<T>, PoolCache) {
    let c = values.ncols();
    let v = values.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); batch * map.coarse_n * c];
    let mut argmax = match mode {
        PoolMode::Max => Some(vec![0u32; batch * map.coarse_n * c]),
        PoolMode::Mean => None,
    };
    for b in 0..batch {
        let fine_base = b * map.fine_n;
        for i in 0..map.coarse_n {
            let members = map.members_of(i);
            let dst = (b * map.coarse_n + i) * c;
            match mode {
                PoolMode::Mean => {
                    let inv = T::from_f64(1.0 / members.len() as f64);
                    for &m in members {
                        let src = (fine_base + m as usize) * c;
                        for cc in 0..c {
                            out[dst + cc] += v[src + cc];
                        }
                    }
                    for cc in 0..c {
                        out[dst + cc] *= inv;
                    }
                }
                PoolMode::Max => {
                    let am = argmax.as_mut().unwrap();
                    // Members are sorted ascending, so keeping strict maxima
                    // routes ties to the smallest vertex index.
                    for (rank, &m) in members.iter().enumerate() {
                        let src = (fine_base + m as usize) * c;
                        for cc in 0..c {
                            if rank == 0 || v[src + cc] > out[dst + cc] {
                                out[dst + cc] = v[src + cc];
                                am[dst + cc] = m;
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Array2::from_shape_vec((batch * map.coarse_n, c), out).expect("pool shape"),
        PoolCache { argmax },
    )
}

pub(crate) fn pool_backward<T: Scalar>(
    grad_coarse: &ArrayView2<'_, T>,
    batch: usize,
    map: &PoolMap,
    mode: PoolMode,
    cache: &PoolCache,
) -> Array2<T> {
    let c = grad_coarse.ncols();
    let g = grad_coarse.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); batch * map.fine_n * c];
    for b in 0..batch {
        let fine_base = b * map.fine_n;
        for i in 0..map.coarse_n {
            let members = map.members_of(i);
            let src = (b * map.coarse_n + i) * c;
            match mode {
                PoolMode::Mean => {
                    let inv = T::from_f64(1.0 / members.len() as f64);
                    for &m in members {
                        let dst = (fine_base + m as usize) * c;
                        for cc in 0..c {
                            out[dst + cc] += g[src + cc] * inv;
                        }
                    }
                }
                PoolMode::Max => {
                    let am = cache.argmax.as_ref().expect("max pool cache");
                    for cc in 0..c {
                        let m = am[src + cc] as usize;
                        out[(fine_base + m) * c + cc] += g[src + cc];
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((batch * map.fine_n, c), out).expect("pool grad shape")
}

/// Pools a fine-level signal one step down the hierarchy (`stride` 2, or 4
/// to skip two levels). Mean pooling averages each neighborhood; max pooling
/// takes its per-channel maximum.
pub fn mesh_pool<T: Scalar>(
    signal: &Signal<T>,
    hier: &MeshHierarchy,
    mode: PoolMode,
    stride: usize,
) -> Result<Signal<T>, NnError> {
    let map = map_for_signal(signal, hier, stride)?;
    let (values, _) = pool_forward(&signal.values().view(), 1, &map, mode);
    Ok(Signal::from_values(map.coarse_level(), values))
}

/// Reverse-mode gradient of [`mesh_pool`]: mean scatters `upstream / |Omega|`
/// to every member, max routes to the argmax member (smallest index on ties,
/// recomputed from the cached forward input).
pub fn mesh_pool_grad<T: Scalar>(
    upstream: &Signal<T>,
    hier: &MeshHierarchy,
    mode: PoolMode,
    input: &Signal<T>,
    stride: usize,
) -> Result<Signal<T>, NnError> {
    let map = map_for_signal(input, hier, stride)?;
    if upstream.n_vertices() != hier.level(map.coarse_level()).n_vertices()
        || upstream.n_channels() != input.n_channels()
    {
        return Err(NnError::ShapeMismatch { context: "pool gradient" });
    }
    let cache = match mode {
        PoolMode::Mean => PoolCache { argmax: None },
        PoolMode::Max => pool_forward(&input.values().view(), 1, &map, mode).1,
    };
    let values = pool_backward(&upstream.values().view(), 1, &map, mode, &cache);
    Ok(Signal::from_values(input.level(), values))
}

fn map_for_signal<T: Scalar>(
    signal: &Signal<T>,
    hier: &MeshHierarchy,
    stride: usize,
) -> Result<PoolMap, NnError> {
    let hops = match stride {
        2 => 1,
        4 => 2,
        _ => {
            return Err(NnError::Hierarchy(crate::hierarchy::HierarchyError::BadStride {
                stride,
            }))
        }
    };
    if signal.level() < hops || signal.level() > hier.depth() {
        return Err(NnError::Hierarchy(crate::hierarchy::HierarchyError::LevelOutOfRange {
            level: signal.level(),
            depth: hier.depth(),
        }));
    }
    if signal.n_vertices() != hier.level(signal.level()).n_vertices() {
        return Err(NnError::LevelMismatch {
            expected: hier.level(signal.level()).n_vertices(),
            found: signal.n_vertices(),
        });
    }
    PoolMap::build(hier, signal.level() - hops, stride)
}
