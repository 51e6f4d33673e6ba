//! Target-manifold kernels for round spheres `S^n` embedded in `R^(n+1)`:
//! nearest-point projection, the sphere tension nonlinearity `|grad u|^2 u`,
//! and a discrete harmonicity residual for certifying static test fields.

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::util;

pub const PROJECTION_FLOOR: f64 = 1e-14;

/// Round sphere `S^n`, values in `R^(n+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetSphere {
    pub n: usize,
}

impl TargetSphere {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        TargetSphere { n }
    }

    pub fn ambient_dim(&self) -> usize {
        self.n + 1
    }
}

/// Nearest-point retraction `v -> v/|v|`. Fails (solver breakdown) when the
/// input is numerically zero.
pub fn project(v: &mut [f64]) -> Result<()> {
    let norm = util::norm(v);
    if norm < PROJECTION_FLOOR {
        return Err(Error::ProjectionBreakdown { cell: usize::MAX, norm });
    }
    for c in v.iter_mut() {
        *c /= norm;
    }
    Ok(())
}

/// Sphere second-fundamental-form term `A(u)(grad u, grad u) = |grad u|^2 u`.
/// `grad` is row-major `m x (n+1)`.
pub fn tension_nonlinearity(u: &[f64], grad: &[f64], out: &mut [f64]) {
    let g2: f64 = grad.iter().map(|g| g * g).sum();
    for (o, &ua) in out.iter_mut().zip(u) {
        *o = g2 * ua;
    }
}

/// Pointwise norm of the discrete tension field `Lap_h u + |grad_h u|^2 u`
/// on a periodic grid snapshot. Near zero for discretizations of smooth
/// harmonic maps away from singularities.
pub fn harmonic_residual(values: &[f64], grid: &GridSpec, vdim: usize) -> Vec<f64> {
    let m = grid.m;
    let nc = grid.n_cells;
    let h = grid.h;
    let total = grid.total_cells();
    assert_eq!(values.len(), total * vdim);
    let mut out = vec![0.0; total];
    let mut idx = vec![0usize; m];
    let dims = vec![nc; m];
    let mut lap = vec![0.0; vdim];
    let mut grad = vec![0.0; m * vdim];
    for flat in 0..total {
        util::decode_index(flat, &dims, &mut idx);
        let u = &values[flat * vdim..(flat + 1) * vdim];
        lap.iter_mut().for_each(|x| *x = 0.0);
        for k in 0..m {
            let mut ip = idx.clone();
            let mut im = idx.clone();
            ip[k] = (idx[k] + 1) % nc;
            im[k] = (idx[k] + nc - 1) % nc;
            let fp = encode(&ip, nc);
            let fm = encode(&im, nc);
            let up = &values[fp * vdim..(fp + 1) * vdim];
            let um = &values[fm * vdim..(fm + 1) * vdim];
            for a in 0..vdim {
                lap[a] += (up[a] - 2.0 * u[a] + um[a]) / (h * h);
                grad[k * vdim + a] = (up[a] - um[a]) / (2.0 * h);
            }
        }
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        let mut r2 = 0.0;
        for a in 0..vdim {
            let r = lap[a] + g2 * u[a];
            r2 += r * r;
        }
        out[flat] = r2.sqrt();
    }
    out
}

fn encode(idx: &[usize], nc: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * nc + i)
}
