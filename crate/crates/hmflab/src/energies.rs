//! Weighted energy functionals: scale-invariant Dirichlet energy,
//! time-derivative energy, Struwe annulus energies, and the Gaussian
//! scale-energy diagnostic.

use crate::error::{Error, Result};
use crate::geometry::SpaceTimePoint;
use crate::solver::FlowTrajectory;
use crate::util;
use rayon::prelude::*;
use serde::Serialize;

/// One evaluated energy with its quadrature provenance.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub x: Vec<f64>,
    pub t: f64,
    pub r1: f64,
    pub r2: f64,
    pub value: f64,
    pub quadrature_cells: usize,
    pub masked_cells: usize,
    pub inner_cutoff: Option<f64>,
}

/// Quadrature resolution: cells per spatial axis across a region's diameter
/// and time cells per sub-interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadParams {
    pub n_space: usize,
    pub n_time: usize,
}

impl Default for QuadParams {
    fn default() -> Self {
        QuadParams { n_space: 32, n_time: 8 }
    }
}

impl QuadParams {
    pub fn refined(&self, k: usize) -> Self {
        QuadParams { n_space: self.n_space * k, n_time: self.n_time * k }
    }
}

/// Midpoint sum of `f` over cell centers `y` with `r_in < |y| <= r_out`
/// inside the cube [-r_out, r_out]^m split into `n` cells per axis.
/// Returns (sum, included cells, masked cells); multiply by cell volume
/// outside. Parallel over the first axis with a fixed reduction order.
fn shell_sum<F>(m: usize, r_out: f64, r_in: f64, n: usize, f: F) -> (f64, usize, usize)
where
    F: Fn(&[f64]) -> Option<f64> + Sync,
{
    let h = 2.0 * r_out / n as f64;
    let rows: Vec<(f64, usize, usize)> = (0..n)
        .into_par_iter()
        .map(|i0| {
            let mut terms = Vec::new();
            let mut cells = 0usize;
            let mut masked = 0usize;
            let mut y = vec![0.0; m];
            y[0] = -r_out + (i0 as f64 + 0.5) * h;
            let inner = n.pow((m - 1) as u32);
            let mut idx = vec![0usize; m.saturating_sub(1)];
            for flat in 0..inner {
                if m > 1 {
                    util::decode_index(flat, &vec![n; m - 1], &mut idx);
                    for k in 1..m {
                        y[k] = -r_out + (idx[k - 1] as f64 + 0.5) * h;
                    }
                }
                let rn = util::norm(&y);
                if rn > r_out || rn <= r_in {
                    continue;
                }
                cells += 1;
                match f(&y) {
                    Some(v) => terms.push(v),
                    None => masked += 1,
                }
            }
            (util::pairwise_sum(&terms), cells, masked)
        })
        .collect();
    let sums: Vec<f64> = rows.iter().map(|r| r.0).collect();
    (
        util::pairwise_sum(&sums),
        rows.iter().map(|r| r.1).sum(),
        rows.iter().map(|r| r.2).sum(),
    )
}

fn check_space(traj: &FlowTrajectory, r: f64) -> Result<()> {
    let period = traj.period();
    if period > 0.0 && r > period / 4.0 {
        return Err(Error::RangeViolation(format!(
            "radius {r} exceeds period/4 = {}",
            period / 4.0
        )));
    }
    Ok(())
}

fn check_time(traj: &FlowTrajectory, lo: f64, hi: f64) -> Result<()> {
    let (a, b) = traj.time_range();
    if lo < a - 1e-12 || hi > b + 1e-12 {
        return Err(Error::RangeViolation(format!(
            "time span ({lo}, {hi}) exceeds recorded range ({a}, {b})"
        )));
    }
    Ok(())
}

/// Scale-invariant Dirichlet energy `(1/r^m) \int_{P_r(X)} |grad u|^2`.
pub fn dirichlet_scale_invariant(
    traj: &FlowTrajectory,
    center: &SpaceTimePoint,
    r: f64,
    params: &QuadParams,
) -> Result<EnergyReport> {
    let m = traj.m();
    check_space(traj, r)?;
    check_time(traj, center.t - r * r, center.t + r * r)?;
    let n_t = 2 * params.n_time;
    let dt_cell = 2.0 * r * r / n_t as f64;
    let h = 2.0 * r / params.n_space as f64;
    let cell_vol = h.powi(m as i32) * dt_cell;
    let mut slice_sums = Vec::with_capacity(n_t);
    let mut cells = 0usize;
    let mut masked = 0usize;
    for j in 0..n_t {
        let t = center.t - r * r + (j as f64 + 0.5) * dt_cell;
        let (s, c, mk) = shell_sum(m, r, 0.0, params.n_space, |y| {
            let mut x = vec![0.0; m];
            for k in 0..m {
                x[k] = center.x[k] + y[k];
            }
            traj.grad_norm_sq(&x, t)
        });
        slice_sums.push(s);
        cells += c;
        masked += mk;
    }
    Ok(EnergyReport {
        x: center.x.clone(),
        t: center.t,
        r1: r,
        r2: 0.0,
        value: util::pairwise_sum(&slice_sums) * cell_vol / r.powi(m as i32),
        quadrature_cells: cells,
        masked_cells: masked,
        inner_cutoff: None,
    })
}

/// `(1/r^{m-2}) \int_{P_r(X)} |du/dt|^2`.
pub fn time_derivative_energy(
    traj: &FlowTrajectory,
    center: &SpaceTimePoint,
    r: f64,
    params: &QuadParams,
) -> Result<EnergyReport> {
    let m = traj.m();
    let vd = traj.vdim();
    check_space(traj, r)?;
    check_time(traj, center.t - r * r, center.t + r * r)?;
    let n_t = 2 * params.n_time;
    let dt_cell = 2.0 * r * r / n_t as f64;
    let h = 2.0 * r / params.n_space as f64;
    let cell_vol = h.powi(m as i32) * dt_cell;
    let mut slice_sums = Vec::with_capacity(n_t);
    let mut cells = 0usize;
    let mut masked = 0usize;
    for j in 0..n_t {
        let t = center.t - r * r + (j as f64 + 0.5) * dt_cell;
        let (s, c, mk) = shell_sum(m, r, 0.0, params.n_space, |y| {
            let mut x = vec![0.0; m];
            for k in 0..m {
                x[k] = center.x[k] + y[k];
            }
            let mut du = vec![0.0; vd];
            match traj.dt_deriv(&x, t, &mut du) {
                crate::analytic::Sample::Valid => {
                    Some(du.iter().map(|v| v * v).sum())
                }
                crate::analytic::Sample::Masked => None,
            }
        });
        slice_sums.push(s);
        cells += c;
        masked += mk;
    }
    Ok(EnergyReport {
        x: center.x.clone(),
        t: center.t,
        r1: r,
        r2: 0.0,
        value: util::pairwise_sum(&slice_sums) * cell_vol
            / r.powi(m as i32 - 2),
        quadrature_cells: cells,
        masked_cells: masked,
        inner_cutoff: None,
    })
}

/// Selfsimilarity defect integrand |(x-x0).grad u + 2(t-t0) du/dt|^2 times
/// the exact weight, at offset `y` and time offset `tau` from the center.
fn struwe_integrand(
    traj: &FlowTrajectory,
    center: &SpaceTimePoint,
    y: &[f64],
    tau: f64,
) -> Option<f64> {
    let m = traj.m();
    let vd = traj.vdim();
    let mut x = vec![0.0; m];
    for k in 0..m {
        x[k] = center.x[k] + y[k];
    }
    let t = center.t + tau;
    let mut g = vec![0.0; m * vd];
    let mut du = vec![0.0; vd];
    if traj.grad(&x, t, &mut g) == crate::analytic::Sample::Masked
        || traj.dt_deriv(&x, t, &mut du) == crate::analytic::Sample::Masked
    {
        return None;
    }
    let mut defect2 = 0.0;
    for a in 0..vd {
        let mut d = 2.0 * tau * du[a];
        for i in 0..m {
            d += y[i] * g[i * vd + a];
        }
        defect2 += d * d;
    }
    let at = tau.abs();
    let r2y = util::dot(y, y);
    Some(defect2 * (-r2y / (4.0 * at)).exp() * at.powf(-((m + 2) as f64) / 2.0))
}

/// Quadrature over one elementary backward annulus P^-_rho \ P^-_rho_in,
/// rho_in in [rho/2, rho). Region A is the deep-time slab
/// B_rho x (t0-rho^2, t0-rho_in^2]; region B is the spatial shell over
/// (t0-rho_in^2, t0], with its time axis split into octaves so the singular
/// weight is always evaluated where it is bounded. The final time sliver
/// (weight factor <= e^{-64}) is dropped.
fn elementary_annulus(
    traj: &FlowTrajectory,
    center: &SpaceTimePoint,
    rho: f64,
    rho_in: f64,
    params: &QuadParams,
) -> (f64, usize, usize) {
    let m = traj.m();
    let h = 2.0 * rho / params.n_space as f64;
    let mut sums = Vec::new();
    let mut cells = 0usize;
    let mut masked = 0usize;
    // region A: full ball, times in (-rho^2, -rho_in^2]
    let span_a = rho * rho - rho_in * rho_in;
    let dt_a = span_a / params.n_time as f64;
    for j in 0..params.n_time {
        let tau = -rho * rho + (j as f64 + 0.5) * dt_a;
        let (s, c, mk) = shell_sum(m, rho, 0.0, params.n_space, |y| {
            struwe_integrand(traj, center, y, tau)
        });
        sums.push(s * h.powi(m as i32) * dt_a);
        cells += c;
        masked += mk;
    }
    // region B: spatial shell, octave time decomposition of (-rho_in^2, 0]
    const OCTAVES: usize = 8;
    for oct in 0..OCTAVES {
        let hi = rho_in * rho_in * 0.5f64.powi(oct as i32);
        let lo = hi * 0.5;
        let dt_b = (hi - lo) / params.n_time as f64;
        for j in 0..params.n_time {
            let tau = -hi + (j as f64 + 0.5) * dt_b;
            let (s, c, mk) = shell_sum(m, rho, rho_in, params.n_space, |y| {
                struwe_integrand(traj, center, y, tau)
            });
            sums.push(s * h.powi(m as i32) * dt_b);
            cells += c;
            masked += mk;
        }
    }
    (util::pairwise_sum(&sums), cells, masked)
}

/// The (r1, r2)-Struwe energy over the backward annulus
/// P^-_{r1}(X0) \ P^-_{r2}(X0), decomposed into elementary half-scale
/// annuli so that quadratures at matching break points add exactly.
pub fn struwe_annulus(
    traj: &FlowTrajectory,
    center: &SpaceTimePoint,
    r1: f64,
    r2: f64,
    params: &QuadParams,
) -> Result<EnergyReport> {
    if !(r1 > r2 && r2 > 0.0) {
        return Err(Error::BadScales { r1, r2 });
    }
    check_space(traj, r1)?;
    check_time(traj, center.t - r1 * r1, center.t)?;
    let mut sums = Vec::new();
    let mut cells = 0usize;
    let mut masked = 0usize;
    let mut rho = r1;
    while rho > r2 * (1.0 + 1e-12) {
        let rho_in = (rho / 2.0).max(r2);
        let (s, c, mk) = elementary_annulus(traj, center, rho, rho_in, params);
        sums.push(s);
        cells += c;
        masked += mk;
        rho = rho_in;
    }
    Ok(EnergyReport {
        x: center.x.clone(),
        t: center.t,
        r1,
        r2,
        value: util::pairwise_sum(&sums),
        quadrature_cells: cells,
        masked_cells: masked,
        inner_cutoff: None,
    })
}

/// Total Struwe energy over P^-_{2R}(X0) truncated at inner radius
/// `rho_min`; the empirical Lambda_2 estimate.
pub fn struwe_total(
    traj: &FlowTrajectory,
    center: &SpaceTimePoint,
    big_r: f64,
    rho_min: f64,
    params: &QuadParams,
) -> Result<EnergyReport> {
    let mut rep = struwe_annulus(traj, center, 2.0 * big_r, rho_min, params)?;
    rep.inner_cutoff = Some(rho_min);
    Ok(rep)
}

/// Gaussian scale energy at one backward slice:
/// `r^2 (4 pi r^2)^{-m/2} \int_{t = t0 - r^2} |grad u|^2 e^{-|x-x0|^2/4r^2}`.
/// The spatial integral is truncated at |x - x0| = 8r (weight <= e^{-16}).
pub fn gaussian_scale_energy(
    traj: &FlowTrajectory,
    center: &SpaceTimePoint,
    r: f64,
    params: &QuadParams,
) -> Result<EnergyReport> {
    let m = traj.m();
    let period = traj.period();
    // truncate the Gaussian tail; on a torus the cutoff also respects the
    // quarter-period bound (weight at 4r is already e^{-4})
    let cutoff = if period > 0.0 { (8.0 * r).min(period / 4.0) } else { 8.0 * r };
    if cutoff < 2.0 * r {
        return Err(Error::RangeViolation(format!(
            "gaussian cutoff {cutoff} below 2r for r = {r}"
        )));
    }
    check_space(traj, cutoff)?;
    check_time(traj, center.t - r * r, center.t - r * r)?;
    let t = center.t - r * r;
    let n = params.n_space * 8;
    let h = 2.0 * cutoff / n as f64;
    let (s, c, mk) = shell_sum(m, cutoff, 0.0, n, |y| {
        let mut x = vec![0.0; m];
        for k in 0..m {
            x[k] = center.x[k] + y[k];
        }
        traj.grad_norm_sq(&x, t)
            .map(|g| g * (-util::dot(y, y) / (4.0 * r * r)).exp())
    });
    let norm = r * r
        * (4.0 * std::f64::consts::PI * r * r).powf(-(m as f64) / 2.0);
    Ok(EnergyReport {
        x: center.x.clone(),
        t: center.t,
        r1: r,
        r2: 0.0,
        value: s * h.powi(m as i32) * norm,
        quadrature_cells: c,
        masked_cells: mk,
        inner_cutoff: None,
    })
}
