//! Finite-difference harmonic map flow on a flat torus: explicit heat step
//! plus pointwise projection, trajectory recording, and the uniform
//! evaluation interface shared by simulated and analytic trajectories.

use crate::analytic::{AnalyticField, Sample};
use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::target;
use crate::util;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use std::io::{Read, Write};

/// One recorded time slice of the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub grid: GridSpec,
    pub t: f64,
    pub vdim: usize,
    /// `n_cells^m * vdim` values in row-major cell order.
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn from_fn(
        grid: GridSpec,
        vdim: usize,
        t: f64,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        let total = grid.total_cells();
        let mut values = vec![0.0; total * vdim];
        let dims = vec![grid.n_cells; grid.m];
        let mut idx = vec![0usize; grid.m];
        for flat in 0..total {
            util::decode_index(flat, &dims, &mut idx);
            let x = grid.cell_center(&idx);
            let mut v = f(&x);
            target::project(&mut v)
                .map_err(|_| Error::ProjectionBreakdown { cell: flat, norm: util::norm(&v) })?;
            values[flat * vdim..(flat + 1) * vdim].copy_from_slice(&v);
        }
        Ok(Snapshot { grid, t, vdim, values })
    }

    pub fn cell(&self, flat: usize) -> &[f64] {
        &self.values[flat * self.vdim..(flat + 1) * self.vdim]
    }

    /// Discrete Dirichlet energy `sum_cells |grad_h u|^2 h^m` using forward
    /// differences on the periodic grid; fixed-order pairwise reduce.
    pub fn dirichlet_energy(&self) -> f64 {
        let g = &self.grid;
        let nc = g.n_cells;
        let terms: Vec<f64> = (0..g.total_cells())
            .map(|flat| {
                let mut idx = vec![0usize; g.m];
                util::decode_index(flat, &vec![nc; g.m], &mut idx);
                let u = self.cell(flat);
                let mut s = 0.0;
                for k in 0..g.m {
                    let mut jp = idx.clone();
                    jp[k] = (idx[k] + 1) % nc;
                    let up = self.cell(encode(&jp, nc));
                    for a in 0..self.vdim {
                        let d = (up[a] - u[a]) / g.h;
                        s += d * d;
                    }
                }
                s * g.h.powi(g.m as i32)
            })
            .collect();
        util::pairwise_sum(&terms)
    }

    /// Max discrete gradient norm (forward differences); the operational
    /// blowup monitor compares this against `1/h`.
    pub fn max_gradient(&self) -> f64 {
        let g = &self.grid;
        let nc = g.n_cells;
        (0..g.total_cells())
            .map(|flat| {
                let mut idx = vec![0usize; g.m];
                util::decode_index(flat, &vec![nc; g.m], &mut idx);
                let u = self.cell(flat);
                let mut s = 0.0;
                for k in 0..g.m {
                    let mut jp = idx.clone();
                    jp[k] = (idx[k] + 1) % nc;
                    let up = self.cell(encode(&jp, nc));
                    for a in 0..self.vdim {
                        let d = (up[a] - u[a]) / g.h;
                        s += d * d;
                    }
                }
                s.sqrt()
            })
            .fold(0.0f64, f64::max)
    }
}

fn encode(idx: &[usize], nc: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * nc + i)
}

/// CFL-stable time step `sigma h^2 / (2m)`.
pub fn cfl_dt(h: f64, m: usize, sigma: f64) -> f64 {
    assert!(sigma > 0.0 && sigma <= 0.5, "safety factor must be in (0, 1/2]");
    sigma * h * h / (2.0 * m as f64)
}

/// One explicit projected Euler step `v = u + dt Lap_h u`, then pointwise
/// projection. The stencil update is data-parallel over cells; the result
/// is independent of thread count.
pub fn step(s: &Snapshot, dt: f64) -> Result<Snapshot> {
    let g = s.grid.clone();
    let nc = g.n_cells;
    let m = g.m;
    let vd = s.vdim;
    let h2 = g.h * g.h;
    if dt > cfl_dt(g.h, m, 0.5) + 1e-15 {
        return Err(Error::Config(format!(
            "dt = {dt} exceeds the CFL bound {}",
            cfl_dt(g.h, m, 0.5)
        )));
    }
    let dims = vec![nc; m];
    let new: Vec<std::result::Result<Vec<f64>, usize>> = (0..g.total_cells())
        .into_par_iter()
        .map(|flat| {
            let mut idx = vec![0usize; m];
            util::decode_index(flat, &dims, &mut idx);
            let u = s.cell(flat);
            let mut v: Vec<f64> = u.to_vec();
            for k in 0..m {
                let mut jp = idx.clone();
                let mut jm = idx.clone();
                jp[k] = (idx[k] + 1) % nc;
                jm[k] = (idx[k] + nc - 1) % nc;
                let up = s.cell(encode(&jp, nc));
                let um = s.cell(encode(&jm, nc));
                for a in 0..vd {
                    v[a] += dt * (up[a] - 2.0 * u[a] + um[a]) / h2;
                }
            }
            match target::project(&mut v) {
                Ok(()) => Ok(v),
                Err(_) => Err(flat),
            }
        })
        .collect();
    let mut values = vec![0.0; g.total_cells() * vd];
    for (flat, r) in new.into_iter().enumerate() {
        match r {
            Ok(v) => values[flat * vd..(flat + 1) * vd].copy_from_slice(&v),
            Err(cell) => {
                return Err(Error::ProjectionBreakdown { cell, norm: 0.0 });
            }
        }
    }
    Ok(Snapshot { grid: g, t: s.t + dt, vdim: vd, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupInfo {
    pub time: f64,
    pub cell: Option<usize>,
    pub reason: String,
}

/// Simulated trajectory data: uniformly spaced recorded snapshots.
#[derive(Debug, Clone)]
pub struct SimTrajectory {
    pub snapshots: Vec<Snapshot>,
    pub dt: f64,
    pub record_every: usize,
    pub blowup: Option<BlowupInfo>,
}

/// A flow trajectory: either recorded snapshots of a simulation or a lazily
/// evaluated exact field.
#[derive(Debug, Clone)]
pub enum FlowTrajectory {
    Simulated(SimTrajectory),
    Analytic {
        field: AnalyticField,
        /// Probe spacing used by finite-difference consumers (regularity
        /// scale sup-probing); analytic fields have no intrinsic grid.
        probe_h: f64,
        period: f64,
    },
}

/// Run the flow from `u0` until `t_end`, recording every `record_every`-th
/// snapshot. Projection breakdown or a gradient passing `2/h` truncates the
/// run and flags it as blown up.
pub fn run(u0: Snapshot, dt: f64, t_end: f64, record_every: usize) -> Result<FlowTrajectory> {
    assert!(t_end > 0.0 && record_every >= 1);
    let h = u0.grid.h;
    let steps = (t_end / dt).round() as usize;
    let mut snapshots = vec![u0.clone()];
    let mut cur = u0;
    let mut blowup = None;
    for k in 1..=steps {
        match step(&cur, dt) {
            Ok(next) => cur = next,
            Err(Error::ProjectionBreakdown { cell, .. }) => {
                blowup = Some(BlowupInfo {
                    time: cur.t + dt,
                    cell: Some(cell),
                    reason: "projection breakdown".into(),
                });
                break;
            }
            Err(e) => return Err(e),
        }
        if k % record_every == 0 {
            if cur.max_gradient() > 2.0 / h {
                blowup = Some(BlowupInfo {
                    time: cur.t,
                    cell: None,
                    reason: "gradient exceeded 2/h".into(),
                });
                snapshots.push(cur.clone());
                break;
            }
            snapshots.push(cur.clone());
        }
    }
    Ok(FlowTrajectory::Simulated(SimTrajectory {
        snapshots,
        dt: dt * record_every as f64,
        record_every,
        blowup,
    }))
}

/// Analytic trajectory kinds exposed to configuration.
pub fn make_analytic(field: AnalyticField, probe_h: f64, period: f64) -> FlowTrajectory {
    FlowTrajectory::Analytic { field, probe_h, period }
}

impl FlowTrajectory {
    pub fn m(&self) -> usize {
        match self {
            FlowTrajectory::Simulated(s) => s.snapshots[0].grid.m,
            FlowTrajectory::Analytic { field, .. } => field.m(),
        }
    }

    pub fn vdim(&self) -> usize {
        match self {
            FlowTrajectory::Simulated(s) => s.snapshots[0].vdim,
            FlowTrajectory::Analytic { field, .. } => field.vdim(),
        }
    }

    pub fn period(&self) -> f64 {
        match self {
            FlowTrajectory::Simulated(s) => s.snapshots[0].grid.period,
            FlowTrajectory::Analytic { period, .. } => *period,
        }
    }

    /// Recorded time range; analytic trajectories are unbounded.
    pub fn time_range(&self) -> (f64, f64) {
        match self {
            FlowTrajectory::Simulated(s) => {
                (s.snapshots[0].t, s.snapshots.last().unwrap().t)
            }
            FlowTrajectory::Analytic { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Native spacing for finite-difference consumers.
    pub fn probe_h(&self) -> f64 {
        match self {
            FlowTrajectory::Simulated(s) => s.snapshots[0].grid.h,
            FlowTrajectory::Analytic { probe_h, .. } => *probe_h,
        }
    }

    pub fn blowup(&self) -> Option<&BlowupInfo> {
        match self {
            FlowTrajectory::Simulated(s) => s.blowup.as_ref(),
            FlowTrajectory::Analytic { .. } => None,
        }
    }

    /// Evaluate `u(x, t)`: exact for analytic fields, multilinear-in-space /
    /// linear-in-time interpolation (then reprojection) for simulated data.
    pub fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Sample {
        match self {
            FlowTrajectory::Analytic { field, .. } => field.eval(x, t, out),
            FlowTrajectory::Simulated(s) => {
                let (t0, t1) = self.time_range();
                if t < t0 - 1e-12 || t > t1 + 1e-12 {
                    return Sample::Masked;
                }
                let pos = ((t - t0) / s.dt).clamp(0.0, (s.snapshots.len() - 1) as f64);
                let i0 = (pos.floor() as usize).min(s.snapshots.len() - 1);
                let i1 = (i0 + 1).min(s.snapshots.len() - 1);
                let w = pos - i0 as f64;
                let vd = s.snapshots[0].vdim;
                let mut a = vec![0.0; vd];
                let mut b = vec![0.0; vd];
                interp_space(&s.snapshots[i0], x, &mut a);
                if i1 != i0 && w > 0.0 {
                    interp_space(&s.snapshots[i1], x, &mut b);
                } else {
                    b.copy_from_slice(&a);
                }
                for c in 0..vd {
                    out[c] = (1.0 - w) * a[c] + w * b[c];
                }
                match target::project(out) {
                    Ok(()) => Sample::Valid,
                    Err(_) => Sample::Masked,
                }
            }
        }
    }

    /// Spatial gradient, row-major `m x vdim`. Exact for analytic fields,
    /// central differences at the native spacing for simulated data.
    pub fn grad(&self, x: &[f64], t: f64, out: &mut [f64]) -> Sample {
        match self {
            FlowTrajectory::Analytic { field, .. } => field.grad(x, t, out),
            FlowTrajectory::Simulated(_) => {
                let m = self.m();
                let vd = self.vdim();
                let h = self.probe_h();
                let mut up = vec![0.0; vd];
                let mut um = vec![0.0; vd];
                let mut xp = x.to_vec();
                for i in 0..m {
                    xp.copy_from_slice(x);
                    xp[i] = x[i] + h;
                    if self.eval(&xp, t, &mut up) == Sample::Masked {
                        return Sample::Masked;
                    }
                    xp[i] = x[i] - h;
                    if self.eval(&xp, t, &mut um) == Sample::Masked {
                        return Sample::Masked;
                    }
                    for a in 0..vd {
                        out[i * vd + a] = (up[a] - um[a]) / (2.0 * h);
                    }
                }
                Sample::Valid
            }
        }
    }

    /// Time derivative; forward/central differences at the recording step
    /// for simulated data.
    pub fn dt_deriv(&self, x: &[f64], t: f64, out: &mut [f64]) -> Sample {
        match self {
            FlowTrajectory::Analytic { field, .. } => field.dt(x, t, out),
            FlowTrajectory::Simulated(s) => {
                let vd = self.vdim();
                let dtr = s.dt;
                let (t0, t1) = self.time_range();
                let (ta, tb) = if t - dtr >= t0 && t + dtr <= t1 {
                    (t - dtr, t + dtr)
                } else if t + dtr <= t1 {
                    (t, t + dtr)
                } else if t - dtr >= t0 {
                    (t - dtr, t)
                } else {
                    return Sample::Masked;
                };
                let mut ua = vec![0.0; vd];
                let mut ub = vec![0.0; vd];
                if self.eval(x, ta, &mut ua) == Sample::Masked
                    || self.eval(x, tb, &mut ub) == Sample::Masked
                {
                    return Sample::Masked;
                }
                for a in 0..vd {
                    out[a] = (ub[a] - ua[a]) / (tb - ta);
                }
                Sample::Valid
            }
        }
    }

    /// `|grad u|^2`: closed form for analytic fields, squared-norm of the
    /// finite-difference gradient otherwise. `None` marks masked points.
    pub fn grad_norm_sq(&self, x: &[f64], t: f64) -> Option<f64> {
        match self {
            FlowTrajectory::Analytic { field, .. } => field.grad_norm_sq(x, t),
            FlowTrajectory::Simulated(_) => {
                let mut g = vec![0.0; self.m() * self.vdim()];
                match self.grad(x, t, &mut g) {
                    Sample::Valid => Some(g.iter().map(|v| v * v).sum()),
                    Sample::Masked => None,
                }
            }
        }
    }

    pub fn hess_norm_sq(&self, x: &[f64], t: f64) -> Option<f64> {
        match self {
            FlowTrajectory::Analytic { field, .. } => field.hess_norm_sq(x, t),
            FlowTrajectory::Simulated(_) => {
                let m = self.m();
                let vd = self.vdim();
                let h = self.probe_h();
                let mut gp = vec![0.0; m * vd];
                let mut gm = vec![0.0; m * vd];
                let mut sum = 0.0;
                let mut xp = x.to_vec();
                for i in 0..m {
                    xp.copy_from_slice(x);
                    xp[i] = x[i] + h;
                    if self.grad(&xp, t, &mut gp) == Sample::Masked {
                        return None;
                    }
                    xp[i] = x[i] - h;
                    if self.grad(&xp, t, &mut gm) == Sample::Masked {
                        return None;
                    }
                    for a in 0..m * vd {
                        let d = (gp[a] - gm[a]) / (2.0 * h);
                        sum += d * d;
                    }
                }
                Some(sum)
            }
        }
    }
}

fn interp_space(s: &Snapshot, x: &[f64], out: &mut [f64]) {
    let g = &s.grid;
    let m = g.m;
    let nc = g.n_cells as i64;
    let vd = s.vdim;
    out.iter_mut().for_each(|c| *c = 0.0);
    let mut base = [0i64; 4];
    let mut frac = [0.0f64; 4];
    for k in 0..m {
        let p = x[k] / g.h - 0.5;
        base[k] = p.floor() as i64;
        frac[k] = p - base[k] as f64;
    }
    for corner in 0..(1usize << m) {
        let mut w = 1.0;
        let mut idx = vec![0usize; m];
        for k in 0..m {
            let up = (corner >> k) & 1 == 1;
            w *= if up { frac[k] } else { 1.0 - frac[k] };
            let i = base[k] + if up { 1 } else { 0 };
            idx[k] = i.rem_euclid(nc) as usize;
        }
        if w == 0.0 {
            continue;
        }
        let u = s.cell(encode(&idx, g.n_cells));
        for a in 0..vd {
            out[a] += w * u[a];
        }
    }
}

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"HMF1";

/// Write the binary snapshot format: magic "HMF1", u32 m, u32 n, u32 n_cells,
/// f64 h, f64 t, then `n_cells^m * (n+1)` little-endian f64 values.
pub fn write_snapshot<W: Write>(w: &mut W, s: &Snapshot) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_u32::<LittleEndian>(s.grid.m as u32)?;
    w.write_u32::<LittleEndian>((s.vdim - 1) as u32)?;
    w.write_u32::<LittleEndian>(s.grid.n_cells as u32)?;
    w.write_f64::<LittleEndian>(s.grid.h)?;
    w.write_f64::<LittleEndian>(s.t)?;
    for v in &s.values {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Snapshot> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Config("bad snapshot magic".into()));
    }
    let m = r.read_u32::<LittleEndian>()? as usize;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let n_cells = r.read_u32::<LittleEndian>()? as usize;
    let h = r.read_f64::<LittleEndian>()?;
    let t = r.read_f64::<LittleEndian>()?;
    let grid = GridSpec::torus(m, n_cells, h);
    let total = grid.total_cells() * (n + 1);
    let mut values = vec![0.0; total];
    for v in values.iter_mut() {
        *v = r.read_f64::<LittleEndian>()?;
    }
    Ok(Snapshot { grid, t, vdim: n + 1, values })
}
