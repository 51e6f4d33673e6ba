//! Parabolic rescaling onto a fixed reference window over P_1(0) and the
//! L² comparison used by strata membership and best-fit search.

use crate::error::{Error, Result};
use crate::geometry::SpaceTimePoint;
use crate::solver::FlowTrajectory;
use crate::util;

/// Per-sample validity on the window grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleStatus {
    /// Inside B_1(0) x (-1,1) and evaluated.
    Valid,
    /// Inside the domain but the trajectory is singular/undefined there.
    Masked,
    /// Tensor-grid node outside the unit ball; not part of the domain.
    Out,
}

/// The fixed sample grid: midpoint tensor cells over [-1,1]^m x (-1,1).
/// Odd counts put a sample exactly at the window center.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowGrid {
    pub m: usize,
    pub vdim: usize,
    pub w_cells: usize,
    pub w_t: usize,
}

impl WindowGrid {
    pub fn new(m: usize, vdim: usize, w_cells: usize, w_t: usize) -> Self {
        assert!(m >= 1 && m <= 4 && w_cells >= 3 && w_t >= 3);
        WindowGrid { m, vdim, w_cells, w_t }
    }

    pub fn default_for(m: usize, vdim: usize) -> Self {
        WindowGrid::new(m, vdim, 17, 17)
    }

    pub fn n_space(&self) -> usize {
        self.w_cells.pow(self.m as u32)
    }

    pub fn n_samples(&self) -> usize {
        self.n_space() * self.w_t
    }

    /// Spatial cell-center coordinate for axis index `k`.
    pub fn coord(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * 2.0 / self.w_cells as f64 - 1.0
    }

    pub fn time(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * 2.0 / self.w_t as f64 - 1.0
    }

    /// Space-time volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        (2.0 / self.w_cells as f64).powi(self.m as i32) * 2.0 / self.w_t as f64
    }

    /// Decode a flat sample index into (spatial point, time); row-major with
    /// time slowest.
    pub fn node(&self, flat: usize, x: &mut [f64]) -> f64 {
        let sp = flat % self.n_space();
        let tj = flat / self.n_space();
        let mut rem = sp;
        for k in (0..self.m).rev() {
            x[k] = self.coord(rem % self.w_cells);
            rem /= self.w_cells;
        }
        self.time(tj)
    }

    pub fn in_ball(x: &[f64]) -> bool {
        util::norm(x) <= 1.0
    }
}

/// A rescaled map u_{X,s} sampled on the reference grid.
#[derive(Debug, Clone)]
pub struct Window {
    pub base: SpaceTimePoint,
    pub scale: f64,
    pub grid: WindowGrid,
    pub samples: Vec<f64>,
    pub status: Vec<SampleStatus>,
}

impl Window {
    pub fn n_valid(&self) -> usize {
        self.status.iter().filter(|s| **s == SampleStatus::Valid).count()
    }

    pub fn n_domain(&self) -> usize {
        self.status.iter().filter(|s| **s != SampleStatus::Out).count()
    }
}

/// Sample the rescaled map u_{X,s}(x,t) = u(x0 + s x, t0 + s^2 t) on the
/// reference grid. Rejects windows that exceed the recorded time range,
/// wrap too far around the torus, or mask more than 5% of the domain.
pub fn sample_window(
    traj: &FlowTrajectory,
    base: &SpaceTimePoint,
    scale: f64,
    grid: &WindowGrid,
) -> Result<Window> {
    assert!(scale > 0.0);
    if grid.m != traj.m() || grid.vdim != traj.vdim() {
        return Err(Error::GridMismatch);
    }
    let period = traj.period();
    if period > 0.0 && scale > period / 4.0 {
        return Err(Error::RangeViolation(format!(
            "scale {scale} exceeds period/4 = {}",
            period / 4.0
        )));
    }
    let (t_lo, t_hi) = traj.time_range();
    let s2 = scale * scale;
    if base.t - s2 < t_lo - 1e-12 || base.t + s2 > t_hi + 1e-12 {
        return Err(Error::RangeViolation(format!(
            "window time span ({}, {}) exceeds recorded range ({t_lo}, {t_hi})",
            base.t - s2,
            base.t + s2
        )));
    }
    let n = grid.n_samples();
    let vd = grid.vdim;
    let mut samples = vec![0.0; n * vd];
    let mut status = vec![SampleStatus::Out; n];
    let mut x = vec![0.0; grid.m];
    let mut phys = vec![0.0; grid.m];
    let mut out = vec![0.0; vd];
    let mut masked = 0usize;
    let mut domain = 0usize;
    for flat in 0..n {
        let t = grid.node(flat, &mut x);
        if !WindowGrid::in_ball(&x) {
            continue;
        }
        domain += 1;
        for k in 0..grid.m {
            phys[k] = base.x[k] + scale * x[k];
        }
        match traj.eval(&phys, base.t + s2 * t, &mut out) {
            crate::analytic::Sample::Valid => {
                samples[flat * vd..(flat + 1) * vd].copy_from_slice(&out);
                status[flat] = SampleStatus::Valid;
            }
            crate::analytic::Sample::Masked => {
                status[flat] = SampleStatus::Masked;
                masked += 1;
            }
        }
    }
    if masked as f64 > 0.05 * domain as f64 {
        return Err(Error::MaskedFraction(masked as f64 / domain as f64));
    }
    Ok(Window { base: base.clone(), scale, grid: grid.clone(), samples, status })
}

/// Quadrature of |a - b|^2 over P_1(0). Cells masked in either window are
/// excluded from both the integrand and the normalization: the sum over
/// commonly valid cells is rescaled by domain/valid cell counts so that
/// distances stay comparable across mask patterns.
pub fn l2_distance_sq(a: &Window, b: &Window) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    let vd = a.grid.vdim;
    let n = a.grid.n_samples();
    let mut domain = 0usize;
    let mut valid = 0usize;
    let mut terms = Vec::with_capacity(n);
    for flat in 0..n {
        let (sa, sb) = (a.status[flat], b.status[flat]);
        if sa == SampleStatus::Out {
            continue;
        }
        domain += 1;
        if sa != SampleStatus::Valid || sb != SampleStatus::Valid {
            continue;
        }
        valid += 1;
        let mut d2 = 0.0;
        for c in 0..vd {
            let d = a.samples[flat * vd + c] - b.samples[flat * vd + c];
            d2 += d * d;
        }
        terms.push(d2);
    }
    if valid == 0 {
        return Err(Error::MaskedFraction(1.0));
    }
    let cell = a.grid.cell_volume();
    Ok(util::pairwise_sum(&terms) * cell * domain as f64 / valid as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{AnalyticField, Frame};
    use crate::geometry::GridSpec;
    use crate::solver::{self, FlowTrajectory, SimTrajectory, Snapshot};
    use proptest::prelude::*;

    fn cone_traj(m: usize) -> FlowTrajectory {
        let f = AnalyticField::static_cone(
            m,
            Frame::coordinate(&[0, 1, 2], m),
            vec![0.0; m],
            3,
        )
        .unwrap();
        solver::make_analytic(f, 1.0 / 64.0, 0.0)
    }

    fn origin(m: usize) -> SpaceTimePoint {
        SpaceTimePoint { x: vec![0.0; m], t: 0.0 }
    }

    #[test]
    fn constant_trajectory_gives_constant_window() {
        let f = AnalyticField::constant(2, vec![0.0, 0.6, 0.8]).unwrap();
        let traj = solver::make_analytic(f, 1.0 / 64.0, 0.0);
        let grid = WindowGrid::default_for(2, 3);
        let w = sample_window(
            &traj,
            &SpaceTimePoint { x: vec![0.3, -0.1], t: 0.5 },
            0.7,
            &grid,
        )
        .unwrap();
        for (flat, st) in w.status.iter().enumerate() {
            if *st == SampleStatus::Valid {
                assert!((w.samples[flat * 3 + 1] - 0.6).abs() < 1e-15);
            }
        }
        assert_eq!(w.n_valid(), w.n_domain());
    }

    #[test]
    fn cone_windows_are_scale_invariant() {
        let traj = cone_traj(3);
        let grid = WindowGrid::default_for(3, 3);
        let a = sample_window(&traj, &origin(3), 0.4, &grid).unwrap();
        let b = sample_window(&traj, &origin(3), 0.2, &grid).unwrap();
        assert_eq!(a.status, b.status);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(l2_distance_sq(&a, &b).unwrap() < 1e-25);
    }

    #[test]
    fn shrinker_windows_at_the_center_are_scale_invariant() {
        // backwardly selfsimilar field based at its singular center: windows
        // at nested scales agree exactly (forward of the center the field is
        // its limiting cone, which is 0-homogeneous and static)
        let prof = crate::profile::solve_equivariant(3, 8.0).unwrap();
        let f = AnalyticField::shrinking(
            3,
            Frame::coordinate(&[0, 1, 2], 3),
            vec![0.0; 3],
            0.0,
            prof,
        )
        .unwrap();
        let traj = solver::make_analytic(f, 1.0 / 64.0, 0.0);
        let grid = WindowGrid::default_for(3, 4);
        let a = sample_window(&traj, &origin(3), 0.4, &grid).unwrap();
        let b = sample_window(&traj, &origin(3), 0.1, &grid).unwrap();
        assert_eq!(a.status, b.status);
        assert!(l2_distance_sq(&a, &b).unwrap() < 1e-25);
    }

    #[test]
    fn cone_axis_samples_are_masked_but_under_threshold() {
        let traj = cone_traj(3);
        let grid = WindowGrid::default_for(3, 3);
        let w = sample_window(&traj, &origin(3), 0.5, &grid).unwrap();
        let masked =
            w.status.iter().filter(|s| **s == SampleStatus::Masked).count();
        // the 17-cell grid has no node on the x3-axis except via the center
        // column; either way the fraction must be small
        assert!(masked as f64 <= 0.05 * w.n_domain() as f64);
    }

    #[test]
    fn off_center_cone_window_from_grid_data_converges() {
        // simulated trajectory holding cone values; window at an off-center
        // point matches the closed form within O(h^2)
        let err_at = |nc: usize| -> f64 {
            let period = 8.0;
            let grid = GridSpec::torus(3, nc, period / nc as f64);
            let center = period / 2.0;
            let snap = |t: f64| {
                Snapshot::from_fn(grid.clone(), 3, t, |x| {
                    let y = [x[0] - center, x[1] - center, x[2] - center];
                    let r = util::norm(&y).max(1e-9);
                    vec![y[0] / r, y[1] / r, y[2] / r]
                })
                .unwrap()
            };
            let traj = FlowTrajectory::Simulated(SimTrajectory {
                snapshots: vec![snap(0.0), snap(1.0)],
                dt: 1.0,
                record_every: 1,
                blowup: None,
            });
            let wg = WindowGrid::new(3, 3, 9, 3);
            let base = SpaceTimePoint {
                x: vec![center + 1.0, center, center],
                t: 0.5,
            };
            let s = 0.1;
            let w = sample_window(&traj, &base, s, &wg).unwrap();
            let mut x = vec![0.0; 3];
            let mut worst = 0.0f64;
            for flat in 0..wg.n_samples() {
                wg.node(flat, &mut x);
                if w.status[flat] != SampleStatus::Valid {
                    continue;
                }
                let y = [1.0 + s * x[0], s * x[1], s * x[2]];
                let r = util::norm(&y);
                for c in 0..3 {
                    worst = worst.max((w.samples[flat * 3 + c] - y[c] / r).abs());
                }
            }
            worst
        };
        let coarse = err_at(64);
        let fine = err_at(128);
        assert!(coarse < 1e-2, "coarse error {coarse}");
        let rate = (coarse / fine).log2();
        assert!(rate > 1.5, "rate = {rate}");
    }

    #[test]
    fn antipodal_constants_give_sixteen() {
        let grid = WindowGrid::default_for(1, 2);
        let mk = |p: [f64; 2]| {
            let f = AnalyticField::constant(1, p.to_vec()).unwrap();
            let traj = solver::make_analytic(f, 1.0 / 64.0, 0.0);
            sample_window(&traj, &origin(1), 1.0, &grid).unwrap()
        };
        let a = mk([0.0, 1.0]);
        let b = mk([0.0, -1.0]);
        let d = l2_distance_sq(&a, &b).unwrap();
        assert!((d - 16.0).abs() < 1e-10, "d = {d}");
    }

    #[test]
    fn rejects_time_range_violation() {
        let g = GridSpec::torus(1, 8, 1.0 / 8.0);
        let s0 = Snapshot::from_fn(g, 2, 0.0, |_| vec![1.0, 0.0]).unwrap();
        let traj = FlowTrajectory::Simulated(SimTrajectory {
            snapshots: vec![s0.clone(), Snapshot { t: 0.01, ..s0 }],
            dt: 0.01,
            record_every: 1,
            blowup: None,
        });
        let grid = WindowGrid::default_for(1, 2);
        let r = sample_window(
            &traj,
            &SpaceTimePoint { x: vec![0.5], t: 0.005 },
            0.2,
            &grid,
        );
        assert!(matches!(r, Err(Error::RangeViolation(_))));
    }

    #[test]
    fn rejects_scale_beyond_quarter_period() {
        let g = GridSpec::torus(1, 8, 1.0 / 8.0);
        let s0 = Snapshot::from_fn(g, 2, 0.0, |_| vec![1.0, 0.0]).unwrap();
        let traj = FlowTrajectory::Simulated(SimTrajectory {
            snapshots: vec![s0.clone(), Snapshot { t: 1.0, ..s0 }],
            dt: 1.0,
            record_every: 1,
            blowup: None,
        });
        let grid = WindowGrid::default_for(1, 2);
        let r = sample_window(
            &traj,
            &SpaceTimePoint { x: vec![0.5], t: 0.5 },
            0.3,
            &grid,
        );
        assert!(matches!(r, Err(Error::RangeViolation(_))));
    }

    #[test]
    fn distance_invariant_under_common_rotation() {
        let traj = cone_traj(3);
        let grid = WindowGrid::default_for(3, 3);
        let a = sample_window(&traj, &origin(3), 0.4, &grid).unwrap();
        let f = AnalyticField::constant(3, vec![1.0, 0.0, 0.0]).unwrap();
        let b = sample_window(
            &solver::make_analytic(f, 1.0 / 64.0, 0.0),
            &origin(3),
            0.4,
            &grid,
        )
        .unwrap();
        let d0 = l2_distance_sq(&a, &b).unwrap();
        let rot = |w: &Window| -> Window {
            let mut w = w.clone();
            for c in w.samples.chunks_mut(3) {
                let (p, q) = (c[0], c[1]);
                c[0] = -q;
                c[1] = p;
            }
            w
        };
        let d1 = l2_distance_sq(&rot(&a), &rot(&b)).unwrap();
        assert!((d0 - d1).abs() < 1e-12);
    }

    fn random_window(seed: u64, grid: &WindowGrid) -> Window {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = grid.n_samples();
        let vd = grid.vdim;
        let mut samples = vec![0.0; n * vd];
        let mut status = vec![SampleStatus::Out; n];
        let mut x = vec![0.0; grid.m];
        for flat in 0..n {
            grid.node(flat, &mut x);
            if !WindowGrid::in_ball(&x) {
                continue;
            }
            status[flat] = SampleStatus::Valid;
            let mut v: Vec<f64> =
                (0..vd).map(|_| rng.gen_range(-1.0..1.0)).collect();
            crate::target::project(&mut v).unwrap();
            samples[flat * vd..(flat + 1) * vd].copy_from_slice(&v);
        }
        Window {
            base: SpaceTimePoint { x: vec![0.0; grid.m], t: 0.0 },
            scale: 1.0,
            grid: grid.clone(),
            samples,
            status,
        }
    }

    proptest! {
        #[test]
        fn sqrt_distances_satisfy_triangle_inequality(
            sa in 0u64..1000, sb in 0u64..1000, sc in 0u64..1000
        ) {
            let grid = WindowGrid::new(2, 3, 7, 5);
            let a = random_window(sa, &grid);
            let b = random_window(sb.wrapping_add(7000), &grid);
            let c = random_window(sc.wrapping_add(14000), &grid);
            let dab = l2_distance_sq(&a, &b).unwrap().sqrt();
            let dbc = l2_distance_sq(&b, &c).unwrap().sqrt();
            let dac = l2_distance_sq(&a, &c).unwrap().sqrt();
            prop_assert!(dac <= dab + dbc + 1e-12);
        }
    }
}
