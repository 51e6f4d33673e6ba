//! Parabolic space-time geometry: points, metric, balls, tubular
//! neighborhoods and grid-based volume measurement.
//!
//! The spatial domain is a flat torus (or box); time counts with parabolic
//! weight, so balls are `B_r(x) x (t - r^2, t + r^2)` and space-time has
//! dimension `m + 2`.

use crate::error::{Error, Result};
use crate::util;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::f64::consts::PI;

pub const MAX_DIM: usize = 4;

/// A point `X = (x, t)` in parabolic space-time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub x: Vec<f64>,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x: Vec<f64>, t: f64) -> Self {
        assert!(
            !x.is_empty() && x.len() <= MAX_DIM,
            "spatial dimension must be in 1..=4"
        );
        SpaceTimePoint { x, t }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn origin(m: usize) -> Self {
        SpaceTimePoint::new(vec![0.0; m], 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BallKind {
    TwoSided,
    Backward,
}

/// `P_r(X)` (two-sided) or `P^-_r(X)` (backward) parabolic ball.
#[derive(Debug, Clone)]
pub struct ParabolicBall {
    pub center: SpaceTimePoint,
    pub radius: f64,
    pub kind: BallKind,
}

impl ParabolicBall {
    pub fn two_sided(center: SpaceTimePoint, radius: f64) -> Self {
        assert!(radius > 0.0);
        ParabolicBall { center, radius, kind: BallKind::TwoSided }
    }

    pub fn backward(center: SpaceTimePoint, radius: f64) -> Self {
        assert!(radius > 0.0);
        ParabolicBall { center, radius, kind: BallKind::Backward }
    }

    /// Time interval covered by the ball.
    pub fn time_range(&self) -> (f64, f64) {
        let r2 = self.radius * self.radius;
        match self.kind {
            BallKind::TwoSided => (self.center.t - r2, self.center.t + r2),
            BallKind::Backward => (self.center.t - r2, self.center.t),
        }
    }

    pub fn contains(&self, p: &SpaceTimePoint, period: f64) -> bool {
        let (t0, t1) = self.time_range();
        let in_time = match self.kind {
            BallKind::TwoSided => p.t > t0 && p.t < t1,
            BallKind::Backward => p.t > t0 && p.t <= t1,
        };
        in_time && util::torus_dist(&p.x, &self.center.x, period) < self.radius
    }
}

/// Uniform periodic (or box) grid description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub m: usize,
    pub n_cells: usize,
    pub h: f64,
    /// Torus period per axis; `period = n_cells * h`. A value of 0 marks a
    /// plain box with no wrapping.
    pub period: f64,
}

impl GridSpec {
    pub fn torus(m: usize, n_cells: usize, h: f64) -> Self {
        assert!(h > 0.0 && m >= 1 && m <= MAX_DIM);
        GridSpec { m, n_cells, h, period: n_cells as f64 * h }
    }

    pub fn boxed(m: usize, n_cells: usize, h: f64) -> Self {
        assert!(h > 0.0 && m >= 1 && m <= MAX_DIM);
        GridSpec { m, n_cells, h, period: 0.0 }
    }

    pub fn total_cells(&self) -> usize {
        self.n_cells.pow(self.m as u32)
    }

    /// Cell-center coordinate of a multi-index.
    pub fn cell_center(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| (i as f64 + 0.5) * self.h).collect()
    }
}

/// Parabolic distance `d(X, Y) = max(d_M(x, y), sqrt|t - s|)`.
pub fn parabolic_distance(a: &SpaceTimePoint, b: &SpaceTimePoint, period: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let ds = util::torus_dist(&a.x, &b.x, period);
    let dt = (a.t - b.t).abs().sqrt();
    Ok(ds.max(dt))
}

/// Lebesgue volume of the unit m-ball.
pub fn unit_ball_volume(m: usize) -> f64 {
    match m {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        4 => PI * PI / 2.0,
        _ => panic!("spatial dimension must be in 1..=4"),
    }
}

/// Volume of a two-sided parabolic ball: `w_m r^(m+2)` with
/// `w_m = 2 * vol(B^m_1)` (time extent is `2 r^2`).
pub fn ball_volume(r: f64, m: usize) -> f64 {
    assert!(r > 0.0);
    2.0 * unit_ball_volume(m) * r.powi(m as i32 + 2)
}

/// Grid-measured volume of the parabolic r-tubular neighborhood of a finite
/// point set. Counts space-time cells (spatial spacing `grid.h`, time spacing
/// `dt_cell`) whose center lies within parabolic distance `r` of some point.
///
/// The cell lattice is global (indices are floors of coordinate / spacing),
/// so the count is a union over per-point neighborhoods and monotone in both
/// `r` and `S`.
pub fn tubular_volume(
    points: &[SpaceTimePoint],
    r: f64,
    grid: &GridSpec,
    dt_cell: f64,
    time_range: (f64, f64),
) -> Result<f64> {
    if grid.h > r / 4.0 + 1e-15 {
        return Err(Error::GridTooCoarse { h: grid.h, r });
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    let m = grid.m;
    let h = grid.h;
    let mut cells: HashSet<[i64; MAX_DIM + 1]> = HashSet::new();
    let span = (r / h).ceil() as i64 + 1;
    let tspan = (r * r / dt_cell).ceil() as i64 + 1;
    let mut dims = [0usize; MAX_DIM];
    let side = (2 * span + 1) as usize;
    for d in dims.iter_mut().take(m) {
        *d = side;
    }
    let mut idx = [0usize; MAX_DIM];
    for p in points {
        assert_eq!(p.dim(), m, "point dimension mismatch");
        let base: Vec<i64> = p.x.iter().map(|&c| (c / h).floor() as i64).collect();
        let tbase = (p.t / dt_cell).floor() as i64;
        for flat in 0..side.pow(m as u32) {
            util::decode_index(flat, &dims[..m], &mut idx[..m]);
            let mut cx = [0.0f64; MAX_DIM];
            let mut key = [0i64; MAX_DIM + 1];
            for k in 0..m {
                let ci = base[k] + idx[k] as i64 - span;
                key[k] = if grid.period > 0.0 {
                    ci.rem_euclid(grid.n_cells as i64)
                } else {
                    ci
                };
                cx[k] = (ci as f64 + 0.5) * h;
            }
            let ds = util::torus_dist(&cx[..m], &p.x, grid.period);
            if ds >= r {
                continue;
            }
            for dt_i in -tspan..=tspan {
                let ti = tbase + dt_i;
                let tc = (ti as f64 + 0.5) * dt_cell;
                if tc < time_range.0 || tc > time_range.1 {
                    continue;
                }
                if (tc - p.t).abs().sqrt() >= r {
                    continue;
                }
                if ds.max((tc - p.t).abs().sqrt()) < r {
                    key[MAX_DIM] = ti;
                    cells.insert(key);
                }
            }
        }
    }
    Ok(cells.len() as f64 * h.powi(m as i32) * dt_cell)
}
